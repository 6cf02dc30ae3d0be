//! Attribute table: CSV with an `id` column followed by binary attribute columns.

use std::collections::HashSet;
use std::path::Path;

use crate::{Error, Result};

/// Binary demographic attributes of one sample, in dataset column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRecord {
    pub sample_id: String,
    pub attributes: Vec<(String, u8)>,
}

impl AttributeRecord {
    pub fn new(sample_id: impl Into<String>, attributes: Vec<(String, u8)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, value) in &attributes {
            if !seen.insert(name.as_str()) {
                return Err(Error::config(format!("duplicate attribute name {name}")));
            }
            if *value > 1 {
                return Err(Error::config(format!(
                    "attribute {name} has non-binary value {value}"
                )));
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            attributes,
        })
    }

    pub fn get(&self, name: &str) -> Option<u8> {
        self.attributes
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|(n, _)| n.as_str())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_attributes(text: &[u8]) -> Result<Vec<AttributeRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text);
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "missing header row")),
    };
    if header.get(0) != Some("id") {
        return Err(parse_err(1, "first column must be `id`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut unique = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !unique.insert(n.as_str())) {
        return Err(parse_err(1, format!("duplicate attribute column {dup}")));
    }

    let mut ids = HashSet::new();
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != names.len() + 1 {
            return Err(parse_err(
                line,
                format!("expected {} cells, found {}", names.len() + 1, row.len()),
            ));
        }
        let id = row[0].to_owned();
        if !ids.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate id {id}")));
        }
        let attributes = names
            .iter()
            .zip(row.iter().skip(1))
            .map(|(name, cell)| match cell {
                "0" => Ok((name.clone(), 0)),
                "1" => Ok((name.clone(), 1)),
                other => Err(parse_err(
                    line,
                    format!("attribute {name} has non-binary cell `{other}`"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(AttributeRecord {
            sample_id: id,
            attributes,
        });
    }
    Ok(records)
}

pub fn format_attributes(records: &[AttributeRecord]) -> Result<Vec<u8>> {
    let names: Vec<&str> = records
        .first()
        .map_or_else(Vec::new, |r| r.names().collect());
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::config(e.to_string());
    writer
        .write_record(std::iter::once("id").chain(names.iter().copied()))
        .map_err(csv_err)?;
    for rec in records {
        if !rec.names().eq(names.iter().copied()) {
            return Err(Error::config(format!(
                "record {} does not share the dataset attribute columns",
                rec.sample_id
            )));
        }
        let cells = rec
            .attributes
            .iter()
            .map(|&(_, v)| if v == 1 { "1" } else { "0" });
        writer
            .write_record(std::iter::once(rec.sample_id.as_str()).chain(cells))
            .map_err(csv_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::config(e.to_string()))
}

pub fn read_attributes(path: &Path) -> Result<Vec<AttributeRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_attributes(&bytes)
}

pub fn write_attributes(records: &[AttributeRecord], path: &Path) -> Result<()> {
    let bytes = format_attributes(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn parses_single_row() {
        let recs = parse_attributes(b"id,dark_skin,wearing_hat\ns0,1,0\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sample_id, "s0");
        assert_eq!(recs[0].get("dark_skin"), Some(1));
        assert_eq!(recs[0].get("wearing_hat"), Some(0));
    }

    #[test]
    fn non_binary_cell_reports_line() {
        let err = parse_attributes(b"id,dark_skin\ns0,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_id_and_ragged_rows() {
        let err = parse_attributes(b"id,a\ns0,1\ns0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_attributes(b"id,a,b\ns0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn header_is_required() {
        assert!(parse_attributes(b"").is_err());
        assert!(matches!(
            parse_attributes(b"name,a\ns0,1\n").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn seeded_fifty_rows_round_trip_bytes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut text = String::from("id,dark_skin,wearing_hat,big_eyes,smiling\n");
        for i in 0..50 {
            text.push_str(&format!("s{i:03}"));
            for _ in 0..4 {
                text.push_str(if rng.random_bool(0.5) { ",1" } else { ",0" });
            }
            text.push('\n');
        }
        let recs = parse_attributes(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 50);
        assert_eq!(format_attributes(&recs).unwrap(), text.as_bytes());
    }
}
