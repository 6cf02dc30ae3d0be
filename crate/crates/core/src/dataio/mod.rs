//! Readers and writers for images, masks, attribute tables, checkpoints and
//! dataset directories, plus the in-memory tensor types they produce.

mod attributes;
mod checkpoint;
mod netpbm;
mod tensor;

use std::path::Path;

pub use attributes::{read_attributes, write_attributes, AttributeRecord};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, ArchSpec, Checkpoint, RunMeta, CHECKPOINT_VERSION,
};
pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, quantize, read_image, read_mask, write_image,
    write_mask,
};
pub use tensor::{ImageTensor, LogitMap, MaskTensor};

use crate::{Error, Result};

/// One annotated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub sample_id: String,
    pub image: ImageTensor,
    pub mask: MaskTensor,
    pub attributes: AttributeRecord,
}

impl DatasetRecord {
    pub fn new(
        sample_id: impl Into<String>,
        image: ImageTensor,
        mask: MaskTensor,
        attributes: AttributeRecord,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::Shape(format!(
                "sample {sample_id}: image {}x{} vs mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        if attributes.sample_id != sample_id {
            return Err(Error::Shape(format!(
                "attribute record {} attached to sample {sample_id}",
                attributes.sample_id
            )));
        }
        Ok(Self {
            sample_id,
            image,
            mask,
            attributes,
        })
    }
}

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";

/// Writes `images/{id}.ppm`, `masks/{id}.pgm` and `attributes.csv` under `dir`.
pub fn write_dataset_dir(dir: &Path, records: &[DatasetRecord]) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    let masks = dir.join(MASKS_DIR);
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for rec in records {
        write_image(&rec.image, &images.join(format!("{}.ppm", rec.sample_id)))?;
        write_mask(&rec.mask, &masks.join(format!("{}.pgm", rec.sample_id)))?;
    }
    let attrs: Vec<AttributeRecord> = records.iter().map(|r| r.attributes.clone()).collect();
    write_attributes(&attrs, &dir.join(ATTRIBUTES_FILE))
}

/// Loads a dataset directory in `attributes.csv` row order.
pub fn read_dataset_dir(dir: &Path, num_classes: usize) -> Result<Vec<DatasetRecord>> {
    let attrs = read_attributes(&dir.join(ATTRIBUTES_FILE))?;
    attrs
        .into_iter()
        .map(|a| {
            let id = a.sample_id.clone();
            let image = read_image(&dir.join(IMAGES_DIR).join(format!("{id}.ppm")))?;
            let mask = read_mask(&dir.join(MASKS_DIR).join(format!("{id}.pgm")), num_classes)?;
            DatasetRecord::new(id, image, mask, a)
        })
        .collect()
}
