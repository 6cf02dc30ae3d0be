//! Schedule chart as a dependency-free SVG using only `svg`, `line`,
//! `polyline` and `text` elements.

use std::fmt::Write as _;

use fairseg::homotopy::ScheduleWeights;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 400.0;

const LEFT: f64 = 60.0;
const RIGHT: f64 = 620.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 350.0;

const SERIES: [(&str, &str); 3] = [
    ("alpha (accuracy)", "#1f77b4"),
    ("beta (robustness)", "#d62728"),
    ("gamma (fairness)", "#2ca02c"),
];

fn x_of(t: usize, total: usize) -> f64 {
    if total <= 1 {
        LEFT
    } else {
        LEFT + (RIGHT - LEFT) * t as f64 / (total - 1) as f64
    }
}

fn y_of(w: f64) -> f64 {
    BOTTOM - (BOTTOM - TOP) * w
}

pub fn schedule_svg(title: &str, table: &[ScheduleWeights]) -> String {
    let total = table.len();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="14">{title}</text>"#
    )
    .unwrap();

    // Axes and ticks.
    writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>"#
    )
    .unwrap();
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(w);
        writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>"#,
            LEFT - 5.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{w:.2}</text>"#,
            LEFT - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    let last = total.saturating_sub(1);
    let mut ticks = vec![0, last / 2, last];
    ticks.dedup();
    for t in ticks {
        let x = x_of(t, total);
        writeln!(
            s,
            r#"<line x1="{x}" y1="{BOTTOM}" x2="{x}" y2="{}" stroke="black"/>"#,
            BOTTOM + 5.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{t}</text>"#,
            BOTTOM + 20.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0
    )
    .unwrap();

    for (i, (label, colour)) in SERIES.iter().enumerate() {
        let points: Vec<String> = table
            .iter()
            .enumerate()
            .map(|(t, w)| {
                let v = [w.alpha, w.beta, w.gamma][i];
                format!("{:.2},{:.2}", x_of(t, total), y_of(v))
            })
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 22.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            RIGHT + 20.0,
            RIGHT + 45.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}">{label}</text>"#,
            RIGHT + 52.0,
            ly + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
