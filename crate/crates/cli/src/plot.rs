//! Static SVG scatter plots of 2-D embedding dumps.

use std::fmt::Write as _;

use crate::dump::{DumpRow, Tag};
use crate::error::{CliError, CliResult};

/// Ten distinguishable class colors; classes beyond ten reuse them.
pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79"];
pub const UNLABELED: &str = "#b0b0b0";

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;

pub fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

/// Renders labeled points in their class color over unlabeled points in
/// gray. Test points are drawn as class-colored rings only when requested.
/// The output depends only on the rows, so identical dumps give identical
/// files.
pub fn render_svg(rows: &[DumpRow], include_test: bool) -> CliResult<String> {
    if let Some(r) = rows.iter().find(|r| r.embedding.len() != 2) {
        return Err(CliError::usage(format!(
            "plot needs a 2-dimensional embedding, the dump has D={}; retrain with embedding_dim = 2",
            r.embedding.len()
        )));
    }
    let shown: Vec<&DumpRow> = rows.iter().filter(|r| include_test || r.tag != Tag::Test).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in &shown {
        for a in 0..2 {
            lo[a] = lo[a].min(r.embedding[a]);
            hi[a] = hi[a].max(r.embedding[a]);
        }
    }
    if shown.is_empty() {
        lo = [-1.0; 2];
        hi = [1.0; 2];
    }
    for a in 0..2 {
        if hi[a] - lo[a] < 1e-12 {
            lo[a] -= 1.0;
            hi[a] += 1.0;
        }
    }
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - lo[0]) / (hi[0] - lo[0]) * span;
    let py = |v: f64| SIZE - MARGIN - (v - lo[1]) / (hi[1] - lo[1]) * span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<g id="unlabeled">"#);
    for r in shown.iter().filter(|r| r.tag == Tag::Unlabeled) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{UNLABELED}"/>"#,
            px(r.embedding[0]),
            py(r.embedding[1])
        );
    }
    let _ = writeln!(out, "</g>");
    if include_test {
        let _ = writeln!(out, r#"<g id="test">"#);
        for r in shown.iter().filter(|r| r.tag == Tag::Test) {
            let color = r.label.map_or(UNLABELED, class_color);
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                px(r.embedding[0]),
                py(r.embedding[1])
            );
        }
        let _ = writeln!(out, "</g>");
    }
    let _ = writeln!(out, r#"<g id="labeled">"#);
    for r in shown.iter().filter(|r| r.tag == Tag::Labeled) {
        let color = r.label.map_or(UNLABELED, class_color);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{color}" stroke="black" stroke-width="0.5"/>"#,
            px(r.embedding[0]),
            py(r.embedding[1])
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    Ok(out)
}
