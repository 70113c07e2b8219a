//! Tab-separated embedding dumps: `id  tag  label  e_1 … e_D`, one row per
//! sample, no header. Tags are `L`, `U` and `test`; unlabeled rows carry
//! label `-1`.

use std::fmt::Write as _;

use nbe_core::{Dataset, Matrix, SemiSupSplit};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Labeled,
    Unlabeled,
    Test,
}

impl Tag {
    fn as_str(self) -> &'static str {
        match self {
            Tag::Labeled => "L",
            Tag::Unlabeled => "U",
            Tag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub id: usize,
    pub tag: Tag,
    pub label: Option<usize>,
    pub embedding: Vec<f64>,
}

/// Tags every dataset row by split membership.
pub fn tags(ds: &Dataset, split: &SemiSupSplit) -> CliResult<Vec<Tag>> {
    let mut tags = vec![None; ds.len()];
    for (list, tag) in [(&split.labeled_idx, Tag::Labeled), (&split.unlabeled_idx, Tag::Unlabeled), (&split.test_idx, Tag::Test)] {
        for &i in list {
            tags[i] = Some(tag);
        }
    }
    tags.into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| CliError::usage(format!("row {i} belongs to no split list"))))
        .collect()
}

pub fn format_rows(ds: &Dataset, tags: &[Tag], embeddings: &Matrix) -> String {
    let mut out = String::new();
    for (i, &tag) in tags.iter().enumerate() {
        let label = if tag == Tag::Unlabeled { -1 } else { ds.label(i) as i64 };
        let _ = write!(out, "{i}\t{}\t{label}", tag.as_str());
        for v in embeddings.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_rows(text: &str) -> CliResult<Vec<DumpRow>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| CliError::usage(format!("dump line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad("expected id, tag, label and at least one coordinate"));
        }
        let id = fields[0].parse().map_err(|_| bad("bad id"))?;
        let tag = match fields[1] {
            "L" => Tag::Labeled,
            "U" => Tag::Unlabeled,
            "test" => Tag::Test,
            _ => return Err(bad("tag must be L, U or test")),
        };
        let label: i64 = fields[2].parse().map_err(|_| bad("bad label"))?;
        let label = if label < 0 { None } else { Some(label as usize) };
        let embedding =
            fields[3..].iter().map(|f| f.parse::<f64>().map_err(|_| bad("bad coordinate"))).collect::<CliResult<Vec<_>>>()?;
        if *width.get_or_insert(embedding.len()) != embedding.len() {
            return Err(bad("rows have different embedding widths"));
        }
        rows.push(DumpRow { id, tag, label, embedding });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_with_withheld_labels() {
        let ds = Dataset::new(Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap(), vec![0, 1, 1], 2).unwrap();
        let split = SemiSupSplit { labeled_idx: vec![0], unlabeled_idx: vec![1], test_idx: vec![2], seed: 0 };
        let emb = Matrix::from_vec(3, 2, vec![0.5, -1.0, 0.1, 0.2, 1e-300, 3.0]).unwrap();
        let text = format_rows(&ds, &tags(&ds, &split).unwrap(), &emb);
        assert_eq!(text.lines().next().unwrap(), "0\tL\t0\t0.5\t-1");
        let rows = parse_rows(&text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].label, None);
        assert_eq!(rows[2].tag, Tag::Test);
        assert_eq!(rows[2].embedding, vec![1e-300, 3.0]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_rows("0\tX\t1\t0.0\n").is_err());
        assert!(parse_rows("0\tL\t1\n").is_err());
        assert!(parse_rows("0\tL\t1\t0.0\n1\tL\t1\t0.0\t1.0\n").is_err());
    }
}
