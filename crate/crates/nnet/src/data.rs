//! Loading manifest images as labeled, normalized samples.

use flowlab::datasets::{image_to_f64, DatasetManifest, ManifestRow, Split};

use crate::input::normalize_input;
use crate::train::Sample;
use crate::Result;

/// Rows of `split` whose label is `positive` (→ 1) or `negative` (→ 0),
/// in manifest order.
pub fn class_pair_rows<'a>(
    m: &'a DatasetManifest,
    split: Split,
    positive: &str,
    negative: &str,
) -> Vec<(&'a ManifestRow, u8)> {
    m.split(split)
        .filter_map(|r| {
            if r.label == positive {
                Some((r, 1))
            } else if r.label == negative {
                Some((r, 0))
            } else {
                None
            }
        })
        .collect()
}

pub fn load_rows(m: &DatasetManifest, rows: &[(&ManifestRow, u8)]) -> Result<Vec<Sample>> {
    flowlab::par::map_slice(rows, |&(r, label)| {
        let img = m.load_image(r)?;
        Ok(Sample {
            x: normalize_input(&image_to_f64(&img))?,
            label,
        })
    })
    .into_iter()
    .collect()
}

/// Every row of one split with a fixed label, e.g. for evaluation sets
/// that hold a single class.
pub fn load_all(m: &DatasetManifest, split: Option<Split>, label: u8) -> Result<Vec<Sample>> {
    let rows: Vec<(&ManifestRow, u8)> = m
        .rows
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| (r, label))
        .collect();
    load_rows(m, &rows)
}
