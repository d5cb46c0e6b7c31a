//! Plain-text ground-truth and detection files.
//!
//! Both files are repeated blocks of
//!
//! ```text
//! image_id
//! n
//! x y w h field      (n lines)
//! ```
//!
//! where `field` is a difficulty tag for ground truth and a score for
//! detections. Coordinates are written with 3 decimals and scores with 6.
//! Images are written in lexicographic id order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Difficulty, GroundTruthImage};
use crate::geometry::BBox;
use crate::postprocess::Detection;

/// Write `bytes` to `path` through a temporary file in the same directory,
/// renamed into place once complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Block<'a> {
    image_id: &'a str,
    start: usize,
    rows: Vec<(usize, [f64; 4], &'a str)>,
}

fn parse_blocks<'a>(text: &'a str, path: &str) -> Result<Vec<Block<'a>>> {
    let err = |line: usize, reason: String| Error::Parse {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut blocks = Vec::new();
    let mut seen = BTreeSet::new();
    while let Some((start, id_line)) = lines.next() {
        let image_id = id_line.trim();
        if image_id.is_empty() {
            continue;
        }
        if !seen.insert(image_id) {
            return Err(err(start, format!("duplicate image id `{image_id}`")));
        }
        let Some((_, count_line)) = lines.next() else {
            return Err(err(start, format!("block `{image_id}` is missing its count line")));
        };
        let n: usize = count_line
            .trim()
            .parse()
            .map_err(|_| err(start, format!("malformed count line `{count_line}` in block `{image_id}`")))?;
        let mut rows = Vec::with_capacity(n);
        for k in 0..n {
            let Some((ln, row)) = lines.next() else {
                return Err(err(start, format!("block `{image_id}` is short: expected {n} rows, found {k}")));
            };
            let fields: Vec<&str> = row.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(
                    start,
                    format!("line {ln}: expected 5 fields `x y w h value`, found {}", fields.len()),
                ));
            }
            let mut xywh = [0.0; 4];
            for (slot, f) in xywh.iter_mut().zip(&fields[..4]) {
                *slot = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(start, format!("line {ln}: non-numeric field `{f}`")))?;
            }
            rows.push((ln, xywh, fields[4]));
        }
        blocks.push(Block { image_id, start, rows });
    }
    Ok(blocks)
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn to_box(xywh: [f64; 4], path: &str, start: usize, ln: usize) -> Result<BBox> {
    BBox::from_xywh(xywh[0], xywh[1], xywh[2], xywh[3]).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: start,
        reason: format!("line {ln}: {e}"),
    })
}

pub fn parse_ground_truth(text: &str, path: &str) -> Result<Vec<GroundTruthImage>> {
    let mut out = Vec::new();
    for block in parse_blocks(text, path)? {
        let mut boxes = Vec::with_capacity(block.rows.len());
        let mut tags = Vec::with_capacity(block.rows.len());
        for (ln, xywh, tag) in block.rows {
            boxes.push(to_box(xywh, path, block.start, ln)?);
            tags.push(tag.parse::<Difficulty>().map_err(|reason| Error::Parse {
                path: path.to_string(),
                line: block.start,
                reason: format!("line {ln}: {reason}"),
            })?);
        }
        out.push(GroundTruthImage::new(block.image_id, boxes, tags)?);
    }
    Ok(out)
}

pub fn parse_detections(text: &str, path: &str) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    for block in parse_blocks(text, path)? {
        let mut dets = Vec::with_capacity(block.rows.len());
        for (ln, xywh, score) in block.rows {
            let bad = |reason: String| Error::Parse {
                path: path.to_string(),
                line: block.start,
                reason: format!("line {ln}: {reason}"),
            };
            let s: f64 = score.parse().map_err(|_| bad(format!("non-numeric score `{score}`")))?;
            let bbox = to_box(xywh, path, block.start, ln)?;
            dets.push(Detection::new(bbox, s).map_err(|e| bad(e.to_string()))?);
        }
        out.insert(block.image_id.to_string(), dets);
    }
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthImage>> {
    parse_ground_truth(&read_text(path)?, &path.display().to_string())
}

pub fn read_detections(path: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    parse_detections(&read_text(path)?, &path.display().to_string())
}

fn push_row(out: &mut String, b: &BBox, field: &str) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "{:.3} {:.3} {:.3} {:.3} {field}", b.x1(), b.y1(), b.width(), b.height());
}

pub fn format_ground_truth(images: &[GroundTruthImage]) -> String {
    let mut sorted: Vec<&GroundTruthImage> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut out = String::new();
    for img in sorted {
        out.push_str(&format!("{}\n{}\n", img.image_id, img.boxes.len()));
        for (b, t) in img.boxes.iter().zip(&img.tags) {
            push_row(&mut out, b, t.as_str());
        }
    }
    out
}

pub fn format_detections(dets: &BTreeMap<String, Vec<Detection>>) -> String {
    let mut out = String::new();
    for (id, list) in dets {
        out.push_str(&format!("{id}\n{}\n", list.len()));
        for d in list {
            push_row(&mut out, &d.bbox, &format!("{:.6}", d.score));
        }
    }
    out
}

pub fn write_ground_truth(images: &[GroundTruthImage], path: &Path) -> Result<()> {
    write_atomic(path, format_ground_truth(images).as_bytes())
}

pub fn write_detections(dets: &BTreeMap<String, Vec<Detection>>, path: &Path) -> Result<()> {
    write_atomic(path, format_detections(dets).as_bytes())
}
