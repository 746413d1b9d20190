//! Input vectors and labels from CSV/text files or IDX files.

use std::fs;
use std::path::Path;

use bnncert::{Error, Result};

const IDX_U8: u8 = 0x08;

/// Parses an unsigned-byte IDX file into its dimensions and raw bytes.
fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("not an IDX file".into()));
    }
    if bytes[2] != IDX_U8 {
        return Err(Error::Format(format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let data = &bytes[header..];
    if data.len() != count {
        return Err(Error::Format(format!(
            "IDX payload holds {} bytes, header declares {count}",
            data.len()
        )));
    }
    Ok((dims, data))
}

fn is_idx(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && bytes[0] == 0 && bytes[1] == 0 && bytes[2] == IDX_U8 && bytes[3] > 0
}

/// One input vector per row of a CSV file, or per leading index of an IDX
/// image file with pixels scaled to `[0, 1]`.
pub fn read_inputs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    if is_idx(&bytes) {
        let (dims, data) = parse_idx(&bytes)?;
        let width: usize = dims[1..].iter().product();
        if width == 0 {
            return Ok(vec![Vec::new(); dims[0]]);
        }
        return Ok(data
            .chunks_exact(width)
            .map(|row| row.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if n == 0 => continue,
            Err(e) => return Err(Error::Format(format!("{}: row {}: {e}", path.display(), n + 1))),
        }
    }
    Ok(rows)
}

/// Integer class labels from an IDX label file or a text file separated by
/// commas or whitespace.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    if is_idx(&bytes) {
        let (dims, data) = parse_idx(&bytes)?;
        if dims.len() != 1 {
            return Err(Error::Format(format!("label IDX file has {} dimensions", dims.len())));
        }
        return Ok(data.iter().map(|&b| b as usize).collect());
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let mut labels = Vec::new();
    for (n, tok) in text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .enumerate()
    {
        match tok.parse::<usize>() {
            Ok(v) => labels.push(v),
            Err(_) if n == 0 => continue,
            Err(e) => return Err(Error::Format(format!("{}: label '{tok}': {e}", path.display()))),
        }
    }
    Ok(labels)
}

/// Parses index lists such as `0-4,7,9`.
pub fn parse_indices(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|e| format!("bad index '{part}': {e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("bad index '{part}': {e}"))?;
            if a > b {
                return Err(format!("empty index range '{part}'"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|e| format!("bad index '{part}': {e}"))?);
        }
    }
    Ok(out)
}
