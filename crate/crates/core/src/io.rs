//! The VFMF feature interchange format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset 0   b"VFMF"
//! offset 4   version byte (0x01)
//! offset 5   u32 n   (rows)
//! offset 9   u32 d   (columns)
//! offset 13  n*d IEEE-754 binary32 values, row-major
//! ```
//!
//! Metadata lives in an optional JSON sidecar at `<path>.meta.json`.
//! Values are widened to `f64` on read; writing narrows to `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSetMetadata};

pub const MAGIC: &[u8; 4] = b"VFMF";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 13;

/// On-disk encoding accepted by [`read_features_as`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    #[default]
    Vfmf,
    Csv,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn encode_features(matrix: &FeatureMatrix) -> Result<Vec<u8>> {
    let n = u32::try_from(matrix.n())
        .map_err(|_| Error::Data(format!("{} rows exceed the u32 header", matrix.n())))?;
    let d = u32::try_from(matrix.d())
        .map_err(|_| Error::Data(format!("{} columns exceed the u32 header", matrix.d())))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * matrix.as_slice().len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for &v in matrix.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Data(format!("value {v} overflows binary32")));
        }
        buf.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("missing VFMF magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {:#04x}", bytes[4])));
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("header declares an empty {n}x{d} matrix")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(Error::Data(format!(
            "truncated payload: {} of {expected} bytes for {n}x{d}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Data(format!(
            "{} trailing bytes after {n}x{d} payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(n, d, data)
}

/// Reads a VFMF file plus its sidecar (or default metadata when absent).
pub fn read_features(path: impl AsRef<Path>) -> Result<(FeatureMatrix, FeatureSetMetadata)> {
    read_features_as(path, FeatureFormat::Vfmf)
}

pub fn read_features_as(
    path: impl AsRef<Path>,
    format: FeatureFormat,
) -> Result<(FeatureMatrix, FeatureSetMetadata)> {
    let path = path.as_ref();
    let matrix = match format {
        FeatureFormat::Vfmf => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_features(&bytes)?
        }
        FeatureFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text)?
        }
    };
    let meta = read_sidecar(path, &matrix)?;
    Ok((matrix, meta))
}

fn read_sidecar(path: &Path, matrix: &FeatureMatrix) -> Result<FeatureSetMetadata> {
    let side = sidecar_path(path);
    if !side.exists() {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(FeatureSetMetadata::for_matrix(name, matrix));
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: FeatureSetMetadata = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    if meta.dimension != matrix.d() {
        return Err(Error::Format(format!(
            "sidecar dimension {} does not match matrix dimension {}",
            meta.dimension,
            matrix.d()
        )));
    }
    Ok(meta)
}

/// Writes the matrix as VFMF plus its sidecar.
pub fn write_features(
    matrix: &FeatureMatrix,
    meta: &FeatureSetMetadata,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_features_as(matrix, meta, path, FeatureFormat::Vfmf)
}

/// Writes the matrix in `format` plus its sidecar. CSV values use the
/// shortest decimal that round-trips the `f64`.
pub fn write_features_as(
    matrix: &FeatureMatrix,
    meta: &FeatureSetMetadata,
    path: impl AsRef<Path>,
    format: FeatureFormat,
) -> Result<()> {
    let path = path.as_ref();
    if meta.dimension != matrix.d() {
        return Err(Error::Data(format!(
            "metadata dimension {} does not match matrix dimension {}",
            meta.dimension,
            matrix.d()
        )));
    }
    let bytes = match format {
        FeatureFormat::Vfmf => encode_features(matrix)?,
        FeatureFormat::Csv => encode_csv(matrix).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn encode_csv(matrix: &FeatureMatrix) -> String {
    let mut out = String::with_capacity(matrix.n() * matrix.d() * 12);
    for row in matrix.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// One sample per line, comma-separated decimals. A leading non-numeric
/// line is treated as a header and skipped.
pub fn parse_csv(text: &str) -> Result<FeatureMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(e) => {
                return Err(Error::Format(format!("csv line {}: {e}", lineno + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("csv contains no rows".into()));
    }
    FeatureMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: u32, d: u32) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.push(VERSION);
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        b
    }

    #[test]
    fn decodes_two_by_three() {
        let mut b = header(2, 3);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_features(&b).unwrap();
        assert_eq!((m.n(), m.d()), (2, 3));
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn five_values_for_six_is_truncated() {
        let mut b = header(2, 3);
        for v in [1.0f32; 5] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_features(&b), Err(Error::Data(_))));
    }

    #[test]
    fn bad_magic_and_short_header() {
        let mut b = header(1, 1);
        b[0] = b'X';
        b.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(decode_features(&b), Err(Error::Format(_))));
        assert!(matches!(decode_features(b"VFMF"), Err(Error::Format(_))));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let mut b = header(1, 1);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&b), Err(Error::Data(_))));
    }

    #[test]
    fn one_by_one_payload_is_four_bytes() {
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        let b = encode_features(&m).unwrap();
        assert_eq!(b.len() - HEADER_LEN, 4);
    }

    #[test]
    fn csv_with_header() {
        let m = parse_csv("a,b\n1,2\n3.5,-4\n\n").unwrap();
        assert_eq!((m.n(), m.d()), (2, 2));
        assert_eq!(m.row(1), &[3.5, -4.0]);
        assert!(parse_csv("1,2\n3\n").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = FeatureMatrix::from_rows(&[[0.1, -2.5e-300], [1.0 / 3.0, 7.0]]).unwrap();
        assert_eq!(parse_csv(&encode_csv(&m)).unwrap(), m);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.vfmf");
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let meta = FeatureSetMetadata {
            name: "demo".into(),
            dimension: 3,
            normalization: crate::features::Normalization::L2,
            source: "unit-test".into(),
        };
        write_features(&m, &meta, &p).unwrap();
        let (m2, meta2) = read_features(&p).unwrap();
        assert_eq!(m, m2);
        assert_eq!(meta, meta2);
        assert!(sidecar_path(&p).ends_with("f.vfmf.meta.json"));
    }
}
