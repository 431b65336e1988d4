//! Matrix files: comma-separated text and the packed `CLARMAT1` binary layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CLARMAT1";
const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Os { path: PathBuf, source: std::io::Error },
    #[error("{}: byte {offset}: {message}", path.display())]
    Malformed { path: PathBuf, offset: usize, message: String },
    #[error("no repetition files found for prefix {}", prefix.display())]
    MissingRepetitions { prefix: PathBuf },
}

fn os_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Os { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, offset: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed { path: path.to_path_buf(), offset, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Bin => "bin",
        }
    }
}

/// Reads a matrix, choosing the decoder from the leading magic bytes.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let bytes = fs::read(path).map_err(os_error(path))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(path, &bytes)
    } else {
        decode_csv(path, &bytes)
    }
}

pub fn write_matrix(path: &Path, matrix: &DMatrix<f64>, format: Format) -> Result<(), IoError> {
    let bytes = match format {
        Format::Csv => encode_csv(matrix).into_bytes(),
        Format::Bin => encode_binary(matrix),
    };
    fs::write(path, bytes).map_err(os_error(path))
}

/// Row-major text with 17 significant digits per entry.
pub fn encode_csv(matrix: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in matrix.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(path, e.valid_up_to(), "invalid UTF-8"))?;
    let mut values = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            continue;
        }
        let mut field_start = start;
        let mut count = 0;
        for field in content.split(',') {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(path, field_start, format!("cannot parse {field:?} as a number")))?;
            values.push(value);
            field_start += field.len() + 1;
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(malformed(path, start, format!("row {rows} has {count} fields, expected {c}")));
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| malformed(path, 0, "file contains no rows"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn encode_binary(matrix: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = matrix.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for row in matrix.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>, IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(path, bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(malformed(path, 0, "missing CLARMAT1 magic"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols) = (word(8), word(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|len| len.checked_mul(8))
        .and_then(|len| len.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| malformed(path, 8, format!("shape {rows}x{cols} overflows")))?;
    if (bytes.len() as u64) < expected {
        return Err(malformed(path, bytes.len(), format!("truncated payload, expected {expected} bytes")));
    }
    if (bytes.len() as u64) > expected {
        return Err(malformed(path, expected as usize, "trailing bytes after payload"));
    }
    let values: Vec<f64> =
        bytes[HEADER_LEN..].chunks_exact(8).map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(rows as usize, cols as usize, &values))
}

/// `PREFIX_rep<k>.<ext>`.
pub fn repetition_path(prefix: &Path, k: usize, format: Format) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("_rep{k}.{}", format.extension()));
    PathBuf::from(name)
}

fn repetition_candidates(prefix: &Path, k: usize) -> [PathBuf; 3] {
    let mut bare = prefix.as_os_str().to_owned();
    bare.push(format!("_rep{k}"));
    [PathBuf::from(bare), repetition_path(prefix, k, Format::Csv), repetition_path(prefix, k, Format::Bin)]
}

/// Reads `PREFIX_rep0`, `PREFIX_rep1`, ... until the next index is missing. Files may
/// carry a `.csv` or `.bin` extension or none at all.
pub fn read_repetitions(prefix: &Path) -> Result<Vec<DMatrix<f64>>, IoError> {
    let mut out = Vec::new();
    while let Some(path) = repetition_candidates(prefix, out.len()).into_iter().find(|p| p.is_file()) {
        out.push(read_matrix(&path)?);
    }
    if out.is_empty() {
        return Err(IoError::MissingRepetitions { prefix: prefix.to_path_buf() });
    }
    Ok(out)
}

pub fn write_repetitions(prefix: &Path, reps: &[DMatrix<f64>], format: Format) -> Result<(), IoError> {
    reps.iter().enumerate().try_for_each(|(k, rep)| write_matrix(&repetition_path(prefix, k, format), rep, format))
}

/// Writes a headed CSV table; each row is already formatted.
pub fn write_table(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), IoError> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    fs::write(path, out).map_err(os_error(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 1.0 / 3.0, f64::MAX, f64::MIN_POSITIVE, -0.0])
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = sample();
        let back = decode_csv(Path::new("m.csv"), encode_csv(&m).as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let m = sample();
        let back = decode_binary(Path::new("m.bin"), &encode_binary(&m)).unwrap();
        assert!(m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.shape(), (2, 3));
    }

    #[test]
    fn csv_errors_carry_byte_offsets() {
        let err = decode_csv(Path::new("bad.csv"), b"1,2\n3,x\n").unwrap_err();
        assert_eq!(err.to_string(), "bad.csv: byte 6: cannot parse \"x\" as a number");
        let err = decode_csv(Path::new("bad.csv"), b"1,2\n3\n").unwrap_err();
        assert!(matches!(err, IoError::Malformed { offset: 4, .. }));
        assert!(decode_csv(Path::new("empty.csv"), b"\n\n").is_err());
    }

    #[test]
    fn binary_errors_carry_byte_offsets() {
        let mut bytes = encode_binary(&sample());
        bytes.pop();
        let err = decode_binary(Path::new("m.bin"), &bytes).unwrap_err();
        assert!(matches!(err, IoError::Malformed { offset: 71, .. }));
        bytes.extend_from_slice(&[0, 0]);
        let err = decode_binary(Path::new("m.bin"), &bytes).unwrap_err();
        assert!(matches!(err, IoError::Malformed { offset: 72, .. }));
        assert!(decode_binary(Path::new("m.bin"), &bytes[..10]).is_err());
    }

    #[test]
    fn accepts_windows_line_endings() {
        let m = decode_csv(Path::new("m.csv"), b"1, 2\r\n3,4\r\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn repetition_names() {
        assert_eq!(repetition_path(Path::new("out/Y"), 3, Format::Bin), PathBuf::from("out/Y_rep3.bin"));
    }
}
