//! Calibration inputs: CSV with one sample per row, or `CALBv1` binary
//! (`"CALBv1\0\0"`, u64 LE rows, u64 LE cols, then rows*cols LE f64).

use std::path::Path;

use aim_core::CalibrationSet;

use crate::FormatError;

pub const MAGIC: &[u8; 8] = b"CALBv1\0\0";

pub fn encode_binary(samples: &[Vec<f64>]) -> Vec<u8> {
    let cols = samples.first().map_or(0, Vec::len);
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in samples.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<Vec<f64>>, FormatError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < 24 {
        return Err(FormatError::Truncated {
            expected: 24,
            found: bytes.len() as u64,
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| FormatError::LengthMismatch(format!("{rows} x {cols} overflows")))?;
    let found = (bytes.len() - 24) as u64;
    if found < payload {
        return Err(FormatError::Truncated {
            expected: 24 + payload,
            found: bytes.len() as u64,
        });
    }
    if found != payload {
        return Err(FormatError::LengthMismatch(format!(
            "{rows} x {cols} needs {payload} data bytes, found {found}"
        )));
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if cols == 0 {
        return Ok(vec![Vec::new(); rows as usize]);
    }
    Ok(values.chunks(cols as usize).map(<[f64]>::to_vec).collect())
}

/// Numeric CSV without a header. Blank lines are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FormatError::Csv(e.to_string()))?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|_| FormatError::Csv(format!("row {}: `{cell}` is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn to_csv(samples: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in samples {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Loads either format, chosen by the leading magic bytes.
pub fn load(path: &Path) -> Result<CalibrationSet, FormatError> {
    let bytes = crate::read_bytes(path)?;
    let samples = if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)?
    } else {
        let text = String::from_utf8(bytes).map_err(|e| FormatError::Csv(e.to_string()))?;
        parse_csv(&text)?
    };
    let source = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(CalibrationSet::new(samples, source)?)
}
