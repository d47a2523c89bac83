//! Benchmark score tables.
//!
//! CSV with a header `model,<bench1>,...,<benchd>` and one row per model.
//! Scores are either fractions in `[0, 1]` or percentages in `[0, 100]`; if
//! any cell exceeds 1 the whole table is read as percentages.

use std::path::Path;

use aim_core::ScoreTable;

use crate::FormatError;

pub fn parse(text: &str) -> Result<ScoreTable, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| FormatError::Csv(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(FormatError::Csv(
            "header needs a model column and at least one benchmark".into(),
        ));
    }
    let benchmarks: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::Csv(e.to_string()))?;
        let name = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| FormatError::Csv(format!("model `{name}`: `{cell}` is not a number")))?;
                if !(0.0..=100.0).contains(&v) {
                    return Err(FormatError::Csv(format!("model `{name}`: score {v} outside [0, 100]")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((name, values));
    }

    if rows.iter().flat_map(|(_, v)| v).any(|&v| v > 1.0) {
        for (_, v) in &mut rows {
            v.iter_mut().for_each(|x| *x /= 100.0);
        }
    }
    Ok(ScoreTable::new(benchmarks, rows)?)
}

pub fn load(path: &Path) -> Result<ScoreTable, FormatError> {
    let bytes = crate::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::Csv(e.to_string()))?;
    parse(&text)
}

/// Finds a model row by exact name, falling back to a unique
/// case-insensitive match.
pub fn resolve_name<'a>(table: &'a ScoreTable, name: &str) -> Option<&'a str> {
    if let Some((n, _)) = table.rows().iter().find(|(n, _)| n == name) {
        return Some(n);
    }
    let mut matches = table.rows().iter().filter(|(n, _)| n.eq_ignore_ascii_case(name));
    match (matches.next(), matches.next()) {
        (Some((n, _)), None) => Some(n),
        _ => None,
    }
}
