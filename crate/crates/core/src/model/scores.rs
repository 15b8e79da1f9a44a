use std::io::{Read, Write};
use std::path::Path;

use super::{ScoredSet, SyntheticValidationSet};
use crate::{Error, Result};

fn csv_error(row: usize, e: csv::Error) -> Error {
    Error::Row {
        row,
        message: e.to_string(),
    }
}

fn parse_label(row: usize, field: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Row {
            row,
            message: format!("label {other:?} is not 0 or 1"),
        }),
    }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_error(1, e))?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Row {
            row: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                found.join(",")
            ),
        });
    }
    Ok(())
}

/// Writes `id,score,label` rows. Scores use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_scores<W: Write>(set: &ScoredSet, destination: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(destination);
    w.write_record(["id", "score", "label"])
        .map_err(|e| csv_error(1, e))?;
    for i in 0..set.len() {
        let score = set.scores()[i].to_string();
        let label = set.labels()[i].to_string();
        w.write_record([set.ids()[i].as_str(), score.as_str(), label.as_str()])
            .map_err(|e| csv_error(i + 2, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scores file. Row numbers in errors count the header as row 1.
pub fn read_scores<R: Read>(source: R) -> Result<ScoredSet> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(&mut reader, &["id", "score", "label"])?;
    let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(row, e))?;
        if record.len() != 3 {
            return Err(Error::Row {
                row,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let score: f64 = record[1].trim().parse().map_err(|_| Error::Row {
            row,
            message: format!("non-numeric score {:?}", &record[1]),
        })?;
        if !score.is_finite() {
            return Err(Error::Row {
                row,
                message: format!("non-finite score {:?}", &record[1]),
            });
        }
        ids.push(record[0].to_string());
        scores.push(score);
        labels.push(parse_label(row, &record[2])?);
    }
    ScoredSet::new(ids, scores, labels)
}

pub fn write_scores_file(set: &ScoredSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_scores(set, &mut buf)?;
    super::write_atomic(path, &buf)
}

pub fn read_scores_file(path: &Path) -> Result<ScoredSet> {
    read_scores(std::fs::File::open(path).map_err(crate::Error::io_at(path))?)
}

/// Writes a validation set as `id,label` rows, normals first.
pub fn write_validation_set<W: Write>(set: &SyntheticValidationSet, destination: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(destination);
    w.write_record(["id", "label"])
        .map_err(|e| csv_error(1, e))?;
    for (i, (id, label)) in set.ids().iter().zip(set.labels()).enumerate() {
        w.write_record([id.as_str(), if label == 1 { "1" } else { "0" }])
            .map_err(|e| csv_error(i + 2, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_validation_set<R: Read>(source: R) -> Result<SyntheticValidationSet> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    check_header(&mut reader, &["id", "label"])?;
    let (mut normals, mut anomalies) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(row, e))?;
        if record.len() != 2 {
            return Err(Error::Row {
                row,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        match parse_label(row, &record[1])? {
            0 => normals.push(record[0].to_string()),
            _ => anomalies.push(record[0].to_string()),
        }
    }
    SyntheticValidationSet::new(normals, anomalies)
}

pub fn write_validation_set_file(set: &SyntheticValidationSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_validation_set(set, &mut buf)?;
    super::write_atomic(path, &buf)
}

pub fn read_validation_set_file(path: &Path) -> Result<SyntheticValidationSet> {
    read_validation_set(std::fs::File::open(path).map_err(crate::Error::io_at(path))?)
}
