//! Canonical symptom CSV: header row, first column `ID`, cells
//! `Y` / empty / `.` for yes / no / missing. Non-symptom columns
//! (cause labels, sub-population tags) are pulled out by name.

use std::io;

use crate::error::{Result, VaError};
use crate::model::{SymptomMatrix, SymptomValue};

/// A parsed canonical file: the tri-state matrix plus any requested
/// string-valued columns, in request order.
#[derive(Debug, Clone)]
pub struct CanonicalTable {
    pub matrix: SymptomMatrix,
    pub meta: Vec<(String, Vec<String>)>,
}

impl CanonicalTable {
    pub fn meta_column(&self, name: &str) -> Option<&[String]> {
        self.meta
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Reads a canonical symptom CSV. Columns named in `meta_columns` are
/// returned as raw strings instead of being parsed as symptoms; every
/// remaining non-ID column must contain only canonical tokens.
pub fn read_symptom_csv<R: io::Read>(reader: R, meta_columns: &[&str]) -> Result<CanonicalTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("ID") {
        return Err(VaError::Format(format!(
            "first column must be named \"ID\", found {:?}",
            headers.get(0).unwrap_or("")
        )));
    }

    let mut meta_idx = Vec::with_capacity(meta_columns.len());
    for name in meta_columns {
        match headers.iter().position(|h| h == *name) {
            Some(0) => {
                return Err(VaError::Format(format!(
                    "column {:?} is the ID column, not a data column",
                    name
                )))
            }
            Some(i) => meta_idx.push(i),
            None => {
                return Err(VaError::Format(format!(
                    "required column {:?} not found in header",
                    name
                )))
            }
        }
    }

    let symptom_idx: Vec<usize> = (1..headers.len())
        .filter(|i| !meta_idx.contains(i))
        .collect();
    let symptoms: Vec<String> = symptom_idx
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut meta: Vec<(String, Vec<String>)> = meta_columns
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    let mut bad: Vec<String> = Vec::new();

    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(VaError::Format(format!(
                "row {} has {} fields, header has {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        ids.push(record[0].to_string());
        for (slot, &i) in meta_idx.iter().enumerate() {
            meta[slot].1.push(record[i].to_string());
        }
        let mut row = Vec::with_capacity(symptom_idx.len());
        for &i in &symptom_idx {
            match SymptomValue::from_token(&record[i]) {
                Some(v) => row.push(v),
                None => {
                    if bad.len() < 5 {
                        bad.push(format!(
                            "row {} column {:?}: {:?}",
                            line + 2,
                            &headers[i],
                            &record[i]
                        ));
                    }
                    row.push(SymptomValue::Missing);
                }
            }
        }
        rows.push(row);
    }

    if !bad.is_empty() {
        return Err(VaError::Format(format!(
            "non-canonical symptom tokens (expected \"Y\", \"\" or \".\"): {}",
            bad.join("; ")
        )));
    }

    let matrix = SymptomMatrix::from_rows(ids, symptoms, rows)?;
    Ok(CanonicalTable { matrix, meta })
}

/// Writes a canonical symptom CSV: `ID`, then any meta columns, then one
/// column per symptom. Meta column lengths must match the record count.
pub fn write_symptom_csv<W: io::Write>(
    writer: W,
    matrix: &SymptomMatrix,
    meta: &[(String, Vec<String>)],
) -> Result<()> {
    for (name, col) in meta {
        if col.len() != matrix.n_records() {
            return Err(VaError::Validation(format!(
                "meta column {:?} has {} values for {} records",
                name,
                col.len(),
                matrix.n_records()
            )));
        }
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["ID".to_string()];
    header.extend(meta.iter().map(|(n, _)| n.clone()));
    header.extend(matrix.symptoms().iter().cloned());
    wtr.write_record(&header)?;
    for (r, id) in matrix.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(meta.iter().map(|(_, col)| col[r].clone()));
        rec.extend(matrix.record(r).iter().map(|v| v.token().to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
