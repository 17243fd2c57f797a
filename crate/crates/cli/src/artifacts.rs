//! File plumbing shared by the subcommands: atomic writes, canonical
//! tables with pass-through metadata columns, and the long-format CSMF
//! CSV every reporting command reads back.

use std::fs::{self, File};
use std::path::Path;

use va_core::model::{
    read_symptom_csv, write_symptom_csv, CanonicalTable, CSMFEstimate, CsmfGroup, CsmfSummary,
    Grid, SymptomMatrix,
};
use va_core::{Result, VaError};

/// Non-symptom columns recognized in canonical files without being
/// declared: the training label and the PHMRC site.
pub const CONVENTIONAL_META: [&str; 2] = ["Cause", "site"];

/// `File::open` with the path named in the error.
pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        VaError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })
}

/// Writes via a temp file in the destination directory and renames, so
/// readers never observe a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => Path::new(".").to_path_buf(),
    };
    fs::create_dir_all(&parent)?;
    let tmp = tempfile::NamedTempFile::new_in(&parent)?;
    fs::write(tmp.path(), bytes)?;
    tmp.persist(path)
        .map_err(|e| VaError::Io(e.error))?;
    Ok(())
}

/// Reads a canonical file, passing through the conventional metadata
/// columns plus any in `extra_meta` (which must exist).
pub fn read_canonical(path: &Path, extra_meta: &[String]) -> Result<CanonicalTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(crate::artifacts::open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    drop(rdr);

    let mut meta: Vec<&str> = CONVENTIONAL_META
        .iter()
        .copied()
        .filter(|name| header.iter().any(|h| h == name))
        .collect();
    for name in extra_meta {
        if !header.iter().any(|h| h == name) {
            return Err(VaError::Format(format!(
                "column {:?} not found in {}",
                name,
                path.display()
            )));
        }
        if !meta.contains(&name.as_str()) {
            meta.push(name);
        }
    }
    read_symptom_csv(crate::artifacts::open(path)?, &meta)
}

pub fn write_canonical(
    path: &Path,
    matrix: &SymptomMatrix,
    meta: &[(String, Vec<String>)],
) -> Result<()> {
    let mut bytes = Vec::new();
    write_symptom_csv(&mut bytes, matrix, meta)?;
    write_atomic(path, &bytes)
}

const CSMF_POINT_HEADER: [&str; 3] = ["group", "cause", "mean"];
const CSMF_SUMMARY_HEADER: [&str; 7] =
    ["group", "cause", "mean", "sd", "lower", "median", "upper"];

/// Long-format CSMF: one row per (group, cause). Summary columns appear
/// when any group carries one; groups without leave those cells empty.
pub fn csmf_to_csv(est: &CSMFEstimate) -> Result<Vec<u8>> {
    let with_summary = est.groups().iter().any(|g| g.summary.is_some());
    let mut wtr = csv::Writer::from_writer(Vec::new());
    if with_summary {
        wtr.write_record(CSMF_SUMMARY_HEADER)?;
    } else {
        wtr.write_record(CSMF_POINT_HEADER)?;
    }
    for g in est.groups() {
        for (k, cause) in est.causes().iter().enumerate() {
            let mut row = vec![g.label.clone(), cause.clone(), g.point[k].to_string()];
            if with_summary {
                match &g.summary {
                    Some(s) => {
                        row.push(s.sd[k].to_string());
                        row.push(s.lower[k].to_string());
                        row.push(s.median[k].to_string());
                        row.push(s.upper[k].to_string());
                    }
                    None => row.extend([String::new(), String::new(), String::new(), String::new()]),
                }
            }
            wtr.write_record(&row)?;
        }
    }
    Ok(wtr.into_inner().expect("csv flush to memory"))
}

pub fn read_csmf(path: &Path) -> Result<CSMFEstimate> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(crate::artifacts::open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
    let with_summary = if header == CSMF_SUMMARY_HEADER {
        true
    } else if header == CSMF_POINT_HEADER {
        false
    } else {
        return Err(VaError::Format(format!(
            "{} is not a CSMF file: header {:?}",
            path.display(),
            header.join(",")
        )));
    };

    // (label, causes-in-order, mean/sd/lower/median/upper columns)
    struct Partial {
        label: String,
        causes: Vec<String>,
        cols: [Vec<Option<f64>>; 5],
    }
    let mut partials: Vec<Partial> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = record[0].to_string();
        let p = match partials.iter_mut().find(|p| p.label == label) {
            Some(p) => p,
            None => {
                partials.push(Partial {
                    label,
                    causes: Vec::new(),
                    cols: Default::default(),
                });
                partials.last_mut().unwrap()
            }
        };
        p.causes.push(record[1].to_string());
        for (slot, idx) in (2..7).enumerate() {
            let cell = record.get(idx).unwrap_or("");
            let value = if cell.is_empty() {
                if slot == 0 {
                    return Err(VaError::Format(format!(
                        "{}: empty mean for cause {:?}",
                        path.display(),
                        record[1].to_string()
                    )));
                }
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    VaError::Format(format!(
                        "{}: non-numeric cell {:?}",
                        path.display(),
                        cell
                    ))
                })?)
            };
            p.cols[slot].push(value);
            if !with_summary {
                break;
            }
        }
    }
    if partials.is_empty() {
        return Err(VaError::Format(format!("{} has no rows", path.display())));
    }

    let causes = partials[0].causes.clone();
    let mut groups = Vec::with_capacity(partials.len());
    for p in &partials {
        if p.causes != causes {
            return Err(VaError::Format(format!(
                "{}: group {:?} lists different causes than group {:?}",
                path.display(),
                p.label,
                partials[0].label
            )));
        }
        let point: Vec<f64> = p.cols[0].iter().map(|v| v.unwrap()).collect();
        let summary = if with_summary && p.cols[1..].iter().all(|c| c.iter().all(Option::is_some))
        {
            let take = |i: usize| -> Vec<f64> { p.cols[i].iter().map(|v| v.unwrap()).collect() };
            Some(CsmfSummary {
                mean: point.clone(),
                sd: take(1),
                lower: take(2),
                median: take(3),
                upper: take(4),
            })
        } else {
            None
        };
        groups.push(CsmfGroup {
            label: p.label.clone(),
            point,
            summary,
        });
    }
    CSMFEstimate::new(causes, groups)
}

/// `ID,<columns…>` matrix of floats (individual probabilities, ranks,
/// quantile summaries).
pub fn grid_to_csv(ids: &[String], columns: &[&str], grid: &Grid<f64>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["ID"];
    header.extend(columns);
    wtr.write_record(&header)?;
    for (r, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(grid.row(r).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    Ok(wtr.into_inner().expect("csv flush to memory"))
}

/// Reads one string column out of an arbitrary CSV.
pub fn read_label_column(path: &Path, column: &str) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(crate::artifacts::open(path)?);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| {
            VaError::Format(format!(
                "column {:?} not found in {}",
                column,
                path.display()
            ))
        })?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        out.push(record.get(idx).unwrap_or("").to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn csmf_csv_round_trips_with_and_without_summaries() {
        let point = CSMFEstimate::single(vec!["A".into(), "B".into()], vec![0.25, 0.75]).unwrap();
        let bytes = csmf_to_csv(&point).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("csmf.csv");
        write_atomic(&path, &bytes).unwrap();
        assert_eq!(read_csmf(&path).unwrap(), point);

        let summary = CsmfSummary {
            mean: vec![0.25, 0.75],
            sd: vec![0.01, 0.01],
            lower: vec![0.2, 0.7],
            median: vec![0.25, 0.75],
            upper: vec![0.3, 0.8],
        };
        let est = CSMFEstimate::new(
            vec!["A".into(), "B".into()],
            vec![
                CsmfGroup {
                    label: "g1".into(),
                    point: vec![0.25, 0.75],
                    summary: Some(summary.clone()),
                },
                CsmfGroup {
                    label: "g2".into(),
                    point: vec![0.5, 0.5],
                    summary: None,
                },
            ],
        )
        .unwrap();
        let bytes = csmf_to_csv(&est).unwrap();
        write_atomic(&path, &bytes).unwrap();
        let back = read_csmf(&path).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("sub").join("file.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn canonical_reader_passes_conventional_meta() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("data.csv");
        write_atomic(&path, b"ID,Cause,site,fever\nd1,Stroke,AP,Y\n").unwrap();
        let table = read_canonical(&path, &[]).unwrap();
        assert_eq!(table.matrix.symptoms(), ["fever"]);
        assert_eq!(table.meta_column("Cause").unwrap(), ["Stroke"]);
        assert_eq!(table.meta_column("site").unwrap(), ["AP"]);
        assert!(read_canonical(&path, &["age".into()]).is_err());
    }
}
