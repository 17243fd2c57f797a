//! Parsers for the two WHO questionnaire export layouts.
//!
//! Both are lenient: tokens outside the documented vocabulary become
//! Missing and are counted, never fatal. Structural problems (wrong
//! column count, ragged rows) do fail.

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaError};
use crate::model::{Grid, SymptomMatrix, SymptomValue};

pub const WHO2012_COLUMNS: usize = 246;
pub const WHO2016_COLUMNS: usize = 354;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhoParsed {
    pub matrix: SymptomMatrix,
    /// Cells outside the layout's vocabulary, mapped to Missing.
    pub unrecognized_tokens: usize,
}

/// 2012 layout: ID plus 245 symptoms; "Y" present, "" absent, "." missing.
pub fn parse_who2012<R: io::Read>(reader: R) -> Result<WhoParsed> {
    parse_who(reader, WHO2012_COLUMNS, |tok| match tok {
        "Y" => Some(SymptomValue::Yes),
        "" => Some(SymptomValue::No),
        "." => Some(SymptomValue::Missing),
        _ => None,
    })
}

/// 2016 layout: ID plus 353 symptoms; "Y"/"y" present, "N"/"n" absent,
/// "." and "-" missing.
pub fn parse_who2016<R: io::Read>(reader: R) -> Result<WhoParsed> {
    parse_who(reader, WHO2016_COLUMNS, |tok| match tok {
        "Y" | "y" => Some(SymptomValue::Yes),
        "N" | "n" => Some(SymptomValue::No),
        "" | "." | "-" => Some(SymptomValue::Missing),
        _ => None,
    })
}

fn parse_who<R: io::Read>(
    reader: R,
    expected_columns: usize,
    classify: impl Fn(&str) -> Option<SymptomValue>,
) -> Result<WhoParsed> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != expected_columns {
        return Err(VaError::Format(format!(
            "expected {} columns (ID plus {} symptoms), found {}",
            expected_columns,
            expected_columns - 1,
            header.len()
        )));
    }
    let symptoms: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut ids = Vec::new();
    let mut cells = Vec::new();
    let mut unrecognized = 0usize;
    for record in rdr.records() {
        let record = record?;
        ids.push(record.get(0).unwrap_or("").to_string());
        for c in 1..expected_columns {
            let token = record.get(c).unwrap_or("").trim();
            match classify(token) {
                Some(v) => cells.push(v),
                None => {
                    unrecognized += 1;
                    cells.push(SymptomValue::Missing);
                }
            }
        }
    }

    let grid = Grid::from_flat(ids.len(), symptoms.len(), cells)?;
    let matrix = SymptomMatrix::new(ids, symptoms, grid)?;
    Ok(WhoParsed {
        matrix,
        unrecognized_tokens: unrecognized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn who_csv(columns: usize, rows: &[Vec<&str>]) -> String {
        let mut header: Vec<String> = vec!["ID".into()];
        header.extend((1..columns).map(|i| format!("s{}", i)));
        let mut out = header.join(",") + "\n";
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn pad_row<'a>(id: &'a str, prefix: &[&'a str], fill: &'a str, columns: usize) -> Vec<&'a str> {
        let mut row = vec![id];
        row.extend_from_slice(prefix);
        while row.len() < columns {
            row.push(fill);
        }
        row
    }

    #[test]
    fn who2012_tokens_map_to_tristate() {
        let row = pad_row("d1", &["Y", "", "."], "", WHO2012_COLUMNS);
        let parsed = parse_who2012(who_csv(WHO2012_COLUMNS, &[row]).as_bytes()).unwrap();
        let m = &parsed.matrix;
        assert_eq!(m.n_symptoms(), 245);
        assert_eq!(m.value(0, 0), SymptomValue::Yes);
        assert_eq!(m.value(0, 1), SymptomValue::No);
        assert_eq!(m.value(0, 2), SymptomValue::Missing);
        assert_eq!(m.value(0, 3), SymptomValue::No);
        assert_eq!(parsed.unrecognized_tokens, 0);
    }

    #[test]
    fn who2012_unknown_tokens_become_missing_with_count() {
        let row = pad_row("d1", &["y", "N"], "", WHO2012_COLUMNS);
        let parsed = parse_who2012(who_csv(WHO2012_COLUMNS, &[row]).as_bytes()).unwrap();
        assert_eq!(parsed.unrecognized_tokens, 2);
        assert_eq!(parsed.matrix.value(0, 0), SymptomValue::Missing);
        assert_eq!(parsed.matrix.value(0, 1), SymptomValue::Missing);
    }

    #[test]
    fn who2012_wrong_width_names_expected_count() {
        let err = parse_who2012("ID,s1,s2\nd1,Y,\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("246"), "{}", err);
    }

    #[test]
    fn who2012_header_only_yields_empty_matrix() {
        let parsed = parse_who2012(who_csv(WHO2012_COLUMNS, &[]).as_bytes()).unwrap();
        assert_eq!(parsed.matrix.n_records(), 0);
        assert_eq!(parsed.matrix.n_symptoms(), 245);
    }

    #[test]
    fn who2012_bulk_export_shape() {
        let rows: Vec<Vec<&str>> = (0..1000)
            .map(|_| pad_row("x", &["Y"], "", WHO2012_COLUMNS))
            .collect();
        let parsed = parse_who2012(who_csv(WHO2012_COLUMNS, &rows).as_bytes()).unwrap();
        assert_eq!(parsed.matrix.n_records(), 1000);
        assert_eq!(parsed.matrix.n_symptoms(), 245);
    }

    #[test]
    fn who2016_vocabulary() {
        let row = pad_row("d1", &["Y", "y", "N", "n", ".", "-", "yes"], "", WHO2016_COLUMNS);
        let parsed = parse_who2016(who_csv(WHO2016_COLUMNS, &[row]).as_bytes()).unwrap();
        let m = &parsed.matrix;
        assert_eq!(m.n_symptoms(), 353);
        assert_eq!(m.value(0, 0), SymptomValue::Yes);
        assert_eq!(m.value(0, 1), SymptomValue::Yes);
        assert_eq!(m.value(0, 2), SymptomValue::No);
        assert_eq!(m.value(0, 3), SymptomValue::No);
        assert_eq!(m.value(0, 4), SymptomValue::Missing);
        assert_eq!(m.value(0, 5), SymptomValue::Missing);
        // "yes" is not a substantive token in this layout.
        assert_eq!(m.value(0, 6), SymptomValue::Missing);
        assert_eq!(parsed.unrecognized_tokens, 1);
        // the "" padding counts as expected missing, not unrecognized
        assert_eq!(m.value(0, 7), SymptomValue::Missing);
    }

    #[test]
    fn cell_tallies_always_cover_the_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let tokens = ["Y", "", ".", "junk", "y"];
        let rows: Vec<Vec<&str>> = (0..25)
            .map(|_| {
                let mut row = vec!["d"];
                for _ in 1..WHO2012_COLUMNS {
                    row.push(tokens[rng.random_range(0..tokens.len())]);
                }
                row
            })
            .collect();
        let parsed = parse_who2012(who_csv(WHO2012_COLUMNS, &rows).as_bytes()).unwrap();
        let (yes, no, missing) = parsed.matrix.tallies();
        assert_eq!(yes + no + missing, 25 * 245);
    }
}
