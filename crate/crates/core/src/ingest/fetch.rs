//! Blocking download of the PHMRC gold-standard tables.

use std::time::Duration;

use crate::error::{Result, VaError};
use crate::ingest::{phmrc::PhmrcModule, RawTable};

const ADULT_URL: &str = "https://ghdx.healthdata.org/sites/default/files/record-attached-files/IHME_PHMRC_VA_DATA_ADULT_Y2013M09D11_0.csv";
const CHILD_URL: &str = "https://ghdx.healthdata.org/sites/default/files/record-attached-files/IHME_PHMRC_VA_DATA_CHILD_Y2013M09D11_0.csv";
const NEONATE_URL: &str = "https://ghdx.healthdata.org/sites/default/files/record-attached-files/IHME_PHMRC_VA_DATA_NEONATE_Y2013M09D11_0.csv";

pub fn phmrc_url(module: PhmrcModule) -> &'static str {
    match module {
        PhmrcModule::Adult => ADULT_URL,
        PhmrcModule::Child => CHILD_URL,
        PhmrcModule::Neonate => NEONATE_URL,
    }
}

/// Downloads a module's raw table, keeping at most `rows` data rows.
/// `rows = Some(0)` still validates the header and returns an empty
/// table.
pub fn fetch_phmrc(module: PhmrcModule, rows: Option<usize>) -> Result<RawTable> {
    fetch_table(phmrc_url(module), module.expected_columns(), rows)
}

/// GET a CSV, stream-parse it, and stop after the row limit. The width
/// check runs on the header before any row is kept.
pub(crate) fn fetch_table(
    url: &str,
    expected_columns: Option<usize>,
    rows: Option<usize>,
) -> Result<RawTable> {
    let fetch_err = |reason: String| VaError::Fetch {
        url: url.to_string(),
        reason,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(600)))
        .build()
        .into();
    let mut response = agent
        .get(url)
        .call()
        .map_err(|e| fetch_err(e.to_string()))?;
    let body = response.body_mut().as_reader();

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| fetch_err(format!("bad CSV header: {}", e)))?
        .iter()
        .map(str::to_string)
        .collect();
    if let Some(expected) = expected_columns {
        if header.len() != expected {
            return Err(VaError::Schema(format!(
                "{} returned {} columns, expected {}",
                url,
                header.len(),
                expected
            )));
        }
    }

    let limit = rows.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for record in rdr.records() {
        if out.len() >= limit {
            break;
        }
        let record = record.map_err(|e| fetch_err(format!("bad CSV row: {}", e)))?;
        out.push(record.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows: out })
}
