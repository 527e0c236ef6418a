use std::io::{self, Write};

use serde::Serialize;
use treecast_core::export::{fmt_real, write_table_csv};

use crate::CliError;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: &'static str,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn json<T: Serialize>(command: &str, body: &T) -> Result<Vec<u8>, CliError> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        command,
        body,
    };
    let mut buf = serde_json::to_vec_pretty(&doc)?;
    buf.push(b'\n');
    Ok(buf)
}

pub fn csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_table_csv(&mut buf, header, rows)?;
    Ok(buf)
}

/// Two-column `field,value` table.
pub fn csv_fields(fields: &[(&str, String)]) -> Result<Vec<u8>, CliError> {
    let rows: Vec<Vec<String>> = fields
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.clone()])
        .collect();
    csv(&["field", "value"], &rows)
}

pub fn real(x: f64) -> String {
    fmt_real(x)
}

pub fn opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

pub fn write_stdout(bytes: &[u8]) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    stdout.write_all(bytes)?;
    stdout.flush()?;
    Ok(())
}
