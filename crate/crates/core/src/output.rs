//! Shared pieces of the CSV/JSON file formats.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Bumped whenever a column or metadata key changes meaning.
pub const FORMAT_VERSION: u32 = 1;

/// Writes the versioned `#` comment block that precedes every CSV table.
pub fn write_header<W: Write>(
    out: &mut W,
    kind: &str,
    timestamp: Option<u64>,
    comments: &[String],
) -> Result<()> {
    writeln!(
        out,
        "# etalon-walkoff {kind} format={FORMAT_VERSION} version={}",
        env!("CARGO_PKG_VERSION")
    )?;
    if let Some(ts) = timestamp {
        writeln!(out, "# timestamp={ts}")?;
    }
    for line in comments {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub fn write_csv_rows<W: Write, S: Serialize>(out: W, rows: &[S]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
