//! Tab-delimited record files with a header row.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::{Error, Result};

fn reader_builder() -> csv::ReaderBuilder {
    let mut builder = csv::ReaderBuilder::new();
    builder.delimiter(b'\t').has_headers(true).trim(csv::Trim::All);
    builder
}

pub(crate) fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    read_from(file, path)
}

pub(crate) fn read_from<T: DeserializeOwned, R: std::io::Read>(
    input: R,
    path: &Path,
) -> Result<Vec<T>> {
    let mut reader = reader_builder().from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize() {
        match row {
            Ok(rec) => out.push(rec),
            Err(err) => {
                let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: err.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub(crate) fn writer<W: std::io::Write>(out: W, header: bool) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(header)
        .from_writer(out)
}

pub(crate) fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = writer(file, true);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
