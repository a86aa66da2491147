//! Writes report files into the output directory according to `--format`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::args::Format;
use crate::error::CliError;

pub struct Output {
    dir: PathBuf,
    format: Format,
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            format,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn wants(&self, f: Format) -> bool {
        self.format == Format::All || self.format == f
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if self.wants(Format::Json) {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            fs::write(self.dir.join(format!("{name}.json")), text)?;
        }
        Ok(())
    }

    /// Writes an already serialized CSV document.
    pub fn csv(&self, name: &str, text: &str) -> Result<(), CliError> {
        if self.wants(Format::Csv) {
            fs::write(self.dir.join(format!("{name}.csv")), text)?;
        }
        Ok(())
    }

    pub fn svg(&self, name: &str, text: &str) -> Result<(), CliError> {
        if self.wants(Format::Svg) {
            fs::write(self.dir.join(format!("{name}.svg")), text)?;
        }
        Ok(())
    }

    /// Serializes rows with a header into CSV text.
    pub fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
