//! File helpers shared by the CLI and the pipeline runner.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{Error, Result};
use crate::Dense;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_text(path, &text)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Completed (dense) matrix with its key lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseFile {
    pub solutes: Vec<String>,
    pub solvents: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DenseFile {
    pub fn new(matrix: &Dense, solutes: &[String], solvents: &[String]) -> Self {
        Self {
            solutes: solutes.to_vec(),
            solvents: solvents.to_vec(),
            values: matrix.to_rows(),
        }
    }

    pub fn matrix(&self) -> Result<Dense> {
        let m = Dense::from_rows(&self.values)?;
        if m.rows != self.solutes.len() || (m.rows > 0 && m.cols != self.solvents.len()) {
            return Err(Error::contract("dense matrix shape does not match key lists"));
        }
        Ok(m)
    }
}
