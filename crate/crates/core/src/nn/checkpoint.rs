//! Parameter checkpoint file.
//!
//! Layout: a text header line `TGNNCKPT 1`, a JSON line describing the step
//! count and each parameter's name and shape, then every parameter's values
//! as little-endian `f64` in header order, row-major.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParameterStore;
use crate::error::{Error, Result};

const MAGIC: &str = "TGNNCKPT 1";

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<()> {
    let header = Header {
        step: store.step(),
        params: store
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
    };
    let mut buf = Vec::new();
    writeln!(buf, "{MAGIC}").unwrap();
    serde_json::to_writer(&mut buf, &header).map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    for p in store.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Restores parameter values and step count. Optimizer moments start at zero.
pub fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint",
            path.display()
        )));
    }
    line.clear();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(e.to_string()))?;
    let mut store = ParameterStore::new();
    for entry in header.params {
        let mut bytes = vec![0u8; entry.rows * entry.cols * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(entry.name, Matrix::from_vec(entry.rows, entry.cols, data)?)?;
    }
    let mut rest = Vec::new();
    reader
        .read_to_end(&mut rest)
        .map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    store.set_step(header.step);
    Ok(store)
}
