//! Training-state persistence: the "OPT1" optimizer blob (step count plus
//! first/second moment vectors, f64 little-endian) and the line-delimited
//! JSON metrics log.

use super::io_error;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"OPT1";

/// Adam state over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn zeros(len: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

pub fn write_optimizer_state(path: &Path, state: &OptimizerState) -> Result<()> {
    if state.m.len() != state.v.len() {
        return Err(Error::argument(format!(
            "moment vectors disagree: {} vs {}",
            state.m.len(),
            state.v.len()
        )));
    }
    let mut bytes = Vec::with_capacity(20 + state.m.len() * 16);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&state.step.to_le_bytes());
    bytes.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for v in state.m.iter().chain(&state.v) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn read_optimizer_state(path: &Path) -> Result<OptimizerState> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let name = path.display();
    if bytes.len() < 20 {
        return Err(Error::format(format!(
            "{name}: header truncated at byte offset {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(format!(
            "{name}: bad magic at byte offset 0, expected \"OPT1\""
        )));
    }
    let step = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = 20 + len * 16;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{name}: {len} parameters need {expected} bytes, file ends at byte offset {}",
            bytes.len()
        )));
    }
    let read_vec = |start: usize| {
        bytes[start..start + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Ok(OptimizerState {
        step,
        m: read_vec(20),
        v: read_vec(20 + len * 8),
    })
}

/// Appends one line to a line-delimited JSON log, creating the file if
/// needed. The caller passes a single serialized JSON object.
pub fn append_jsonl(path: &Path, json_line: &str) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    writeln!(file, "{json_line}").map_err(|e| io_error(path, e))
}

/// Reads every object from a line-delimited JSON log.
pub fn read_jsonl(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            Error::format(format!("{}: line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
