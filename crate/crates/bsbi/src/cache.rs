//! On-disk dataset cache.

use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use bsbi_core::simulators::{generate_dataset_with, Dataset, SimPair, Task};

use crate::format::{read_f64s, replace_file, write_f64s, FormatError, Header, Result};

fn header_for(task: Task, budget: usize, seed: u64, test_size: usize) -> Header {
    Header {
        task: task.name().to_string(),
        budget: budget as u64,
        seed,
        theta_dim: task.theta_dim() as u32,
        x_dim: task.x_dim() as u32,
        count: (budget + test_size) as u64,
    }
}

/// Serializes train, val and test pairs (in that order) after the header.
pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header_for(d.task, d.budget, d.seed, d.test.len()).write(&mut out)?;
    for p in d.train.iter().chain(&d.val).chain(&d.test) {
        write_f64s(&mut out, &p.theta)?;
        write_f64s(&mut out, &p.x)?;
    }
    Ok(out)
}

/// Reads a dataset, requiring the header to match the request exactly.
pub fn decode_dataset(bytes: &[u8], task: Task, budget: usize, seed: u64, test_size: usize) -> Result<Dataset> {
    let mut r = Cursor::new(bytes);
    let found = Header::read(&mut r)?;
    let want = header_for(task, budget, seed, test_size);
    if found != want {
        return Err(FormatError::HeaderMismatch(format!("found {found:?}, wanted {want:?}")));
    }
    let (dt, dx) = (task.theta_dim(), task.x_dim());
    let flat = read_f64s(&mut BufReader::new(r), (budget + test_size) * (dt + dx))?;
    let mut pairs: Vec<SimPair> = flat
        .chunks_exact(dt + dx)
        .map(|c| SimPair { theta: c[..dt].to_vec(), x: c[dt..].to_vec() })
        .collect();
    let test = pairs.split_off(budget);
    let val = pairs.split_off(Dataset::train_size(budget));
    Ok(Dataset { task, budget, seed, train: pairs, val, test })
}

pub fn cache_path(dir: &Path, task: Task, budget: usize, seed: u64) -> PathBuf {
    dir.join(format!("{}-{budget}-{seed}.bin", task.name()))
}

/// Loads the cached dataset if its header matches, otherwise simulates and
/// writes it.
pub fn load_or_generate(dir: &Path, task: Task, budget: usize, seed: u64, test_size: usize) -> Result<Dataset> {
    let path = cache_path(dir, task, budget, seed);
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(d) = decode_dataset(&bytes, task, budget, seed, test_size) {
            return Ok(d);
        }
    }
    let d = generate_dataset_with(task, budget, seed, test_size)?;
    replace_file(&path, &encode_dataset(&d)?)?;
    Ok(d)
}
