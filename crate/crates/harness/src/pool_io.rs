//! Binary training pool files.
//!
//! Layout: the 8-byte magic `MDSPOOL1`, a little-endian u64 header length,
//! a JSON header, then little-endian f64 blocks: θ (M × d_θ), summaries
//! (M × d_s) and, when `has_datasets`, every dataset (M × N × row width),
//! all row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mds_core::linalg::Matrix;
use mds_core::simulators::{Task, TrainingPool};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 8] = b"MDSPOOL1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolHeader {
    pub task: Task,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub d_x: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub d_s: usize,
    pub d_theta: usize,
    pub master_seed: u64,
    pub has_datasets: bool,
}

fn write_block<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_block<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_pool(path: &Path, task: &Task, pool: &TrainingPool) -> Result<()> {
    let (d_x, t) = task.data_shape();
    let header = PoolHeader {
        task: task.clone(),
        m: pool.len(),
        n: task.n(),
        d_x,
        t,
        d_s: task.summary_dim(),
        d_theta: task.theta_dim(),
        master_seed: pool.master_seed,
        has_datasets: pool.has_datasets(),
    };
    let io = |e| HarnessError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&json).map_err(io)?;
    write_block(&mut w, pool.thetas.as_slice()).map_err(io)?;
    write_block(&mut w, pool.summaries.as_slice()).map_err(io)?;
    if header.has_datasets {
        for d in &pool.datasets {
            write_block(&mut w, d.as_slice()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_pool(path: &Path) -> Result<(Task, TrainingPool)> {
    let io = |e| HarnessError::io(path, e);
    let bad = |reason: &str| HarnessError::format(path, reason);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a pool file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(io)?;
    let h: PoolHeader = serde_json::from_slice(&json).map_err(|e| HarnessError::format(path, e))?;
    let task = h.task.clone();
    if task.theta_dim() != h.d_theta || task.summary_dim() != h.d_s || task.n() != h.n || h.m == 0 {
        return Err(bad("header dimensions disagree with the task"));
    }
    let thetas = Matrix::from_vec(
        h.m,
        h.d_theta,
        read_block(&mut r, h.m * h.d_theta).map_err(io)?,
    )?;
    let summaries = Matrix::from_vec(h.m, h.d_s, read_block(&mut r, h.m * h.d_s).map_err(io)?)?;
    let mut datasets = Vec::new();
    if h.has_datasets {
        let width = task.row_dim();
        for _ in 0..h.m {
            let data = read_block(&mut r, h.n * width).map_err(io)?;
            datasets.push(Matrix::from_vec(h.n, width, data)?);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after the last block"));
    }
    Ok((
        task.clone(),
        TrainingPool {
            task_name: task.name().into(),
            master_seed: h.master_seed,
            thetas,
            summaries,
            datasets,
        },
    ))
}
