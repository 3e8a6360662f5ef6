use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::runtime::Note;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub sample: usize,
    pub sim_time: f64,
    pub loss: f64,
}

/// Sampled at every harvest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub sim_time: f64,
    pub timeout: f64,
    pub total_power: f64,
    pub pouches: u64,
    pub reissues: u64,
    pub crashes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub pouches: u64,
    pub reissues: u64,
    pub crashes: u64,
    pub handler_crashes: u64,
    pub manager_crashes: u64,
    pub recoveries: u64,
    pub issued: u64,
    pub tasks_done: u64,
    pub commits: u64,
    pub stored: u64,
    pub abandoned: u64,
    pub protocol_errors: u64,
}

/// Who produced a note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActorRef {
    Manager,
    Handler(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub actor: ActorRef,
    pub note: Note,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> io::Result<()> {
    write_rows(path, rows, &["epoch", "sample", "sim_time", "loss"])
}

pub fn write_perf_csv(path: &Path, rows: &[PerfRow]) -> io::Result<()> {
    write_rows(
        path,
        rows,
        &[
            "sim_time",
            "timeout",
            "total_power",
            "pouches",
            "reissues",
            "crashes",
        ],
    )
}

pub fn read_loss_csv(path: &Path) -> io::Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(io::Error::other))
        .collect()
}

pub fn read_perf_csv(path: &Path) -> io::Result<Vec<PerfRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(io::Error::other))
        .collect()
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean loss of the last `window` rows over the mean of the first `window`.
pub fn loss_ratio(rows: &[LossRow], window: usize) -> Option<f64> {
    if window == 0 || rows.len() < window {
        return None;
    }
    let mean = |rs: &[LossRow]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
    Some(mean(&rows[rows.len() - window..]) / mean(&rows[..window]))
}
