use std::fmt::Write as _;

use super::{joint_train, prepare, variance, Dataset};
use crate::config::ExperimentConfig;
use crate::error::{domain, Error, Result};

/// Worker count from `MXL_THREADS`, defaulting to 1.
pub fn worker_threads() -> Result<usize> {
    match std::env::var("MXL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("MXL_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub metric: f64,
    pub s: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub variance: f64,
}

impl SweepTable {
    /// `seed,metric,s` rows followed by a `variance` row; `s` is
    /// space-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,metric,s\n");
        for r in &self.rows {
            let s: Vec<String> = r.s.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", r.seed, r.metric, s.join(" "));
        }
        let _ = writeln!(out, "variance,{},", self.variance);
        out
    }
}

fn run_one(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<SweepRow> {
    let mut c = cfg.clone();
    c.train.seed = seed;
    let prepared = prepare(data, &c)?;
    let out = joint_train(&prepared, &c)?;
    Ok(SweepRow {
        seed,
        metric: out.summary.holdout_metric,
        s: out.summary.frozen_s,
    })
}

/// Trains once per seed and reports each holdout metric and the population
/// variance across seeds. Runs are spread over `threads` workers and merged
/// in seed order, so the table does not depend on the worker count.
pub fn seed_sweep(
    data: &Dataset,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<SweepTable> {
    if seeds.len() < 2 {
        return domain("a sweep needs at least two seeds");
    }
    let threads = threads.clamp(1, seeds.len());
    let mut slots: Vec<Option<Result<SweepRow>>> = (0..seeds.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &seed) in slots.iter_mut().zip(seeds) {
            *slot = Some(run_one(data, cfg, seed));
        }
    } else {
        let chunk = seeds.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (slot_chunk, seed_chunk) in slots.chunks_mut(chunk).zip(seeds.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, &seed) in slot_chunk.iter_mut().zip(seed_chunk) {
                        *slot = Some(run_one(data, cfg, seed));
                    }
                });
            }
        });
    }
    let rows = slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<f64> = rows.iter().map(|r| r.metric).collect();
    Ok(SweepTable {
        variance: variance(&metrics),
        rows,
    })
}
