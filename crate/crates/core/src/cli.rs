use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mxl::asn::lemma1_search;
use mxl::beam_codebook::build_codebook;
use mxl::config::{ExperimentConfig, Scheme};
use mxl::container::{self, Payload};
use mxl::trainer::{
    evaluate, generate_dataset, joint_train, metric_name, prepare, read_metrics, seed_sweep,
    worker_threads, write_metrics, Dataset, MetricsLine, Model, Summary,
};
use mxl::verify::{gradcheck_suite, Scope};
use mxl::{Error, Result};

/// Largest relative gradient error `gradcheck` accepts.
const GRAD_TOL: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "mxl", version, about = "Joint antenna selection and extrapolation experiments")]
pub struct Cli {
    /// Progress and per-epoch details on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Simulate the scene and write a dataset container.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the beam codebook.
        #[arg(long)]
        codebook_out: Option<PathBuf>,
    },
    /// Train one scheme; writes `<run_id>.jsonl`, `.ckpt` and `.json` into `--out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.scheme`.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Re-score a checkpoint on the holdout split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the summary as one JSON line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for non-hot vectors that satisfy the power-sum equalities.
    LemmaCheck {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        descent_runs: usize,
    },
    /// Compare tape gradients with central differences.
    Gradcheck {
        /// ops, asn, aden or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once per seed and tabulate the holdout metric.
    SeedSweep {
        #[arg(long)]
        config: PathBuf,
        /// A count N (seeds train.seed .. train.seed+N) or a comma list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset container; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Merge metrics files into one per-epoch CSV.
    PlotData {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sidecar written next to every checkpoint.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub checkpoint_sha256: String,
    pub frozen_s: Vec<usize>,
    pub scale: f64,
    pub rk_a: Option<[f64; 3]>,
    pub rk_b: Option<[f64; 4]>,
    pub parameters: Vec<(String, Vec<usize>)>,
    pub holdout_metric: f64,
}

pub enum Outcome {
    Ok,
    /// An internal assertion failed; the message was already printed.
    Failed,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_dataset(path: &Path) -> Result<(usize, Dataset)> {
    let (n_t, payload) = container::read_file(path)?;
    match payload {
        Payload::Channels(v) => Ok((n_t, Dataset::Channels(v))),
        Payload::Covariances(v) => Ok((n_t, Dataset::Covariances(v))),
        other => Err(Error::Format(format!(
            "{}: expected a dataset, found a {:?} container",
            path.display(),
            other.kind()
        ))),
    }
}

fn dataset_payload(d: Dataset) -> Payload {
    match d {
        Dataset::Channels(v) => Payload::Channels(v),
        Dataset::Covariances(v) => Payload::Covariances(v),
    }
}

fn check_antennas(n_t: usize, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    if n_t != cfg.array.n_t() {
        return Err(usage(format!(
            "{} holds {n_t}-antenna samples, config describes {}",
            path.display(),
            cfg.array.n_t()
        )));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let verbose = cli.verbose;
    match cli.cmd {
        Cmd::GenData {
            config,
            out,
            codebook_out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = generate_dataset(&cfg)?;
            let n = data.len();
            let sum = container::write_file(&out, cfg.array.n_t(), &dataset_payload(data))?;
            eprintln!("samples={n} sha256={sum}");
            if let Some(path) = codebook_out {
                let cb = build_codebook(&cfg.array, cfg.codebook.oversampling)?;
                let sum = container::write_file(&path, cfg.array.n_t(), &Payload::Codebook(cb.vectors))?;
                if verbose {
                    eprintln!("codebook sha256={sum}");
                }
            }
            Ok(Outcome::Ok)
        }
        Cmd::Train {
            config,
            data,
            out,
            scheme,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = scheme {
                cfg.train.scheme = Scheme::parse(&s)?;
            }
            let (n_t, dataset) = load_dataset(&data)?;
            check_antennas(n_t, &cfg, &data)?;
            let prepared = prepare(&dataset, &cfg)?;
            let outcome = joint_train(&prepared, &cfg)?;
            if verbose {
                for r in &outcome.history {
                    eprintln!(
                        "epoch {:>3} rho={:<9} loss={:.6e} asn={:.3e} aden={:.6e} {}={:.6e} s={:?}",
                        r.epoch, r.rho, r.loss_total, r.loss_asn, r.loss_aden, metric_name(cfg.train.task), r.metric, r.s
                    );
                }
            }
            fs::create_dir_all(&out)?;
            let id = &outcome.summary.run_id;
            let mut lines = Vec::new();
            write_metrics(&mut lines, &outcome.history, &outcome.summary)?;
            write(&out.join(format!("{id}.jsonl")), &lines)?;
            let store = &outcome.model.store;
            let entries: Vec<_> = store.names().iter().cloned().zip(store.tensors().iter().cloned()).collect();
            let sha = container::write_file(&out.join(format!("{id}.ckpt")), n_t, &Payload::Checkpoint(entries))?;
            let rk = outcome.model.aden.rk_coefficients(store);
            let manifest = Manifest {
                run_id: id.clone(),
                config: cfg.clone(),
                checkpoint_sha256: sha,
                frozen_s: outcome.summary.frozen_s.clone(),
                scale: prepared.scale,
                rk_a: rk.map(|c| c.0),
                rk_b: rk.map(|c| c.1),
                parameters: store
                    .names()
                    .iter()
                    .zip(store.tensors())
                    .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                    .collect(),
                holdout_metric: outcome.summary.holdout_metric,
            };
            let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
            write(&out.join(format!("{id}.json")), format!("{text}\n").as_bytes())?;
            eprintln!(
                "{id}: {}={:.6e} s={:?}",
                outcome.summary.metric_name, outcome.summary.holdout_metric, outcome.summary.frozen_s
            );
            Ok(Outcome::Ok)
        }
        Cmd::Eval {
            checkpoint,
            data,
            out,
        } => {
            let manifest_path = checkpoint.with_extension("json");
            let text = fs::read_to_string(&manifest_path)
                .map_err(|e| usage(format!("{}: {e}", manifest_path.display())))?;
            let manifest: Manifest =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
            let cfg = manifest.config;
            let (n_t, payload) = container::read_file(&checkpoint)?;
            let Payload::Checkpoint(entries) = payload else {
                return Err(Error::Format(format!("{} is not a checkpoint", checkpoint.display())));
            };
            check_antennas(n_t, &cfg, &checkpoint)?;
            let (n_data, dataset) = load_dataset(&data)?;
            check_antennas(n_data, &cfg, &data)?;
            let prepared = prepare(&dataset, &cfg)?;
            if prepared.scale != manifest.scale {
                return Err(usage(format!(
                    "{} is not the dataset this checkpoint was trained on",
                    data.display()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let mut model = Model::new(&cfg, prepared.classes, &mut rng)?;
            model.store.load(entries)?;
            let mask = model.selection()?;
            let eval = evaluate(&model, &prepared, &prepared.holdout, &mask)?;
            let frozen_s: Vec<usize> = (0..n_t).filter(|&i| mask[i] == 1.0).collect();
            let summary = Summary {
                run_id: manifest.run_id,
                scheme: cfg.train.scheme.name().into(),
                task: cfg.train.task.name().into(),
                seed: cfg.train.seed,
                m_t: cfg.train.m_t,
                metric_name: metric_name(cfg.train.task).into(),
                holdout_metric: eval.metric,
                frozen_s,
                soft: match &model.asn {
                    Some(asn) => asn.state(&model.store)?.soft,
                    None => Vec::new(),
                },
                final_loss_asn: f64::NAN,
                psd_fraction: eval.psd_fraction,
            };
            eprintln!("{}: {}={:.6e}", summary.run_id, summary.metric_name, summary.holdout_metric);
            if let Some(path) = out {
                let line = serde_json::to_string(&summary).map_err(|e| Error::Format(e.to_string()))?;
                write(&path, format!("{line}\n").as_bytes())?;
            }
            Ok(Outcome::Ok)
        }
        Cmd::LemmaCheck {
            n,
            m,
            trials,
            seed,
            descent_runs,
        } => {
            if m == 0 || m >= n {
                return Err(usage(format!("--m must satisfy 1 <= m < n, got m={m}, n={n}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = lemma1_search(n, m, trials, descent_runs, &mut rng)?;
            eprintln!(
                "n={} m={} trials={} certified={} false_positives={} descent_runs={} converged={} converged_certified={}",
                report.n,
                report.m,
                report.trials,
                report.certified,
                report.false_positives,
                report.descent_runs,
                report.converged,
                report.converged_certified
            );
            if report.passed() {
                eprintln!("PASS");
                Ok(Outcome::Ok)
            } else {
                eprintln!("FAIL witness={:?}", report.witness.unwrap_or_default());
                Ok(Outcome::Failed)
            }
        }
        Cmd::Gradcheck { scope, seed } => {
            let scope = Scope::parse(&scope)?;
            let results = gradcheck_suite(scope, seed)?;
            let mut worst: f64 = 0.0;
            let mut failed = Vec::new();
            for r in &results {
                worst = worst.max(r.max_rel_error);
                if !(r.max_rel_error < GRAD_TOL) {
                    failed.push(r.name.clone());
                }
                if verbose {
                    eprintln!("{:<28} {:.3e}", r.name, r.max_rel_error);
                }
            }
            eprintln!("checks={} max_rel_error={worst:.3e}", results.len());
            if failed.is_empty() {
                eprintln!("PASS");
                Ok(Outcome::Ok)
            } else {
                eprintln!("FAIL {}", failed.join(" "));
                Ok(Outcome::Failed)
            }
        }
        Cmd::SeedSweep {
            config,
            seeds,
            out,
            data,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = parse_seeds(&seeds, cfg.train.seed)?;
            let dataset = match data {
                Some(path) => {
                    let (n_t, d) = load_dataset(&path)?;
                    check_antennas(n_t, &cfg, &path)?;
                    d
                }
                None => generate_dataset(&cfg)?,
            };
            let table = seed_sweep(&dataset, &cfg, &seeds, worker_threads()?)?;
            write(&out, table.to_csv().as_bytes())?;
            eprintln!("seeds={} variance={:.6e}", table.rows.len(), table.variance);
            Ok(Outcome::Ok)
        }
        Cmd::PlotData { metrics, out } => {
            let csv = plot_csv(&metrics)?;
            write(&out, csv.as_bytes())?;
            Ok(Outcome::Ok)
        }
    }
}

fn parse_seeds(text: &str, base: u64) -> Result<Vec<u64>> {
    let bad = || usage(format!("--seeds must be a count or a comma list, got {text:?}"));
    if text.contains(',') {
        return text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = text.trim().parse().map_err(|_| bad())?;
    Ok((0..n).map(|i| base.wrapping_add(i)).collect())
}

/// `epoch` plus one metric column per run, named by run id.
fn plot_csv(files: &[PathBuf]) -> Result<String> {
    let mut columns: Vec<(String, BTreeMap<usize, f64>)> = Vec::new();
    for path in files {
        let f = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let lines = read_metrics(f, &path.display().to_string())?;
        let mut per_run: Vec<(String, BTreeMap<usize, f64>)> = Vec::new();
        for line in lines {
            if let MetricsLine::Epoch(r) = line {
                match per_run.iter_mut().find(|(id, _)| *id == r.run_id) {
                    Some((_, m)) => {
                        m.insert(r.epoch, r.metric);
                    }
                    None => per_run.push((r.run_id, BTreeMap::from([(r.epoch, r.metric)]))),
                }
            }
        }
        if per_run.is_empty() {
            return Err(Error::Format(format!("{}: no epoch records", path.display())));
        }
        for (id, m) in per_run {
            if columns.iter().any(|(c, _)| *c == id) {
                return Err(usage(format!("run {id} appears in more than one metrics file")));
            }
            columns.push((id, m));
        }
    }
    let epochs: std::collections::BTreeSet<usize> = columns.iter().flat_map(|(_, m)| m.keys().copied()).collect();
    let mut out = String::from("epoch");
    for (id, _) in &columns {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for e in epochs {
        out.push_str(&e.to_string());
        for (_, m) in &columns {
            out.push(',');
            if let Some(v) = m.get(&e) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    Ok(out)
}
