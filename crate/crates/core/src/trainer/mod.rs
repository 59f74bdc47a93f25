//! Joint training of the selection and extrapolation networks, evaluation
//! on the held-out split, and multi-seed sweeps.

mod metrics;
mod sweep;

pub use metrics::{
    beam_accuracy, hermitian_eigenvalues, is_psd, median, nmse, nmse_packed, read_metrics,
    variance, write_metrics, EpochRecord, MetricsLine, Summary,
};
pub use sweep::{seed_sweep, worker_threads, SweepRow, SweepTable};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aden::{aden_loss_node, beam_loss_node, Aden, AdenShape, FineKind};
use crate::asn::{asn_penalty_node, Asn};
use crate::beam_codebook::build_codebook;
use crate::channel_sim::{
    collection_blocks, generate_scene_dataset, observe, signal_power, ChannelSample,
    CovarianceSample, PilotConfig,
};
use crate::config::{ExperimentConfig, Task};
use crate::error::{Error, Result};
use crate::grad::{AdamState, Tape, Tensor, Var};
use crate::nn::{Bound, ParamStore};

/// `[re(u); im(u)]`.
pub fn pack_real_imag(u: &[Complex64]) -> Vec<f64> {
    u.iter().map(|c| c.re).chain(u.iter().map(|c| c.im)).collect()
}

pub fn unpack_real_imag(packed: &[f64]) -> Result<Vec<Complex64>> {
    if !packed.len().is_multiple_of(2) {
        return Err(Error::Shape("packed length must be even".into()));
    }
    let (re, im) = packed.split_at(packed.len() / 2);
    Ok(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
}

/// `[s; s]`.
pub fn expand_selection_vector(s: &[f64]) -> Vec<f64> {
    s.iter().chain(s).copied().collect()
}

/// `S = s sᵀ` flattened row-major, stacked twice.
pub fn expand_selection_matrix(s: &[f64]) -> Vec<f64> {
    let outer: Vec<f64> = s.iter().flat_map(|a| s.iter().map(move |b| a * b)).collect();
    expand_selection_vector(&outer)
}

/// Evenly spaced antennas `round(i · n_t / m_t)`, `i = 0..m_t`.
pub fn uniform_pattern(n_t: usize, m_t: usize) -> Vec<usize> {
    (0..m_t)
        .map(|i| (i as f64 * n_t as f64 / m_t as f64).round() as usize)
        .collect()
}

fn mask_from(n_t: usize, indices: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; n_t];
    for &i in indices {
        s[i] = 1.0;
    }
    s
}

/// Raw samples as read from a dataset container.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Channels(Vec<ChannelSample>),
    Covariances(Vec<CovarianceSample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Channels(v) => v.len(),
            Dataset::Covariances(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples described by the config: the first `data.users` grid channels
/// for the channel and beam tasks, one covariance per collection block for
/// the ccm task.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let d = &cfg.data;
    match cfg.train.task {
        Task::Channel | Task::Beam => {
            let cb = build_codebook(&cfg.array, cfg.codebook.oversampling)?;
            Ok(Dataset::Channels(generate_scene_dataset(
                &cfg.scene,
                &cfg.array,
                d.users,
                &cb,
                cfg.codebook.inner_product,
            )?))
        }
        Task::Ccm => Ok(Dataset::Covariances(collection_blocks(
            &cfg.scene,
            &cfg.array,
            d.block_rows,
            d.block_cols,
            d.block_step,
            d.block_stride,
        )?)),
    }
}

/// Deterministic train/holdout split of `n` samples.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let holdout = idx.split_off(n_train);
    Ok((idx, holdout))
}

/// Packed, normalized training material.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub task: Task,
    pub n_t: usize,
    /// Packed width of one input/target row.
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Every packed value was divided by this.
    pub scale: f64,
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl Prepared {
    pub fn rows(&self, src: &[f64], idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(&src[i * self.dim..(i + 1) * self.dim]);
        }
        Tensor::new(vec![idx.len(), self.dim], data).expect("row width is dim")
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Packs and normalizes a dataset for the configured task. The scale is the
/// RMS of the packed training targets. With `noisy_inputs`, each channel is
/// passed through an identity pilot at `input_snr_db` before packing.
pub fn prepare(data: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let n_t = cfg.array.n_t();
    let task = cfg.train.task;
    let mut labels = Vec::new();
    let mut classes = 0;
    let (raw_inputs, raw_targets, dim): (Vec<f64>, Vec<f64>, usize) = match (task, data) {
        (Task::Channel | Task::Beam, Dataset::Channels(samples)) => {
            if samples.iter().any(|s| s.h.len() != n_t) {
                return Err(Error::Config(format!("dataset channels do not have {n_t} antennas")));
            }
            let targets: Vec<f64> = samples.iter().flat_map(|s| pack_real_imag(&s.h)).collect();
            let inputs = if cfg.train.noisy_inputs {
                let hs: Vec<Vec<Complex64>> = samples.iter().map(|s| s.h.clone()).collect();
                let pilot = PilotConfig::with_snr(
                    DMatrix::identity(n_t, n_t),
                    cfg.train.input_snr_db,
                    signal_power(&hs),
                )?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x6e6f_6973_6521);
                let mut out = Vec::with_capacity(targets.len());
                for h in &hs {
                    out.extend(pack_real_imag(&observe(h, &pilot, &mut rng)?));
                }
                out
            } else {
                targets.clone()
            };
            if task == Task::Beam {
                classes = build_codebook(&cfg.array, cfg.codebook.oversampling)?.len();
                labels = samples.iter().map(|s| s.beam_label as usize).collect();
                if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
                    return Err(Error::Config(format!(
                        "beam label {bad} exceeds the codebook size {classes}"
                    )));
                }
            }
            (inputs, targets, 2 * n_t)
        }
        (Task::Ccm, Dataset::Covariances(samples)) => {
            if samples.iter().any(|s| s.n != n_t) {
                return Err(Error::Config(format!("dataset covariances are not {n_t}x{n_t}")));
            }
            let targets: Vec<f64> = samples.iter().flat_map(|s| pack_real_imag(&s.r)).collect();
            (targets.clone(), targets, 2 * n_t * n_t)
        }
        (task, _) => {
            return Err(Error::Config(format!(
                "dataset kind does not match the {} task",
                task.name()
            )))
        }
    };
    let (train, holdout) = split_indices(data.len(), cfg.train.split_fraction, cfg.train.split_seed)?;
    let mut sq = 0.0;
    for &i in &train {
        sq += raw_targets[i * dim..(i + 1) * dim].iter().map(|v| v * v).sum::<f64>();
    }
    let scale = (sq / (train.len() * dim) as f64).sqrt();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain("training targets are all zero".into()));
    }
    Ok(Prepared {
        task,
        n_t,
        dim,
        inputs: raw_inputs.iter().map(|v| v / scale).collect(),
        targets: raw_targets.iter().map(|v| v / scale).collect(),
        labels,
        classes,
        scale,
        train,
        holdout,
    })
}

/// Selection head (learned or fixed) plus extrapolation network.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub asn: Option<Asn>,
    pub aden: Aden,
    pub task: Task,
    pub n_t: usize,
    pub m_t: usize,
    /// Mask used when the selection is not learned.
    pub fixed_mask: Vec<f64>,
}

/// Loss nodes of one mini-batch.
#[derive(Clone, Debug)]
pub struct StepGraph {
    pub bound: Bound,
    pub total: Var,
    pub loss_asn: Var,
    pub loss_aden: Var,
    /// The masked network input.
    pub masked: Var,
    pub hard: Vec<f64>,
}

impl Model {
    pub fn new(cfg: &ExperimentConfig, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let n_t = cfg.array.n_t();
        let m_t = cfg.train.m_t;
        let scheme = cfg.train.scheme;
        let mut store = ParamStore::new();
        let asn = if scheme.learns_selection() {
            Some(Asn::new(
                &mut store,
                n_t,
                m_t,
                cfg.model.asn_width,
                cfg.model.asn_layers,
                rng,
            )?)
        } else {
            None
        };
        let fine = if scheme.runge_kutta() {
            FineKind::RungeKutta
        } else {
            FineKind::Dense
        };
        let shape = match cfg.train.task {
            Task::Channel => AdenShape {
                input: 2 * n_t,
                output: 2 * n_t,
                width: cfg.model.aden_width,
                coarse: true,
                fine,
                hermitian: None,
            },
            Task::Beam => AdenShape {
                input: 2 * n_t,
                output: classes,
                width: cfg.model.aden_width,
                coarse: false,
                fine,
                hermitian: None,
            },
            Task::Ccm => AdenShape {
                input: 2 * n_t * n_t,
                output: 2 * n_t * n_t,
                width: cfg.model.ccm_width,
                coarse: true,
                fine,
                hermitian: Some(n_t),
            },
        };
        let aden = Aden::new(&mut store, shape, rng)?;
        Ok(Self {
            store,
            asn,
            aden,
            task: cfg.train.task,
            n_t,
            m_t,
            fixed_mask: mask_from(n_t, &uniform_pattern(n_t, m_t)),
        })
    }

    /// Current hard selection mask.
    pub fn selection(&self) -> Result<Vec<f64>> {
        match &self.asn {
            Some(asn) => Ok(asn.state(&self.store)?.hard),
            None => Ok(self.fixed_mask.clone()),
        }
    }

    fn mask_input(&self, tape: &mut Tape, sel: Var, x: Var) -> Result<Var> {
        let row = match self.task {
            Task::Ccm => {
                let outer = tape.outer(sel, sel)?;
                let flat = tape.reshape(outer, &[self.n_t * self.n_t])?;
                tape.tile(flat, 2)?
            }
            Task::Channel | Task::Beam => tape.tile(sel, 2)?,
        };
        tape.mul_row(x, row)
    }

    /// Records `L = L_ASN + ρ · L_ADEN` for the given rows.
    pub fn step_graph(
        &self,
        tape: &mut Tape,
        data: &Prepared,
        rows: &[usize],
        rho: f64,
        cfg: &ExperimentConfig,
    ) -> Result<StepGraph> {
        let w = &cfg.loss;
        let bound = self.store.bind(tape, true);
        let (sel, loss_asn, hard) = match &self.asn {
            Some(asn) => {
                let g = asn.forward(tape, &bound)?;
                let l = asn_penalty_node(tape, g.soft, self.m_t, w.alpha1, w.alpha2)?;
                (g.selection, l, g.state.hard)
            }
            None => {
                let s = tape.constant(Tensor::vector(self.fixed_mask.clone()));
                let zero = tape.constant(Tensor::scalar(0.0));
                (s, zero, self.fixed_mask.clone())
            }
        };
        let x = tape.constant(data.rows(&data.inputs, rows));
        let masked = self.mask_input(tape, sel, x)?;
        let out = self.aden.forward(tape, &bound, masked)?;
        let loss_aden = match self.task {
            Task::Beam => {
                let labels: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
                beam_loss_node(tape, out.fine, &labels, w.beta2)?
            }
            Task::Channel | Task::Ccm => {
                let y = tape.constant(data.rows(&data.targets, rows));
                aden_loss_node(tape, y, &out, w.beta1, w.beta2)?
            }
        };
        let weighted = tape.scale(loss_aden, rho)?;
        let total = tape.add(loss_asn, weighted)?;
        Ok(StepGraph {
            bound,
            total,
            loss_asn,
            loss_aden,
            masked,
            hard,
        })
    }

    /// Network outputs for the given rows under a fixed mask.
    pub fn predict(&self, data: &Prepared, rows: &[usize], mask: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for chunk in rows.chunks(256) {
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape, false);
            let sel = tape.constant(Tensor::vector(mask.to_vec()));
            let x = tape.constant(data.rows(&data.inputs, chunk));
            let masked = self.mask_input(&mut tape, sel, x)?;
            let y = self.aden.forward(&mut tape, &p, masked)?;
            out.extend_from_slice(tape.value(y.fine).data());
        }
        Ok(out)
    }
}

/// Holdout metrics under a frozen selection.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// NMSE for channel and ccm tasks, accuracy for the beam task.
    pub metric: f64,
    pub psd_fraction: Option<f64>,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Beam => "accuracy",
        Task::Channel | Task::Ccm => "nmse",
    }
}

/// Scores the model on `rows` with the selection mask held fixed.
pub fn evaluate(model: &Model, data: &Prepared, rows: &[usize], mask: &[f64]) -> Result<Evaluation> {
    let pred = model.predict(data, rows, mask)?;
    match data.task {
        Task::Beam => {
            let c = data.classes;
            let guess: Vec<usize> = pred
                .chunks(c)
                .map(|row| {
                    let mut best = 0;
                    for (j, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            let truth: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
            Ok(Evaluation {
                metric: beam_accuracy(&guess, &truth)?,
                psd_fraction: None,
            })
        }
        Task::Channel | Task::Ccm => {
            let truth = data.rows(&data.targets, rows);
            let metric = nmse_packed(truth.data(), &pred)?;
            let psd_fraction = if data.task == Task::Ccm {
                let mut ok = 0;
                for row in pred.chunks(data.dim) {
                    if is_psd(row, data.n_t)? {
                        ok += 1;
                    }
                }
                Some(ok as f64 / rows.len().max(1) as f64)
            } else {
                None
            };
            Ok(Evaluation {
                metric,
                psd_fraction,
            })
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub summary: Summary,
}

pub fn run_id(cfg: &ExperimentConfig) -> String {
    format!(
        "{}-{}-m{}-s{}",
        cfg.train.scheme.name(),
        cfg.train.task.name(),
        cfg.train.m_t,
        cfg.train.seed
    )
}

fn indices_of(mask: &[f64]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &v)| v == 1.0)
        .map(|(i, _)| i)
        .collect()
}

/// Mini-batch Adam on `L = L_ASN + ρ · L_ADEN` for the configured epochs.
///
/// Per epoch the training rows are reshuffled with the run seed, ρ follows
/// the capped geometric schedule, and the holdout metric is computed with
/// the selection frozen at its current value. Logged losses are those of the
/// epoch's last mini-batch.
pub fn joint_train(data: &Prepared, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.task != cfg.train.task || data.n_t != cfg.array.n_t() {
        return Err(Error::Config("prepared data does not match the config".into()));
    }
    if data.train.iter().any(|i| data.holdout.contains(i)) {
        return Err(Error::Domain("training and holdout rows overlap".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = Model::new(cfg, data.classes, &mut rng)?;
    let mut adam = AdamState::new(cfg.optimizer, model.store.tensors());
    let id = run_id(cfg);
    let mut order = data.train.clone();
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut last_asn = 0.0;

    for epoch in 0..cfg.train.epochs {
        let rho = cfg.loss.rho(epoch);
        order.shuffle(&mut rng);
        let mut last = (0.0, 0.0, 0.0);
        for (step, rows) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut tape = Tape::new();
            let g = model
                .step_graph(&mut tape, data, rows, rho, cfg)
                .map_err(|e| with_context(e, epoch, step))?;
            let grads = tape.backward(g.total).map_err(|e| with_context(e, epoch, step))?;
            let grads = model.store.collect_grads(&g.bound, &grads);
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{id}: gradient at epoch {epoch}, step {step}"
                )));
            }
            adam.step(model.store.tensors_mut(), &grads)?;
            last = (
                tape.value(g.total).item()?,
                tape.value(g.loss_asn).item()?,
                tape.value(g.loss_aden).item()?,
            );
        }
        last_asn = last.1;
        let mask = model.selection()?;
        let eval = evaluate(&model, data, &data.holdout, &mask)?;
        history.push(EpochRecord {
            run_id: id.clone(),
            scheme: cfg.train.scheme.name().into(),
            task: cfg.train.task.name().into(),
            epoch,
            rho,
            loss_total: last.0,
            loss_asn: last.1,
            loss_aden: last.2,
            metric: eval.metric,
            s: indices_of(&mask),
        });
    }

    let mask = model.selection()?;
    let eval = evaluate(&model, data, &data.holdout, &mask)?;
    let soft = match &model.asn {
        Some(asn) => asn.state(&model.store)?.soft,
        None => Vec::new(),
    };
    let summary = Summary {
        run_id: id,
        scheme: cfg.train.scheme.name().into(),
        task: cfg.train.task.name().into(),
        seed: cfg.train.seed,
        m_t: cfg.train.m_t,
        metric_name: metric_name(cfg.train.task).into(),
        holdout_metric: eval.metric,
        frozen_s: indices_of(&mask),
        soft,
        final_loss_asn: last_asn,
        psd_fraction: eval.psd_fraction,
    };
    Ok(TrainOutcome {
        model,
        history,
        summary,
    })
}

fn with_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}
