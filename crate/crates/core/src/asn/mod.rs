//! Antenna selection network.
//!
//! A free parameter vector `θ₀` is pushed through a small fully connected
//! stack to produce one logit per antenna. The softmax of the logits gives
//! selection probabilities `p`; the selected subset is the top-`M_t` entries
//! of `p`, and the scaled vector `p̃ = M_t · p` stands in for the hard mask
//! when gradients are propagated.

mod lemma;

pub use lemma::{lemma1_search, nearest_hot_distance, LemmaReport};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, shape, Result};
use crate::grad::{softmax_in_place, Tape, Tensor, Var};
use crate::nn::{Bound, Mlp, ParamId, ParamStore};

/// Outputs of one selection pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// 0/1 mask with exactly `M_t` ones.
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
    /// Ascending positions of the ones in `hard`.
    pub indices: Vec<usize>,
}

impl SelectionState {
    fn from_logits(logits: Vec<f64>, m_t: usize) -> Result<Self> {
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        let indices = top_indices(&probs, m_t)?;
        let hard = mask(probs.len(), &indices);
        let soft = soft_select(&probs, m_t);
        Ok(Self {
            logits,
            probs,
            hard,
            soft,
            indices,
        })
    }
}

/// Tape nodes of one selection pass during training.
#[derive(Clone, Debug)]
pub struct SelectionGraph {
    pub probs: Var,
    pub soft: Var,
    /// Emits the hard mask, back-propagates into `soft`.
    pub selection: Var,
    pub state: SelectionState,
}

/// Positions of the `m` largest entries of `p`, ascending; ties go to the
/// lower index.
pub fn top_indices(p: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m >= p.len() {
        return domain(format!(
            "cannot select {m} of {} antennas (need 1 <= M_t < N_t)",
            p.len()
        ));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn mask(n: usize, indices: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for &i in indices {
        s[i] = 1.0;
    }
    s
}

/// Indicator of the `m` largest entries of `p`.
pub fn hard_select(p: &[f64], m: usize) -> Result<Vec<f64>> {
    Ok(mask(p.len(), &top_indices(p, m)?))
}

/// `p̃ = m · p`.
pub fn soft_select(p: &[f64], m: usize) -> Vec<f64> {
    p.iter().map(|&v| v * m as f64).collect()
}

/// `α1 (Σv² − m)² + α2 (Σv³ − m)²`.
pub fn asn_penalty(v: &[f64], m: usize, alpha1: f64, alpha2: f64) -> f64 {
    let m = m as f64;
    let s2: f64 = v.iter().map(|x| x * x).sum();
    let s3: f64 = v.iter().map(|x| x * x * x).sum();
    alpha1 * (s2 - m).powi(2) + alpha2 * (s3 - m).powi(2)
}

/// [`asn_penalty`] recorded on the tape for a rank-1 `soft` node.
pub fn asn_penalty_node(
    tape: &mut Tape,
    soft: Var,
    m: usize,
    alpha1: f64,
    alpha2: f64,
) -> Result<Var> {
    let m = m as f64;
    let sq = tape.square(soft)?;
    let s2 = tape.sum(sq)?;
    let r2 = tape.add_const(s2, -m)?;
    let t2 = tape.square(r2)?;
    let t2 = tape.scale(t2, alpha1)?;
    let cu = tape.cube(soft)?;
    let s3 = tape.sum(cu)?;
    let r3 = tape.add_const(s3, -m)?;
    let t3 = tape.square(r3)?;
    let t3 = tape.scale(t3, alpha2)?;
    tape.add(t2, t3)
}

/// Node whose forward value is the hard mask and whose gradient passes
/// unchanged to `soft`.
pub fn cda_substitute(tape: &mut Tape, hard: &[f64], soft: Var) -> Result<Var> {
    if tape.value(soft).shape() != [hard.len()] {
        return shape(format!(
            "hard mask of length {} vs soft node {:?}",
            hard.len(),
            tape.value(soft).shape()
        ));
    }
    tape.straight_through(Tensor::vector(hard.to_vec()), soft)
}

/// Whether `v` satisfies `Σv = Σv² = Σv³ = m` within `tol`.
pub fn is_mt_hot(v: &[f64], m: usize, tol: f64) -> bool {
    let m = m as f64;
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for &x in v {
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
    }
    (s1 - m).abs() <= tol && (s2 - m).abs() <= tol && (s3 - m).abs() <= tol
}

/// The selection network parameters inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Asn {
    pub n_t: usize,
    pub m_t: usize,
    pub theta0: ParamId,
    pub stack: Mlp,
}

impl Asn {
    /// `layers` fully connected layers of width `width` (the last one is
    /// linear with `n_t` outputs).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_t: usize,
        m_t: usize,
        width: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m_t == 0 || m_t >= n_t {
            return domain(format!("need 1 <= M_t < N_t, got M_t={m_t}, N_t={n_t}"));
        }
        if layers == 0 || width == 0 {
            return domain("selection network needs at least one layer of positive width");
        }
        let theta: Vec<f64> = (0..n_t)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let theta0 = store.add("asn.theta0", Tensor::vector(theta));
        let mut widths = vec![n_t];
        widths.extend(std::iter::repeat_n(width, layers - 1));
        widths.push(n_t);
        let stack = Mlp::new(store, "asn.fc", &widths, rng);
        Ok(Self {
            n_t,
            m_t,
            theta0,
            stack,
        })
    }

    fn logits_node(&self, tape: &mut Tape, p: &Bound) -> Result<Var> {
        let x = tape.reshape(p.var(self.theta0), &[1, self.n_t])?;
        let y = self.stack.forward(tape, p, x)?;
        tape.reshape(y, &[self.n_t])
    }

    /// Records the selection pass, including the straight-through node.
    pub fn forward(&self, tape: &mut Tape, p: &Bound) -> Result<SelectionGraph> {
        let logits = self.logits_node(tape, p)?;
        let probs = tape.softmax(logits)?;
        let soft = tape.scale(probs, self.m_t as f64)?;
        let state = SelectionState::from_logits(tape.value(logits).data().to_vec(), self.m_t)?;
        let selection = cda_substitute(tape, &state.hard, soft)?;
        Ok(SelectionGraph {
            probs,
            soft,
            selection,
            state,
        })
    }

    /// Selection under the current parameters, without recording gradients.
    pub fn state(&self, store: &ParamStore) -> Result<SelectionState> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let logits = self.logits_node(&mut tape, &p)?;
        SelectionState::from_logits(tape.value(logits).data().to_vec(), self.m_t)
    }
}
