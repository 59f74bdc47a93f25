//! Finite-difference gradient suites behind the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::aden::{aden_loss_node, beam_loss_node, Aden, AdenShape, FineKind};
use crate::asn::{asn_penalty_node, cda_substitute, Asn};
use crate::error::{Error, Result};
use crate::grad::{central_difference, grad_check, Tape, Tensor, Var};
use crate::nn::ParamStore;

/// Finite-difference step used by every check.
pub const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Asn,
    Aden,
    All,
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ops" => Scope::Ops,
            "asn" => Scope::Asn,
            "aden" => Scope::Aden,
            "all" => Scope::All,
            _ => return Err(Error::Config(format!("unknown gradcheck scope {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .expect("sizes agree")
}

/// Entries bounded away from zero, so ReLU kinks stay out of reach of the
/// finite-difference step.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

/// Reduces any node to a scalar through fixed random weights.
fn project(tape: &mut Tape, x: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = randn(&mut rng, tape.value(x).shape());
    let w = tape.constant(w);
    let h = tape.hadamard(x, w)?;
    tape.sum(h)
}

type OpCase = (&'static str, Vec<Tensor>, fn(&mut Tape, &[Var]) -> Result<Var>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    vec![
        ("matmul", vec![randn(rng, &[3, 4]), randn(rng, &[4, 2])], |t, v| t.matmul(v[0], v[1])),
        ("add", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], |t, v| t.add(v[0], v[1])),
        ("sub", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], |t, v| t.sub(v[0], v[1])),
        ("add_row", vec![randn(rng, &[3, 4]), randn(rng, &[4])], |t, v| t.add_row(v[0], v[1])),
        ("hadamard", vec![randn(rng, &[5]), randn(rng, &[5])], |t, v| t.hadamard(v[0], v[1])),
        ("mul_row", vec![randn(rng, &[3, 4]), randn(rng, &[4])], |t, v| t.mul_row(v[0], v[1])),
        ("relu", vec![off_kink(rng, &[3, 4])], |t, v| t.relu(v[0])),
        ("softmax", vec![randn(rng, &[6])], |t, v| t.softmax(v[0])),
        ("softmax_rows", vec![randn(rng, &[3, 5])], |t, v| t.softmax(v[0])),
        ("scale", vec![randn(rng, &[4])], |t, v| t.scale(v[0], -2.5)),
        ("add_const", vec![randn(rng, &[4])], |t, v| t.add_const(v[0], 0.7)),
        ("scale_by", vec![randn(rng, &[]), randn(rng, &[2, 3])], |t, v| t.scale_by(v[0], v[1])),
        ("sum", vec![randn(rng, &[2, 3])], |t, v| t.sum(v[0])),
        ("square", vec![randn(rng, &[4])], |t, v| t.square(v[0])),
        ("cube", vec![randn(rng, &[4])], |t, v| t.cube(v[0])),
        ("mse", vec![randn(rng, &[2, 3]), randn(rng, &[2, 3])], |t, v| t.mse(v[0], v[1])),
        ("cross_entropy", vec![randn(rng, &[4, 5])], |t, v| t.cross_entropy(v[0], &[0, 3, 4, 1])),
        ("tile", vec![randn(rng, &[3])], |t, v| t.tile(v[0], 2)),
        ("outer", vec![randn(rng, &[3]), randn(rng, &[4])], |t, v| t.outer(v[0], v[1])),
        ("reshape", vec![randn(rng, &[2, 3])], |t, v| t.reshape(v[0], &[3, 2])),
        ("hermitian", vec![randn(rng, &[2, 18])], |t, v| t.hermitian(v[0], 3)),
        ("straight_through", vec![randn(rng, &[4])], |t, v| {
            let fwd = t.value(v[0]).clone();
            t.straight_through(fwd, v[0])
        }),
    ]
}

fn check_ops(rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    for (i, (name, point, op)) in op_cases(rng).into_iter().enumerate() {
        let seed = 1000 + i as u64;
        let err = grad_check(
            |t, v| {
                let y = op(t, v)?;
                if t.value(y).len() == 1 && t.value(y).rank() == 0 {
                    Ok(y)
                } else {
                    project(t, y, seed)
                }
            },
            &point,
            EPS,
        )?;
        out.push(CheckResult {
            name: format!("op/{name}"),
            max_rel_error: err,
        });
    }
    Ok(())
}

fn max_rel(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    worst
}

/// Selection network used by the ASN checks: 8 antennas, 3 selected.
fn small_asn(seed: u64) -> Result<(ParamStore, Asn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let asn = Asn::new(&mut store, 8, 3, 8, 3, &mut rng)?;
    // spread the logits so the top-3 set is unambiguous
    let last = asn.stack.layers.last().expect("non-empty stack");
    *store.get_mut(last.b) = randn(&mut rng, &[8]);
    Ok((store, asn))
}

fn with_params(store: &ParamStore, values: &[Tensor]) -> ParamStore {
    let mut s = store.clone();
    for (dst, src) in s.tensors_mut().iter_mut().zip(values) {
        *dst = src.clone();
    }
    s
}

/// `p̃(θ)` of the given selection network.
fn soft_of(asn: &Asn, store: &ParamStore) -> Result<Vec<f64>> {
    Ok(asn.state(store)?.soft)
}

fn check_asn(rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    // Penalty on a free non-negative vector.
    let v = Tensor::vector((0..8).map(|_| rng.gen_range(0.1..1.2)).collect());
    let err = grad_check(|t, x| asn_penalty_node(t, x[0], 3, 1.0, 1.0), &[v], EPS)?;
    out.push(CheckResult {
        name: "asn/penalty".into(),
        max_rel_error: err,
    });

    // Penalty through the whole selection network.
    let (store, asn) = small_asn(7)?;
    let err = grad_check(
        |t, leaves| {
            let g = asn_forward_on(t, &asn, leaves)?;
            asn_penalty_node(t, g, 3, 1.0, 1.0)
        },
        store.tensors(),
        EPS,
    )?;
    out.push(CheckResult {
        name: "asn/network_penalty".into(),
        max_rel_error: err,
    });

    // Straight-through with a linear consumer: the analytic gradient of
    // Σ(s ⊙ x) must equal the numeric gradient of Σ(p̃(θ) ⊙ x).
    let x = randn(rng, &[8]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let g = asn.forward(&mut tape, &bound)?;
    let xc = tape.constant(x.clone());
    let prod = tape.hadamard(g.selection, xc)?;
    let loss = tape.sum(prod)?;
    let grads = tape.backward(loss)?;
    let analytic = store.collect_grads(&bound, &grads);
    let numeric = central_difference(
        |vals| {
            let s = with_params(&store, vals);
            let soft = soft_of(&asn, &s)?;
            Ok(soft.iter().zip(x.data()).map(|(a, b)| a * b).sum())
        },
        store.tensors(),
        EPS,
    )?;
    out.push(CheckResult {
        name: "asn/cda_linear".into(),
        max_rel_error: max_rel(&analytic, &numeric),
    });
    Ok(())
}

/// Logits → softmax → `M_t` scaling, with the network weights taken from
/// `leaves` (in store order).
fn asn_forward_on(tape: &mut Tape, asn: &Asn, leaves: &[Var]) -> Result<Var> {
    let bound = crate::nn::Bound::from_vars(leaves.to_vec());
    let g = asn.forward(tape, &bound)?;
    Ok(g.soft)
}

fn small_aden(seed: u64, shape: AdenShape) -> Result<(ParamStore, Aden)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let aden = Aden::new(&mut store, shape, &mut rng)?;
    // non-zero biases keep hidden units away from the ReLU kink
    for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
        if name.ends_with(".b") && t.rank() == 1 {
            for v in t.data_mut() {
                *v = rng.gen_range(0.05..0.3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }
    Ok((store, aden))
}

fn check_aden(rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    let n_t = 4;
    let cases = [
        ("aden/rk_channel_loss", FineKind::RungeKutta, true, None, 2 * n_t),
        ("aden/dnn_channel_loss", FineKind::Dense, true, None, 2 * n_t),
        ("aden/rk_ccm_loss", FineKind::RungeKutta, true, Some(2), 8),
        ("aden/rk_beam_loss", FineKind::RungeKutta, false, None, 5),
    ];
    for (k, (name, fine, coarse, herm, out_len)) in cases.into_iter().enumerate() {
        let input = if herm.is_some() { 8 } else { 2 * n_t };
        let shape = AdenShape {
            input,
            output: out_len,
            width: 6,
            coarse,
            fine,
            hermitian: herm,
        };
        let (store, aden) = small_aden(30 + k as u64, shape)?;
        let z = randn(rng, &[3, input]);
        let u = randn(rng, &[3, out_len]);
        let beam = !coarse;
        let mut point = store.tensors().to_vec();
        point.push(z);
        let n = store.len();
        let err = grad_check(
            |t, leaves| {
                let bound = crate::nn::Bound::from_vars(leaves[..n].to_vec());
                let o = aden.forward(t, &bound, leaves[n])?;
                if beam {
                    beam_loss_node(t, o.fine, &[0, 4, 2], 10.0)
                } else {
                    let target = t.constant(u.clone());
                    aden_loss_node(t, target, &o, 1.0, 10.0)
                }
            },
            &point,
            EPS,
        )?;
        out.push(CheckResult {
            name: name.into(),
            max_rel_error: err,
        });
    }
    check_cda_full(rng, out)
}

/// Joint graph: selection → masked input → extrapolation loss. The analytic
/// gradient at the selection parameters (through the straight-through node)
/// must match the numeric gradient of `θ ↦ ⟨∂L/∂s, p̃(θ)⟩`, where `∂L/∂s` is
/// itself a central difference of the loss in the mask entries.
fn check_cda_full(rng: &mut ChaCha8Rng, out: &mut Vec<CheckResult>) -> Result<()> {
    let (asn_store, asn) = small_asn(11)?;
    let n_t = 8;
    let shape = AdenShape {
        input: 2 * n_t,
        output: 2 * n_t,
        width: 6,
        coarse: true,
        fine: FineKind::RungeKutta,
        hermitian: None,
    };
    let (aden_store, aden) = small_aden(12, shape)?;
    let z = randn(rng, &[3, 2 * n_t]);
    let u = randn(rng, &[3, 2 * n_t]);

    let loss_given_mask = |t: &mut Tape, sel: Var| -> Result<Var> {
        let bound = aden_store.bind(t, false);
        let zc = t.constant(z.clone());
        let row = t.tile(sel, 2)?;
        let masked = t.mul_row(zc, row)?;
        let o = aden.forward(t, &bound, masked)?;
        let target = t.constant(u.clone());
        aden_loss_node(t, target, &o, 1.0, 10.0)
    };

    let mut tape = Tape::new();
    let bound = asn_store.bind(&mut tape, true);
    let g = asn.forward(&mut tape, &bound)?;
    let hard = g.state.hard.clone();
    let loss = loss_given_mask(&mut tape, g.selection)?;
    let grads = tape.backward(loss)?;
    let analytic = asn_store.collect_grads(&bound, &grads);

    let g_s = central_difference(
        |m| {
            let mut t = Tape::new();
            let sel = t.constant(m[0].clone());
            let l = loss_given_mask(&mut t, sel)?;
            t.value(l).item()
        },
        &[Tensor::vector(hard.clone())],
        EPS,
    )?
    .remove(0);
    let numeric = central_difference(
        |vals| {
            let s = with_params(&asn_store, vals);
            let soft = soft_of(&asn, &s)?;
            Ok(soft.iter().zip(g_s.data()).map(|(a, b)| a * b).sum())
        },
        asn_store.tensors(),
        EPS,
    )?;
    out.push(CheckResult {
        name: "cda/joint_loss".into(),
        max_rel_error: max_rel(&analytic, &numeric),
    });

    // the substituted node forwards the hard mask
    let mut t = Tape::new();
    let soft = t.param(Tensor::vector(g.state.soft.clone()));
    let node = cda_substitute(&mut t, &hard, soft)?;
    if t.value(node).data() != hard.as_slice() {
        return Err(Error::Domain("straight-through node did not forward the mask".into()));
    }
    Ok(())
}

/// Runs every check in `scope`.
pub fn gradcheck_suite(scope: Scope, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if matches!(scope, Scope::Ops | Scope::All) {
        check_ops(&mut rng, &mut out)?;
    }
    if matches!(scope, Scope::Asn | Scope::All) {
        check_asn(&mut rng, &mut out)?;
    }
    if matches!(scope, Scope::Aden | Scope::All) {
        check_aden(&mut rng, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = gradcheck_suite(Scope::All, 5).unwrap();
        for r in &results {
            eprintln!("{} {:.3e}", r.name, r.max_rel_error);
        }
        assert!(results.len() > 25);
        assert!(results.iter().all(|r| r.max_rel_error < 1e-5));
    }
}
