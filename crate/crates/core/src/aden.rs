//! Antenna-domain extrapolation network.
//!
//! A coarse fully connected stack maps the masked input to a first guess,
//! and a fine stage refines it. The fine stage is wired like one classic
//! fourth-order Runge-Kutta step whose combination weights are trainable;
//! the plain-MLP alternative exists as a baseline with the same hidden
//! budget.

use rand::Rng;

use crate::error::{domain, shape, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::nn::{Activation, Bound, Dense, Mlp, ParamId, ParamStore};

/// Initial stage weights `a = [1/2, 1/2, 1]`.
pub const RK4_A: [f64; 3] = [0.5, 0.5, 1.0];
/// Initial combination weights `b = [1/6, 1/3, 1/3, 1/6]`.
pub const RK4_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// `K0 = f0(x)`, `K1 = f1(K0)`, `K2 = f2(K0 + a1 K1)`, `K3 = f3(K0 + a2 K2)`,
/// `K4 = f4(K0 + a3 K3)`, output `f5(K0 + Σ b_i K_i)`.
#[derive(Clone, Debug)]
pub struct RkBlock {
    pub f0: Dense,
    pub stages: [Dense; 4],
    pub f5: Dense,
    pub a: [ParamId; 3],
    pub b: [ParamId; 4],
}

impl RkBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        output: usize,
        hidden: Activation,
        rng: &mut R,
    ) -> Self {
        let f0 = Dense::new(store, &format!("{name}.f0"), input, width, hidden, rng);
        let stages = [1, 2, 3, 4].map(|i| {
            Dense::new(store, &format!("{name}.k{i}"), width, width, hidden, rng)
        });
        let f5 = Dense::new(store, &format!("{name}.f5"), width, output, Activation::Identity, rng);
        let a = [0, 1, 2].map(|i| store.add(format!("{name}.a{}", i + 1), Tensor::scalar(RK4_A[i])));
        let b = [0, 1, 2, 3].map(|i| store.add(format!("{name}.b{}", i + 1), Tensor::scalar(RK4_B[i])));
        Self { f0, stages, f5, a, b }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let k0 = self.f0.forward(tape, p, x)?;
        let mut ks = Vec::with_capacity(4);
        ks.push(self.stages[0].forward(tape, p, k0)?);
        for i in 1..4 {
            let step = tape.scale_by(p.var(self.a[i - 1]), ks[i - 1])?;
            let arg = tape.add(k0, step)?;
            ks.push(self.stages[i].forward(tape, p, arg)?);
        }
        let mut acc = k0;
        for (i, &k) in ks.iter().enumerate() {
            let term = tape.scale_by(p.var(self.b[i]), k)?;
            acc = tape.add(acc, term)?;
        }
        self.f5.forward(tape, p, acc)
    }

    pub fn coefficients(&self, store: &ParamStore) -> ([f64; 3], [f64; 4]) {
        (
            self.a.map(|id| store.get(id).data()[0]),
            self.b.map(|id| store.get(id).data()[0]),
        )
    }
}

/// Structure of the refinement stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FineKind {
    RungeKutta,
    /// Five ReLU hidden layers and a linear output.
    Dense,
}

#[derive(Clone, Debug)]
pub enum FineStage {
    RungeKutta(RkBlock),
    Dense(Mlp),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdenShape {
    pub input: usize,
    pub output: usize,
    pub width: usize,
    /// Without a coarse stage the fine stage reads the input directly.
    pub coarse: bool,
    pub fine: FineKind,
    /// Side of the packed complex matrix the output holds, if the output is
    /// made Hermitian.
    pub hermitian: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Aden {
    pub shape: AdenShape,
    pub coarse: Option<Mlp>,
    pub fine: FineStage,
}

/// Tape nodes of one extrapolation pass.
#[derive(Clone, Copy, Debug)]
pub struct AdenOutput {
    pub coarse: Option<Var>,
    pub fine: Var,
}

impl Aden {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, shape: AdenShape, rng: &mut R) -> Result<Self> {
        if shape.input == 0 || shape.output == 0 || shape.width == 0 {
            return domain("network sizes must be positive");
        }
        if let Some(n) = shape.hermitian {
            if shape.output != 2 * n * n {
                return domain(format!(
                    "hermitian output of side {n} needs width {}, got {}",
                    2 * n * n,
                    shape.output
                ));
            }
        }
        let w = shape.width;
        let coarse = shape
            .coarse
            .then(|| Mlp::new(store, "aden.coarse", &[shape.input, w, w, shape.output], rng));
        let fine_in = if shape.coarse { shape.output } else { shape.input };
        let fine = match shape.fine {
            FineKind::RungeKutta => FineStage::RungeKutta(RkBlock::new(
                store,
                "aden.rk",
                fine_in,
                w,
                shape.output,
                Activation::Relu,
                rng,
            )),
            FineKind::Dense => FineStage::Dense(Mlp::new(
                store,
                "aden.dnn",
                &[fine_in, w, w, w, w, w, shape.output],
                rng,
            )),
        };
        Ok(Self {
            shape,
            coarse,
            fine,
        })
    }

    /// Runs both stages on a batch of packed inputs `[batch × input]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<AdenOutput> {
        let cols = match tape.value(z).shape() {
            [_, c] => *c,
            s => return domain(format!("expected a batch matrix, got shape {s:?}")),
        };
        if cols != self.shape.input {
            return domain(format!(
                "input width {cols}, network expects {}",
                self.shape.input
            ));
        }
        let coarse = match &self.coarse {
            Some(mlp) => Some(mlp.forward(tape, p, z)?),
            None => None,
        };
        let x = coarse.unwrap_or(z);
        let mut fine = match &self.fine {
            FineStage::RungeKutta(rk) => rk.forward(tape, p, x)?,
            FineStage::Dense(mlp) => mlp.forward(tape, p, x)?,
        };
        if let Some(n) = self.shape.hermitian {
            fine = tape.hermitian(fine, n)?;
        }
        Ok(AdenOutput { coarse, fine })
    }

    pub fn rk_coefficients(&self, store: &ParamStore) -> Option<([f64; 3], [f64; 4])> {
        match &self.fine {
            FineStage::RungeKutta(rk) => Some(rk.coefficients(store)),
            FineStage::Dense(_) => None,
        }
    }
}

/// `β1‖u − û_c‖² + β2‖u − û_f‖²` for one sample.
pub fn aden_penalty(u: &[f64], coarse: &[f64], fine: &[f64], beta1: f64, beta2: f64) -> Result<f64> {
    if u.len() != coarse.len() || u.len() != fine.len() {
        return shape("penalty operands differ in length");
    }
    let sq = |a: &[f64]| -> f64 { u.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum() };
    Ok(beta1 * sq(coarse) + beta2 * sq(fine))
}

/// Batch mean of [`aden_penalty`] on the tape; the coarse term is dropped
/// when the network has no coarse stage.
pub fn aden_loss_node(
    tape: &mut Tape,
    target: Var,
    out: &AdenOutput,
    beta1: f64,
    beta2: f64,
) -> Result<Var> {
    let (_, cols) = tape.value(target).dims2()?;
    let fine = tape.mse(target, out.fine)?;
    let fine = tape.scale(fine, beta2 * cols as f64)?;
    match out.coarse {
        Some(c) => {
            let coarse = tape.mse(target, c)?;
            let coarse = tape.scale(coarse, beta1 * cols as f64)?;
            tape.add(coarse, fine)
        }
        None => Ok(fine),
    }
}

/// `β2 · cross-entropy` of beam logits against labels.
pub fn beam_loss_node(tape: &mut Tape, logits: Var, labels: &[usize], beta2: f64) -> Result<Var> {
    let ce = tape.cross_entropy(logits, labels)?;
    tape.scale(ce, beta2)
}

/// `R + R^H` of an `n×n` complex matrix packed as `[re; im]`, row-major.
pub fn hermitian_layer(packed: &[f64], n: usize) -> Result<Vec<f64>> {
    if packed.len() != 2 * n * n {
        return domain(format!(
            "{} values do not pack a square {n}x{n} complex matrix",
            packed.len()
        ));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(packed.to_vec()));
    let y = tape.hermitian(x, n)?;
    Ok(tape.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn run(aden: &Aden, store: &ParamStore, x: Tensor) -> (Option<Tensor>, Tensor) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let z = tape.constant(x);
        let out = aden.forward(&mut tape, &p, z).unwrap();
        (
            out.coarse.map(|c| tape.value(c).clone()),
            tape.value(out.fine).clone(),
        )
    }

    fn shape(fine: FineKind, coarse: bool) -> AdenShape {
        AdenShape {
            input: 4,
            output: 4,
            width: 6,
            coarse,
            fine,
            hermitian: None,
        }
    }

    #[test]
    fn rk_coefficients_start_at_the_classic_tableau() {
        let mut store = ParamStore::new();
        let aden = Aden::new(&mut store, shape(FineKind::RungeKutta, true), &mut rng()).unwrap();
        let (a, b) = aden.rk_coefficients(&store).unwrap();
        assert_eq!(a.map(f64::to_bits), [0.5f64, 0.5, 1.0].map(f64::to_bits));
        assert_eq!(
            b.map(f64::to_bits),
            [1.0f64 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0].map(f64::to_bits)
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for fine in [FineKind::RungeKutta, FineKind::Dense] {
            let mut store = ParamStore::new();
            let aden = Aden::new(&mut store, shape(fine, true), &mut rng()).unwrap();
            for (name, t) in store.names().to_vec().iter().zip(store.tensors_mut()) {
                if !name.contains(".a") && !name.contains(".b") {
                    t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let (c, f) = run(&aden, &store, Tensor::matrix(1, 4, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
            assert!(c.unwrap().data().iter().all(|&v| v == 0.0));
            assert!(f.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_rk4_step() {
        let mut store = ParamStore::new();
        let rk = RkBlock::new(&mut store, "rk", 1, 1, 1, Activation::Identity, &mut rng());
        *store.get_mut(rk.f0.w) = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        *store.get_mut(rk.f5.w) = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        for s in &rk.stages {
            *store.get_mut(s.w) = Tensor::matrix(1, 1, vec![-0.1]).unwrap();
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let y = rk.forward(&mut tape, &p, x).unwrap();
        let got = tape.value(y).data()[0];
        assert!((got - 0.9048375).abs() < 1e-7, "{got}");
    }

    #[test]
    fn perturbed_b_changes_output() {
        let mut store = ParamStore::new();
        let aden = Aden::new(&mut store, shape(FineKind::RungeKutta, true), &mut rng()).unwrap();
        let x = Tensor::matrix(1, 4, vec![0.3, 1.0, -0.2, 0.8]).unwrap();
        let (_, before) = run(&aden, &store, x.clone());
        let FineStage::RungeKutta(rk) = &aden.fine else { unreachable!() };
        store.get_mut(rk.b[1]).data_mut()[0] += 0.1;
        let (_, after) = run(&aden, &store, x);
        assert_ne!(before, after);
    }

    #[test]
    fn wrong_input_width_is_a_domain_error() {
        let mut store = ParamStore::new();
        let aden = Aden::new(&mut store, shape(FineKind::Dense, true), &mut rng()).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let z = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(matches!(
            aden.forward(&mut tape, &p, z),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn penalty_examples() {
        let u = [0.0, 0.0, 0.0];
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(aden_penalty(&e1, &e1, &e1, 1.0, 10.0).unwrap(), 0.0);
        assert_eq!(aden_penalty(&u, &e1, &e1, 1.0, 10.0).unwrap(), 11.0);
        let f2 = [2.0, 0.0, 0.0];
        assert_eq!(aden_penalty(&u, &u, &f2, 1.0, 10.0).unwrap(), 40.0);
        assert!(aden_penalty(&u, &e1[..2], &e1, 1.0, 1.0).is_err());
    }

    #[test]
    fn loss_node_is_batch_mean_of_penalty() {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap());
        let c = tape.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap());
        let f = tape.constant(Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap());
        let out = AdenOutput {
            coarse: Some(c),
            fine: f,
        };
        let l = aden_loss_node(&mut tape, u, &out, 1.0, 10.0).unwrap();
        let want = (aden_penalty(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1.0, 10.0).unwrap()
            + aden_penalty(&[0.0, 2.0], &[0.0, 0.0], &[0.0, 1.0], 1.0, 10.0).unwrap())
            / 2.0;
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn hermitian_examples() {
        // 1×1: 1+j → 2
        assert_eq!(hermitian_layer(&[1.0, 1.0], 1).unwrap(), vec![2.0, 0.0]);
        // [[0, 1+j], [0, 0]] → [[0, 1+j], [1−j, 0]]
        let packed = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(
            hermitian_layer(&packed, 2).unwrap(),
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0]
        );
        assert!(matches!(
            hermitian_layer(&[0.0; 6], 2),
            Err(crate::Error::Domain(_))
        ));
    }
}
