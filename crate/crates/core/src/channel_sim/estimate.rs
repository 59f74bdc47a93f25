use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape, Error, Result};

type CMat = DMatrix<Complex64>;
type CVec = DVector<Complex64>;

/// Condition floor below which a matrix is treated as singular.
const RCOND_MIN: f64 = 1e-13;

/// Pilot matrix plus additive-noise level for `y = P h + v`.
#[derive(Clone, Debug)]
pub struct PilotConfig {
    pub p: CMat,
    pub noise_power: f64,
    pub snr_db: f64,
}

impl PilotConfig {
    pub fn noiseless(p: CMat) -> Self {
        Self {
            p,
            noise_power: 0.0,
            snr_db: f64::INFINITY,
        }
    }

    /// Noise level `σ² = signal_power · 10^(−snr_db/10)`, where
    /// `signal_power` is the per-antenna channel power (see [`signal_power`]).
    pub fn with_snr(p: CMat, snr_db: f64, signal_power: f64) -> Result<Self> {
        if !(signal_power >= 0.0) || snr_db.is_nan() {
            return Err(Error::Domain(format!(
                "bad snr {snr_db} dB or signal power {signal_power}"
            )));
        }
        Ok(Self {
            p,
            noise_power: signal_power * 10f64.powf(-snr_db / 10.0),
            snr_db,
        })
    }

    pub fn pilot_len(&self) -> usize {
        self.p.nrows()
    }
}

/// Mean of `‖h‖² / N_t` over a set of channels.
pub fn signal_power(channels: &[Vec<Complex64>]) -> f64 {
    if channels.is_empty() {
        return 0.0;
    }
    let total: f64 = channels
        .iter()
        .map(|h| h.iter().map(|v| v.norm_sqr()).sum::<f64>() / h.len().max(1) as f64)
        .sum();
    total / channels.len() as f64
}

/// Received pilots `y = P h + v` with circularly symmetric Gaussian `v` of
/// per-entry variance `σ²`.
pub fn observe<R: Rng + ?Sized>(
    h: &[Complex64],
    pilot: &PilotConfig,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if pilot.p.ncols() != h.len() {
        return shape(format!(
            "pilot has {} columns, channel has {} entries",
            pilot.p.ncols(),
            h.len()
        ));
    }
    if !(pilot.noise_power >= 0.0) {
        return Err(Error::Domain("noise power must be non-negative".into()));
    }
    let y = &pilot.p * CVec::from_column_slice(h);
    let sd = (pilot.noise_power / 2.0).sqrt();
    Ok(y
        .iter()
        .map(|&v| {
            if sd == 0.0 {
                v
            } else {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                v + Complex64::new(sd * re, sd * im)
            }
        })
        .collect())
}

fn check_rcond(m: &CMat, what: &str) -> Result<()> {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min / max < RCOND_MIN {
        return Err(Error::Singular(format!(
            "{what} is singular (smallest/largest singular value {:.3e})",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    Ok(())
}

fn solve(m: CMat, b: &CVec, what: &str) -> Result<CVec> {
    check_rcond(&m, what)?;
    m.lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// Least-squares estimate `P^H (P P^H)^{-1} y`.
pub fn ls_estimate(y: &[Complex64], p: &CMat) -> Result<Vec<Complex64>> {
    if y.len() != p.nrows() {
        return shape(format!("{} observations for {} pilot rows", y.len(), p.nrows()));
    }
    let ph = p.adjoint();
    let gram = p * &ph;
    let z = solve(gram, &CVec::from_column_slice(y), "P P^H")?;
    Ok((ph * z).iter().copied().collect())
}

/// Which algebraic form the LMMSE estimator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmmseForm {
    /// `(y^T (P^H R P + σ²I)^{-1} P^H R)^T`, transposes taken without
    /// conjugation. Needs a square pilot matrix.
    Literal,
    /// `R P^H (P R P^H + σ²I)^{-1} y`.
    Conjugate,
}

/// Linear MMSE estimate of `h` from `y = P h + v`, given the channel
/// covariance `R` and noise power `σ²`.
pub fn lmmse_estimate(
    y: &[Complex64],
    p: &CMat,
    r: &CMat,
    sigma2: f64,
    form: LmmseForm,
) -> Result<Vec<Complex64>> {
    let (n, n_t) = p.shape();
    if y.len() != n {
        return shape(format!("{} observations for {n} pilot rows", y.len()));
    }
    if r.shape() != (n_t, n_t) {
        return shape(format!("covariance is {:?}, expected {n_t}x{n_t}", r.shape()));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!("noise power {sigma2} is negative")));
    }
    let y = CVec::from_column_slice(y);
    let out = match form {
        LmmseForm::Literal => {
            if n != n_t {
                return shape(format!(
                    "literal LMMSE form needs a square pilot, got {n}x{n_t}"
                ));
            }
            let ph_r = p.adjoint() * r;
            let mut m = &ph_r * p;
            for i in 0..n_t {
                m[(i, i)] += sigma2;
            }
            // (y^T M^{-1} A)^T = A^T (M^T)^{-1} y
            let z = solve(m.transpose(), &y, "P^H R P + σ²I")?;
            ph_r.transpose() * z
        }
        LmmseForm::Conjugate => {
            let r_ph = r * p.adjoint();
            let mut m = p * &r_ph;
            for i in 0..n {
                m[(i, i)] += sigma2;
            }
            let z = solve(m, &y, "P R P^H + σ²I")?;
            r_ph * z
        }
    };
    Ok(out.iter().copied().collect())
}
