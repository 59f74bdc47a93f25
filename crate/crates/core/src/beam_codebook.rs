//! DFT beamforming codebooks and rate-maximizing beam selection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::channel_sim::ArrayGeometry;
use crate::error::{domain, shape, Result};

/// How a channel is combined with a beamforming vector when scoring it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerProduct {
    /// `h^T f`, no conjugation.
    #[default]
    Bilinear,
    /// `h^H f`.
    Conjugate,
}

impl InnerProduct {
    pub fn apply(self, h: &[Complex64], f: &[Complex64]) -> Complex64 {
        match self {
            InnerProduct::Bilinear => h.iter().zip(f).map(|(a, b)| a * b).sum(),
            InnerProduct::Conjugate => h.iter().zip(f).map(|(a, b)| a.conj() * b).sum(),
        }
    }
}

/// A finite set of unit-norm beamforming vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub vectors: Vec<Vec<Complex64>>,
    pub geometry: ArrayGeometry,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.geometry.n_t()
    }
}

fn axis_dft(n: usize, oversampling: usize) -> Vec<Vec<Complex64>> {
    if n == 1 {
        return vec![vec![Complex64::new(1.0, 0.0)]];
    }
    let k_total = n * oversampling;
    let norm = 1.0 / (n as f64).sqrt();
    (0..k_total)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let phase = 2.0 * PI * ((i * k) % k_total) as f64 / k_total as f64;
                    Complex64::new(phase.cos(), phase.sin()) * norm
                })
                .collect()
        })
        .collect()
}

/// Kronecker product of per-axis DFT codebooks with `oversampling · n_axis`
/// columns on each non-degenerate axis.
///
/// Beam `(kx, ky, kz)` is stored at `kz·K_y·K_x + ky·K_x + kx`, matching the
/// antenna ordering of the steering vectors.
pub fn build_codebook(geom: &ArrayGeometry, oversampling: usize) -> Result<Codebook> {
    geom.validate()?;
    if oversampling == 0 {
        return domain("codebook oversampling must be at least 1");
    }
    let bx = axis_dft(geom.n_x, oversampling);
    let by = axis_dft(geom.n_y, oversampling);
    let bz = axis_dft(geom.n_z, oversampling);
    let mut vectors = Vec::with_capacity(bx.len() * by.len() * bz.len());
    for fz in &bz {
        for fy in &by {
            for fx in &bx {
                let mut v = Vec::with_capacity(geom.n_t());
                for z in fz {
                    for y in fy {
                        let zy = z * y;
                        for x in fx {
                            v.push(zy * x);
                        }
                    }
                }
                vectors.push(v);
            }
        }
    }
    Ok(Codebook {
        vectors,
        geometry: geom.clone(),
    })
}

/// `log2(1 + snr · |⟨h, f⟩|²)` under the chosen inner product.
pub fn achievable_rate(
    h: &[Complex64],
    f: &[Complex64],
    snr: f64,
    inner: InnerProduct,
) -> Result<f64> {
    if h.len() != f.len() {
        return shape(format!("channel length {} vs beam length {}", h.len(), f.len()));
    }
    if !(snr >= 0.0) {
        return domain(format!("snr must be non-negative, got {snr}"));
    }
    Ok((1.0 + snr * inner.apply(h, f).norm_sqr()).log2())
}

/// Index of the rate-maximizing beam; the lowest index wins ties.
pub fn optimal_beam(
    h: &[Complex64],
    cb: &Codebook,
    snr: f64,
    inner: InnerProduct,
) -> Result<usize> {
    if cb.is_empty() {
        return domain("empty codebook");
    }
    let mut best = 0;
    let mut best_rate = f64::NEG_INFINITY;
    for (i, f) in cb.vectors.iter().enumerate() {
        let r = achievable_rate(h, f, snr, inner)?;
        if r > best_rate {
            best = i;
            best_rate = r;
        }
    }
    Ok(best)
}
