use num_complex::Complex64;

use super::{ArrayGeometry, Scene};
use crate::error::{domain, shape, Result};

/// Sample covariance of the channels in one collection block.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSample {
    pub block_id: u32,
    pub n: usize,
    /// Row-major `n × n`.
    pub r: Vec<Complex64>,
}

impl CovarianceSample {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.r[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).re).sum()
    }

    pub fn is_hermitian(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i).conj()))
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.r)
    }
}

/// `R = (1/K) Σ h_k h_k^H`, built so that `R = R^H` holds exactly.
pub fn compute_ccm(channels: &[Vec<Complex64>]) -> Result<CovarianceSample> {
    let Some(first) = channels.first() else {
        return domain("covariance of an empty channel set");
    };
    let n = first.len();
    if channels.iter().any(|h| h.len() != n) {
        return shape("channels in one block have different lengths");
    }
    let k = channels.len() as f64;
    let mut r = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in i..n {
            let s: Complex64 = channels.iter().map(|h| h[i] * h[j].conj()).sum();
            let v = s / k;
            if i == j {
                r[i * n + i] = Complex64::new(v.re, 0.0);
            } else {
                r[i * n + j] = v;
                r[j * n + i] = v.conj();
            }
        }
    }
    Ok(CovarianceSample { block_id: 0, n, r })
}

/// Positions sampled inside one block along each axis.
pub const BLOCK_SIDE: usize = 5;

/// Covariances over a `block_rows × block_cols` array of collection blocks.
///
/// Block `(br, bc)` starts at grid cell `(br·stride, bc·stride)` and averages
/// the channels of a 5×5 sub-grid spaced `step` cells apart. Its id is
/// `br·block_cols + bc`.
pub fn collection_blocks(
    scene: &Scene,
    geom: &ArrayGeometry,
    block_rows: usize,
    block_cols: usize,
    step: usize,
    stride: usize,
) -> Result<Vec<CovarianceSample>> {
    if step == 0 || stride == 0 {
        return domain("block step and stride must be positive");
    }
    if block_rows == 0 || block_cols == 0 {
        return domain("at least one block is required");
    }
    let span = (BLOCK_SIDE - 1) * step;
    let last_row = (block_rows - 1) * stride + span;
    let last_col = (block_cols - 1) * stride + span;
    if last_row >= scene.grid_rows || last_col >= scene.grid_cols {
        return domain(format!(
            "{block_rows}x{block_cols} blocks need a {}x{} grid, scene has {}x{}",
            last_row + 1,
            last_col + 1,
            scene.grid_rows,
            scene.grid_cols
        ));
    }
    let all = scene.channels(geom, scene.grid_len())?;
    let mut out = Vec::with_capacity(block_rows * block_cols);
    for br in 0..block_rows {
        for bc in 0..block_cols {
            let mut hs = Vec::with_capacity(BLOCK_SIDE * BLOCK_SIDE);
            for i in 0..BLOCK_SIDE {
                for j in 0..BLOCK_SIDE {
                    let row = br * stride + i * step;
                    let col = bc * stride + j * step;
                    hs.push(all[row * scene.grid_cols + col].1.clone());
                }
            }
            let mut cov = compute_ccm(&hs)?;
            cov.block_id = (br * block_cols + bc) as u32;
            out.push(cov);
        }
    }
    Ok(out)
}

/// Largest block counts `(rows, cols)` that fit the scene grid.
pub fn max_blocks(scene: &Scene, step: usize, stride: usize) -> (usize, usize) {
    let span = (BLOCK_SIDE - 1) * step;
    let fit = |n: usize| if n > span { (n - 1 - span) / stride + 1 } else { 0 };
    (fit(scene.grid_rows), fit(scene.grid_cols))
}
