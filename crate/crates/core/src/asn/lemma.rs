//! Empirical check that the three power-sum equalities pin down `M_t`-hot
//! vectors on the non-negative orthant.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use super::is_mt_hot;
use crate::error::{domain, Result};

/// Outcome of [`lemma1_search`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub n: usize,
    pub m: usize,
    pub tol: f64,
    pub trials: usize,
    /// Random vectors that passed the power-sum test.
    pub certified: usize,
    /// Of those, how many were not within `10·sqrt(tol)` of an `m`-hot vector.
    pub false_positives: usize,
    pub descent_runs: usize,
    pub converged: usize,
    pub converged_certified: usize,
    /// Converged points that failed certification.
    pub converged_rejected: usize,
    /// First offending vector, if any.
    pub witness: Option<Vec<f64>>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.false_positives == 0 && self.converged_rejected == 0
    }
}

/// `max_i |v_i − s_i|` where `s` is the `m`-hot vector on the `m` largest
/// entries of `v` (the nearest one in that norm).
pub fn nearest_hot_distance(v: &[f64], m: usize) -> f64 {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let target = if rank < m { 1.0 } else { 0.0 };
            (v[i] - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Euclidean projection onto `{v ≥ 0, Σv = total}`.
fn project_simplex(v: &mut [f64], total: f64) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - total) / (k + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

fn residuals(v: &[f64], m: f64) -> (f64, f64) {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    let s3: f64 = v.iter().map(|x| x * x * x).sum();
    (s2 - m, s3 - m)
}

/// Random point of `{v ≥ 0, Σv = m}` with a random support and Dirichlet
/// weights on it.
fn random_simplex_point<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let support = rng.gen_range(1..=n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..support {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut v = vec![0.0; n];
    let mut total = 0.0;
    for &i in &idx[..support] {
        let g = gamma.sample(rng);
        v[i] = g;
        total += g;
    }
    for x in &mut v {
        *x *= m as f64 / total;
    }
    v
}

/// A random `m`-hot vector moved by a perturbation of random magnitude
/// (between 1e−9 and 1e−1) and projected back onto the simplex. These probe
/// the acceptance boundary of the certificate.
fn near_hot_point<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut v = vec![0.0; n];
    for &i in &idx[..m] {
        v[i] = 1.0;
    }
    let scale = 10f64.powf(rng.gen_range(-9.0..-1.0));
    for x in &mut v {
        *x += scale * rng.gen_range(-1.0..1.0);
    }
    project_simplex(&mut v, m as f64);
    v
}

/// Projected descent on the residuals `r2 = Σv² − m`, `r3 = Σv³ − m` over
/// the scaled simplex. Each step is the minimum-norm Gauss-Newton step within
/// the tangent space of the current face, followed by projection. Returns
/// the final point and whether both residuals fell below 1e−8.
fn descend(mut v: Vec<f64>, m: usize, max_iter: usize) -> (Vec<f64>, bool) {
    let mf = m as f64;
    project_simplex(&mut v, mf);
    for _ in 0..max_iter {
        let (r2, r3) = residuals(&v, mf);
        if r2.abs() < 1e-8 && r3.abs() < 1e-8 {
            return (v, true);
        }
        let free: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
        let k = free.len() as f64;
        let mean2 = free.iter().map(|&i| 2.0 * v[i]).sum::<f64>() / k;
        let mean3 = free.iter().map(|&i| 3.0 * v[i] * v[i]).sum::<f64>() / k;
        let rows: Vec<(f64, f64)> = free
            .iter()
            .map(|&i| (2.0 * v[i] - mean2, 3.0 * v[i] * v[i] - mean3))
            .collect();
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for &(x, y) in &rows {
            a += x * x;
            b += x * y;
            c += y * y;
        }
        let lam = 1e-12 * (a + c) + f64::MIN_POSITIVE;
        let (a, c) = (a + lam, c + lam);
        let det = a * c - b * b;
        if !(det > 0.0) {
            break;
        }
        let w2 = (c * r2 - b * r3) / det;
        let w3 = (a * r3 - b * r2) / det;
        for (&i, &(x, y)) in free.iter().zip(&rows) {
            v[i] -= x * w2 + y * w3;
        }
        project_simplex(&mut v, mf);
    }
    let (r2, r3) = residuals(&v, mf);
    let ok = r2.abs() < 1e-8 && r3.abs() < 1e-8;
    (v, ok)
}

/// Samples `trials` points of the scaled simplex (half uniform-ish, half
/// clustered around `m`-hot vectors) and counts how many pass
/// [`is_mt_hot`] at `tol = 1e−6` without being near an `m`-hot vector; then
/// runs `descent_runs` projected descents and checks that every converged
/// limit is certified.
pub fn lemma1_search<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    trials: usize,
    descent_runs: usize,
    rng: &mut R,
) -> Result<LemmaReport> {
    if trials == 0 {
        return domain("at least one trial is required");
    }
    if m == 0 || m >= n {
        return domain(format!("need 1 <= m < n, got m={m}, n={n}"));
    }
    let tol: f64 = 1e-6;
    let near = 10.0 * tol.sqrt();
    let mut report = LemmaReport {
        n,
        m,
        tol,
        trials,
        certified: 0,
        false_positives: 0,
        descent_runs,
        converged: 0,
        converged_certified: 0,
        converged_rejected: 0,
        witness: None,
    };
    for t in 0..trials {
        let v = if t % 2 == 0 {
            random_simplex_point(n, m, rng)
        } else {
            near_hot_point(n, m, rng)
        };
        if is_mt_hot(&v, m, tol) {
            report.certified += 1;
            if nearest_hot_distance(&v, m) > near {
                report.false_positives += 1;
                report.witness.get_or_insert(v);
            }
        }
    }
    for _ in 0..descent_runs {
        let start = random_simplex_point(n, m, rng);
        let (v, ok) = descend(start, m, 2_000);
        if ok {
            report.converged += 1;
            if is_mt_hot(&v, m, tol) {
                report.converged_certified += 1;
            } else {
                report.converged_rejected += 1;
                report.witness.get_or_insert(v);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_lands_on_simplex() {
        let mut v = vec![3.0, -1.0, 0.5, 0.2];
        project_simplex(&mut v, 2.0);
        assert!((v.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
        let mut w = vec![1.0, 0.0, 1.0];
        project_simplex(&mut w, 2.0);
        assert_eq!(w, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn hot_starts_converge_immediately() {
        let (v, ok) = descend(vec![0.0, 1.0, 1.0, 0.0], 2, 1);
        assert!(ok);
        assert_eq!(v, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn three_choose_two_limits_are_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..50 {
            let start = random_simplex_point(3, 2, &mut rng);
            let (v, ok) = descend(start, 2, 20_000);
            if ok {
                hits += 1;
                let ones = v.iter().filter(|&&x| (x - 1.0).abs() < 1e-3).count();
                let zeros = v.iter().filter(|&&x| x.abs() < 1e-3).count();
                assert_eq!((ones, zeros), (2, 1), "{v:?}");
            }
        }
        assert!(hits > 25, "{hits}");
    }

    #[test]
    fn small_case_has_no_false_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = lemma1_search(4, 2, 100_000, 50, &mut rng).unwrap();
        assert_eq!(r.false_positives, 0);
        assert_eq!(r.converged_rejected, 0);
        assert!(r.certified > 0);
        assert!(r.passed());
    }

    #[test]
    fn nearest_hot_distance_examples() {
        assert_eq!(nearest_hot_distance(&[1.0, 0.0, 1.0], 2), 0.0);
        assert!((nearest_hot_distance(&[0.5, 0.5, 1.0], 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(lemma1_search(4, 4, 10, 0, &mut rng).is_err());
        assert!(lemma1_search(4, 2, 0, 0, &mut rng).is_err());
    }
}
