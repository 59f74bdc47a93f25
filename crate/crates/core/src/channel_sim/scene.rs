use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{generate_channel, ArrayGeometry, Path, PathParams};
use crate::beam_codebook::{optimal_beam, Codebook, InnerProduct};
use crate::error::{domain, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Synthetic propagation environment: a base station, a handful of point
/// scatterers and a rectangular grid of candidate user positions.
///
/// Each user sees the line-of-sight ray (if enabled) plus the strongest
/// single-bounce rays through the scatterers. Amplitudes fall off with the
/// total path length and phases follow the path length at the carrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Spacing between neighbouring grid positions, meters.
    pub pitch_m: f64,
    /// Position of grid cell (0, 0); rows advance along x, columns along y.
    pub grid_origin: [f64; 3],
    pub bs_position: [f64; 3],
    pub scatterers: Vec<[f64; 3]>,
    pub line_of_sight: bool,
    /// Maximum number of paths kept per user, LOS included.
    pub num_paths: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub los_gain: f64,
    pub scatter_gain: f64,
    /// Seeds the fixed reflection phase of each scatterer.
    pub seed: u64,
}

/// Kept as an alias so configs can talk about "the scene section".
pub type SceneConfig = Scene;

impl Default for Scene {
    fn default() -> Self {
        Self {
            grid_rows: 40,
            grid_cols: 40,
            pitch_m: 0.25,
            grid_origin: [8.0, -5.0, 1.5],
            bs_position: [13.0, 0.0, 8.0],
            scatterers: vec![
                [12.0, 9.0, 3.0],
                [21.0, -7.0, 4.0],
                [5.0, -10.0, 2.5],
                [26.0, 4.0, 5.0],
                [15.0, -13.0, 3.5],
            ],
            line_of_sight: true,
            num_paths: 4,
            carrier_hz: 28e9,
            bandwidth_hz: 200e6,
            los_gain: 1.0,
            scatter_gain: 0.5,
            seed: 0,
        }
    }
}

/// One labelled user channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub position: [f64; 3],
    pub h: Vec<Complex64>,
    pub beam_label: u32,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Azimuth in [−π, π) and elevation from +z in [0, π] of direction `v`.
fn angles(v: [f64; 3]) -> (f64, f64) {
    let r = norm(v);
    let mut az = v[1].atan2(v[0]);
    if az >= PI {
        az -= 2.0 * PI;
    }
    let el = (v[2] / r).clamp(-1.0, 1.0).acos();
    (az, el)
}

impl Scene {
    pub fn grid_len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return domain("scene grid must be non-empty");
        }
        if !(self.pitch_m >= 0.0) {
            return domain("grid pitch must be non-negative");
        }
        if !(self.carrier_hz > 0.0) || !(self.bandwidth_hz >= 0.0) {
            return domain("carrier must be positive and bandwidth non-negative");
        }
        if !(self.los_gain >= 0.0) || !(self.scatter_gain >= 0.0) {
            return domain("path gains must be non-negative");
        }
        if self.num_paths == 0 {
            return domain("at least one path per user is required");
        }
        if !self.line_of_sight && self.scatterers.is_empty() {
            return domain("scene has no scatterers and line of sight is disabled");
        }
        Ok(())
    }

    /// Position of grid cell (`row`, `col`).
    pub fn position(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.grid_origin[0] + row as f64 * self.pitch_m,
            self.grid_origin[1] + col as f64 * self.pitch_m,
            self.grid_origin[2],
        ]
    }

    /// All grid positions in row-major order.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        (0..self.grid_rows)
            .flat_map(|r| (0..self.grid_cols).map(move |c| self.position(r, c)))
            .collect()
    }

    fn reflection_phases(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.scatterers
            .iter()
            .map(|_| rng.gen_range(0.0..2.0 * PI))
            .collect()
    }

    fn ray(&self, gain: f64, length: f64, extra_phase: f64, depart: [f64; 3], arrive: [f64; 3]) -> Path {
        let (aod_az, aod_el) = angles(depart);
        let (aoa_az, aoa_el) = angles(arrive);
        Path {
            alpha: gain / length,
            phase: (extra_phase - 2.0 * PI * length / self.wavelength()).rem_euclid(2.0 * PI),
            delay: length / SPEED_OF_LIGHT,
            aod_azimuth: aod_az,
            aod_elevation: aod_el,
            aoa_azimuth: aoa_az,
            aoa_elevation: aoa_el,
        }
    }

    /// Propagation paths from the base station to `user`.
    pub fn paths_at(&self, user: [f64; 3]) -> Result<PathParams> {
        self.validate()?;
        self.paths_with(user, &self.reflection_phases())
    }

    fn paths_with(&self, user: [f64; 3], phases: &[f64]) -> Result<PathParams> {
        let mut paths = Vec::with_capacity(self.num_paths);
        if self.line_of_sight {
            let d = sub(user, self.bs_position);
            let len = norm(d);
            if len == 0.0 {
                return domain("user coincides with the base station");
            }
            paths.push(self.ray(self.los_gain, len, 0.0, d, sub(self.bs_position, user)));
        }
        let mut bounces: Vec<(f64, usize)> = Vec::with_capacity(self.scatterers.len());
        for (i, &s) in self.scatterers.iter().enumerate() {
            let len = norm(sub(s, self.bs_position)) + norm(sub(user, s));
            bounces.push((len, i));
        }
        // shortest bounce is strongest under the inverse-distance law
        bounces.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let room = self.num_paths - paths.len();
        for &(len, i) in bounces.iter().take(room) {
            let s = self.scatterers[i];
            let d1 = sub(s, self.bs_position);
            if norm(d1) == 0.0 || norm(sub(user, s)) == 0.0 {
                return domain(format!("scatterer {i} coincides with an endpoint"));
            }
            paths.push(self.ray(self.scatter_gain, len, phases[i], d1, sub(s, user)));
        }
        Ok(PathParams {
            paths,
            bandwidth: self.bandwidth_hz,
        })
    }

    /// Channels at the first `count` grid positions (row-major order).
    pub fn channels(&self, geom: &ArrayGeometry, count: usize) -> Result<Vec<([f64; 3], Vec<Complex64>)>> {
        self.validate()?;
        geom.validate()?;
        if count > self.grid_len() {
            return domain(format!(
                "requested {count} users from a grid of {}",
                self.grid_len()
            ));
        }
        let phases = self.reflection_phases();
        self.positions()
            .into_iter()
            .take(count)
            .map(|p| Ok((p, generate_channel(&self.paths_with(p, &phases)?, geom)?)))
            .collect()
    }
}

/// Channels at the first `count` grid positions, each labelled with the
/// codebook beam that maximizes its rate.
pub fn generate_scene_dataset(
    scene: &Scene,
    geom: &ArrayGeometry,
    count: usize,
    codebook: &Codebook,
    inner: InnerProduct,
) -> Result<Vec<ChannelSample>> {
    if codebook.n_t() != geom.n_t() {
        return domain("codebook was built for a different array");
    }
    scene
        .channels(geom, count)?
        .into_iter()
        .map(|(position, h)| {
            let beam = optimal_beam(&h, codebook, 1.0, inner)?;
            Ok(ChannelSample {
                position,
                h,
                beam_label: beam as u32,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_codebook::build_codebook;

    fn small_scene() -> Scene {
        Scene {
            grid_rows: 6,
            grid_cols: 5,
            ..Scene::default()
        }
    }

    #[test]
    fn default_scene_has_four_paths() {
        let s = Scene::default();
        let p = s.paths_at(s.position(3, 7)).unwrap();
        assert_eq!(p.paths.len(), 4);
        for path in &p.paths {
            assert!(path.alpha > 0.0);
            assert!((-PI..PI).contains(&path.aod_azimuth));
            assert!((0.0..=PI).contains(&path.aod_elevation));
        }
        // LOS is the shortest and hence the strongest per unit gain
        assert!(p.paths[0].delay < p.paths[1].delay);
    }

    #[test]
    fn dataset_is_deterministic() {
        let s = small_scene();
        let g = ArrayGeometry::default();
        let cb = build_codebook(&g, 1).unwrap();
        let a = generate_scene_dataset(&s, &g, 30, &cb, InnerProduct::Bilinear).unwrap();
        let b = generate_scene_dataset(&s, &g, 30, &cb, InnerProduct::Bilinear).unwrap();
        assert_eq!(a, b);
        let one = generate_scene_dataset(&s, &g, 1, &cb, InnerProduct::Bilinear).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].h.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert!(generate_scene_dataset(&s, &g, 31, &cb, InnerProduct::Bilinear).is_err());
    }

    #[test]
    fn distinct_positions_give_distinct_channels() {
        let s = small_scene();
        let g = ArrayGeometry::default();
        let ch = s.channels(&g, s.grid_len()).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..ch.len() {
            for j in i + 1..ch.len() {
                let d: f64 = ch[i].1.iter().zip(&ch[j].1).map(|(a, b)| (a - b).norm_sqr()).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0, "{min}");
    }

    #[test]
    fn no_paths_is_a_domain_error() {
        let s = Scene {
            scatterers: vec![],
            line_of_sight: false,
            ..small_scene()
        };
        assert!(s.channels(&ArrayGeometry::default(), 1).is_err());
    }

    #[test]
    fn scatter_only_scene_uses_scatterers() {
        let s = Scene {
            line_of_sight: false,
            num_paths: 2,
            ..small_scene()
        };
        let p = s.paths_at(s.position(0, 0)).unwrap();
        assert_eq!(p.paths.len(), 2);
    }

    #[test]
    fn angles_follow_direction() {
        let (az, el) = angles([1.0, 0.0, 0.0]);
        assert_eq!((az, el), (0.0, PI / 2.0));
        let (az, _) = angles([-1.0, 0.0, 0.0]);
        assert_eq!(az, -PI);
        let (_, el) = angles([0.0, 0.0, -2.0]);
        assert_eq!(el, PI);
    }
}
