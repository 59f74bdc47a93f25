//! Experiment configuration and its TOML file form.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::beam_codebook::InnerProduct;
use crate::channel_sim::{ArrayGeometry, Scene};
use crate::error::{Error, Result};
use crate::grad::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Channel,
    Beam,
    Ccm,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Channel => "channel",
            Task::Beam => "beam",
            Task::Ccm => "ccm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    AsnAden,
    AsnDnn,
    UniformAden,
    UniformDnn,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::AsnAden,
        Scheme::AsnDnn,
        Scheme::UniformAden,
        Scheme::UniformDnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::AsnAden => "asn_aden",
            Scheme::AsnDnn => "asn_dnn",
            Scheme::UniformAden => "uniform_aden",
            Scheme::UniformDnn => "uniform_dnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }

    pub fn learns_selection(self) -> bool {
        matches!(self, Scheme::AsnAden | Scheme::AsnDnn)
    }

    pub fn runge_kutta(self) -> bool {
        matches!(self, Scheme::AsnAden | Scheme::UniformAden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub oversampling: usize,
    pub inner_product: InnerProduct,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            oversampling: 1,
            inner_product: InnerProduct::Bilinear,
        }
    }
}

/// What `gen-data` extracts from the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Users taken from the grid in row-major order (channel and beam tasks).
    pub users: usize,
    /// Grid cells between the 5×5 sampling points of one collection block.
    pub block_step: usize,
    /// Grid cells between the origins of neighbouring blocks.
    pub block_stride: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            users: 1600,
            block_step: 1,
            block_stride: 2,
            block_rows: 18,
            block_cols: 18,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub asn_layers: usize,
    pub asn_width: usize,
    /// Width of every extrapolation subnetwork (channel and beam tasks).
    pub aden_width: usize,
    /// Subnetwork width for the ccm task.
    pub ccm_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            asn_layers: 3,
            asn_width: 16,
            aden_width: 128,
            ccm_width: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho0: f64,
    pub rho_factor: f64,
    pub rho_cap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            beta1: 1.0,
            beta2: 10.0,
            rho0: 5.0,
            rho_factor: 5.0,
            rho_cap: 390_625.0,
        }
    }
}

impl LossWeights {
    /// `min(rho0 · rho_factor^epoch, rho_cap)`.
    pub fn rho(&self, epoch: usize) -> f64 {
        let e = i32::try_from(epoch).unwrap_or(i32::MAX);
        (self.rho0 * self.rho_factor.powi(e)).min(self.rho_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub scheme: Scheme,
    pub m_t: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of samples used for training; the rest is held out.
    pub split_fraction: f64,
    /// Fixes the train/holdout split independently of the run seed.
    pub split_seed: u64,
    /// Seeds initialization, shuffling and input noise.
    pub seed: u64,
    pub noisy_inputs: bool,
    pub input_snr_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Channel,
            scheme: Scheme::AsnAden,
            m_t: 4,
            batch_size: 64,
            epochs: 30,
            split_fraction: 0.8,
            split_seed: 2024,
            seed: 42,
            noisy_inputs: false,
            input_snr_db: 30.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: Scene,
    pub array: ArrayGeometry,
    pub codebook: CodebookConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    pub train: TrainConfig,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.array.validate()?;
        let n_t = self.array.n_t();
        let t = &self.train;
        if t.m_t == 0 || t.m_t >= n_t {
            return bad(format!("m_t must satisfy 1 <= m_t < {n_t}, got {}", t.m_t));
        }
        if !(t.split_fraction > 0.0 && t.split_fraction < 1.0) {
            return bad("split_fraction must lie in (0, 1)");
        }
        if t.batch_size == 0 || t.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if t.input_snr_db.is_nan() {
            return bad("input_snr_db must be a number");
        }
        let l = &self.loss;
        let weights = [l.alpha1, l.alpha2, l.beta1, l.beta2, l.rho0, l.rho_factor, l.rho_cap];
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("loss weights must be positive and finite");
        }
        if l.rho_cap < l.rho0 {
            return bad("rho_cap must be at least rho0");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer settings out of range");
        }
        let m = &self.model;
        if m.asn_layers == 0 || m.asn_width == 0 || m.aden_width == 0 || m.ccm_width == 0 {
            return bad("network sizes must be positive");
        }
        if self.codebook.oversampling == 0 {
            return bad("codebook oversampling must be at least 1");
        }
        let d = &self.data;
        if d.users == 0 || d.users > self.scene.grid_len() {
            return bad(format!(
                "users must lie in 1..={}, got {}",
                self.scene.grid_len(),
                d.users
            ));
        }
        if d.block_step == 0 || d.block_stride == 0 || d.block_rows == 0 || d.block_cols == 0 {
            return bad("block layout values must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ExperimentConfig::default().to_toml().unwrap();
        let text = text.replacen("[train]\n", "[train]\nwarmup = 3\n", 1);
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn rho_schedule() {
        let w = LossWeights::default();
        assert_eq!(w.rho(0), 5.0);
        assert_eq!(w.rho(2), 125.0);
        assert_eq!(w.rho(7), 390_625.0);
        assert_eq!(w.rho(40), 390_625.0);
        assert_eq!(w.rho(usize::MAX), 390_625.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.train.m_t = 16;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.train.split_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.loss.rho_cap = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.data.users = 1601;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scheme_names_parse() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::parse(s.name()).unwrap(), s);
        }
        assert!(Scheme::parse("random").is_err());
    }
}
