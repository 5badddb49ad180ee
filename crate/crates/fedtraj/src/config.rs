//! Run configuration: one TOML document covering every tunable.
//!
//! Missing keys take their defaults, unknown keys are rejected, and every
//! command writes the fully resolved document next to its outputs, so the
//! written file alone reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedtraj_core::aggregation::{budget_for, DPBudget};
use fedtraj_core::env::{TransitionConfig, DEFAULT_ALPHA};
use fedtraj_core::evaluation::EvalConfig;
use fedtraj_core::features::{FeatureContext, LocationEncoding, NetConfig};
use fedtraj_core::federated::RoundConfig;
use fedtraj_core::policy::PpoConfig;
use fedtraj_core::synth::BehaviorPolicy;
use fedtraj_core::LocationGrid;

use crate::error::{self, Error, Result};

pub const HEADER: &str = "# fedtraj run config v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridSection,
    pub env: EnvSection,
    pub data: DataSection,
    pub net: NetSection,
    pub training: TrainingSection,
    pub ppo: PpoSection,
    pub privacy: PrivacySection,
    pub evaluation: EvaluationSection,
    pub attack: AttackSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub width: u32,
    pub height: u32,
    /// Cell edge in meters.
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub alpha: f64,
    pub slots_per_day: u32,
}

/// Ground-truth generation for `synth-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub num_users: usize,
    pub days: usize,
    /// Users drawn for a disjoint held-out file; 0 skips it.
    pub held_out_users: usize,
    /// Stay, HomeReturn, PreferentialReturn, Explore.
    pub behavior: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Absolute,
    HomeRelative,
    HomeRing,
}

impl From<Encoding> for LocationEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Absolute => LocationEncoding::Absolute,
            Encoding::HomeRelative => LocationEncoding::HomeRelative,
            Encoding::HomeRing => LocationEncoding::HomeRing,
        }
    }
}

impl From<LocationEncoding> for Encoding {
    fn from(e: LocationEncoding) -> Self {
        match e {
            LocationEncoding::Absolute => Encoding::Absolute,
            LocationEncoding::HomeRelative => Encoding::HomeRelative,
            LocationEncoding::HomeRing => Encoding::HomeRing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub window: usize,
    pub loc_dim: usize,
    pub slot_dim: usize,
    pub action_dim: usize,
    pub model_dim: usize,
    pub hidden: usize,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub num_rounds: usize,
    pub batch_trajectories: usize,
    pub episode_len: usize,
    pub local_iterations: usize,
    pub disc_batch: usize,
    pub policy_lr: f64,
    pub disc_lr: f64,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivacyMode {
    NoiseFree,
    MeanOnly,
    Compensated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub mode: PrivacyMode,
    /// Ignored in noise-free mode.
    pub epsilon: f64,
    /// Budget split; used in compensated mode only.
    pub kappa: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub log_bins: usize,
    pub daily_max: usize,
    pub top_k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Upper bound on members and on non-members.
    pub max_per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            grid: GridSection::default(),
            env: EnvSection::default(),
            data: DataSection::default(),
            net: NetSection::default(),
            training: TrainingSection::default(),
            ppo: PpoSection::default(),
            privacy: PrivacySection::default(),
            evaluation: EvaluationSection::default(),
            attack: AttackSection::default(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self { width: 20, height: 20, cell_size: 500.0, origin_x: 0.0, origin_y: 0.0 }
    }
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, slots_per_day: fedtraj_core::trajectory::DEFAULT_SLOTS_PER_DAY }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self { num_users: 50, days: 20, held_out_users: 25, behavior: BehaviorPolicy::default().probs }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            window: n.window,
            loc_dim: n.loc_dim,
            slot_dim: n.slot_dim,
            action_dim: n.action_dim,
            model_dim: n.model_dim,
            hidden: n.hidden,
            encoding: LocationEncoding::default().into(),
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let r = RoundConfig::new(DPBudget::noise_free(2).expect("two users"), 0);
        Self {
            num_rounds: r.num_rounds,
            batch_trajectories: r.batch_trajectories,
            episode_len: r.episode_len,
            local_iterations: r.local_iterations,
            disc_batch: r.disc_batch,
            policy_lr: r.policy_lr,
            disc_lr: r.disc_lr,
            checkpoint_every: 10,
        }
    }
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        Self {
            clip: p.clip,
            epochs: p.epochs,
            minibatch: p.minibatch,
            entropy_coef: p.entropy_coef,
            value_coef: p.value_coef,
            gamma: p.gamma,
            gae_lambda: p.gae_lambda,
        }
    }
}

impl Default for PrivacySection {
    fn default() -> Self {
        let beta = RoundConfig::new(DPBudget::noise_free(2).expect("two users"), 0).beta;
        Self { mode: PrivacyMode::Compensated, epsilon: 1.0, kappa: 2.0, beta }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::new(1);
        Self { log_bins: e.log_bins, daily_max: e.daily_max, top_k_max: e.top_k_max }
    }
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { max_per_class: 250 }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or_default();
        if first != HEADER {
            return Err(Error::Header { expected: HEADER, found: first.to_string() });
        }
        toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&error::read(path)?)
    }

    /// The resolved document, defaults included.
    pub fn to_text(&self) -> String {
        let body = toml::to_string(self).expect("configuration always serializes");
        format!("{HEADER}\n{body}")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write(path, &self.to_text())
    }

    pub fn grid(&self) -> Result<LocationGrid> {
        let g = &self.grid;
        Ok(LocationGrid::new(g.width, g.height, g.cell_size, (g.origin_x, g.origin_y))?)
    }

    pub fn env(&self) -> Result<TransitionConfig> {
        Ok(TransitionConfig::new(self.env.alpha, self.grid()?)?)
    }

    pub fn net(&self) -> NetConfig {
        let n = &self.net;
        NetConfig {
            window: n.window,
            loc_dim: n.loc_dim,
            slot_dim: n.slot_dim,
            action_dim: n.action_dim,
            model_dim: n.model_dim,
            hidden: n.hidden,
        }
    }

    pub fn features(&self) -> Result<FeatureContext> {
        Ok(FeatureContext::with_encoding(self.grid()?, self.env.slots_per_day, self.net.encoding.into())?)
    }

    pub fn behavior(&self) -> Result<BehaviorPolicy> {
        Ok(BehaviorPolicy::new(self.data.behavior)?)
    }

    pub fn eval(&self) -> EvalConfig {
        let e = &self.evaluation;
        EvalConfig {
            slots_per_day: self.env.slots_per_day,
            log_bins: e.log_bins,
            daily_max: e.daily_max,
            top_k_max: e.top_k_max,
        }
    }

    pub fn budget(&self, num_users: usize) -> Result<DPBudget> {
        let p = &self.privacy;
        Ok(match p.mode {
            PrivacyMode::NoiseFree => DPBudget::noise_free(num_users)?,
            PrivacyMode::MeanOnly => budget_for(p.epsilon, num_users, None)?,
            PrivacyMode::Compensated => budget_for(p.epsilon, num_users, Some(p.kappa))?,
        })
    }

    pub fn ppo(&self) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            clip: p.clip,
            epochs: p.epochs,
            minibatch: p.minibatch,
            entropy_coef: p.entropy_coef,
            value_coef: p.value_coef,
            gamma: p.gamma,
            gae_lambda: p.gae_lambda,
        }
    }

    pub fn rounds(&self, num_users: usize) -> Result<RoundConfig> {
        let t = &self.training;
        let mut r = RoundConfig::new(self.budget(num_users)?, self.seed);
        r.num_rounds = t.num_rounds;
        r.batch_trajectories = t.batch_trajectories;
        r.episode_len = t.episode_len;
        r.local_iterations = t.local_iterations;
        r.disc_batch = t.disc_batch;
        r.beta = self.privacy.beta;
        r.ppo = self.ppo();
        r.policy_lr = t.policy_lr;
        r.disc_lr = t.disc_lr;
        r.checkpoint_every = t.checkpoint_every;
        r.validate()?;
        Ok(r)
    }

    /// Every violated constraint across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        let g = &self.grid;
        check(g.width >= 1 && g.height >= 1, "grid.width and grid.height must be at least 1");
        check(positive(g.cell_size), "grid.cell_size must be positive");
        check(g.origin_x.is_finite() && g.origin_y.is_finite(), "grid origin must be finite");
        check(positive(self.env.alpha), "env.alpha must be positive");
        check(self.env.slots_per_day >= 1, "env.slots_per_day must be at least 1");
        let d = &self.data;
        check(d.num_users >= 1, "data.num_users must be at least 1");
        check(d.days >= 1, "data.days must be at least 1");
        check(BehaviorPolicy::new(d.behavior).is_ok(), "data.behavior must be probabilities summing to 1");
        check(self.net().validate().is_ok(), "net sizes must all be at least 1");
        let p = &self.privacy;
        match p.mode {
            PrivacyMode::NoiseFree => {}
            PrivacyMode::MeanOnly => {
                check(positive(p.epsilon), "privacy.epsilon must be positive");
                check(p.beta == 0.0, "privacy.beta must be 0 in mean-only mode");
            }
            PrivacyMode::Compensated => {
                check(positive(p.epsilon), "privacy.epsilon must be positive");
                check(p.kappa > 1.0 && p.kappa.is_finite(), "privacy.kappa must exceed 1");
            }
        }
        let t = &self.training;
        let mut rounds = RoundConfig::new(DPBudget::noise_free(2).expect("two users"), self.seed);
        rounds.num_rounds = t.num_rounds;
        rounds.batch_trajectories = t.batch_trajectories;
        rounds.episode_len = t.episode_len;
        rounds.local_iterations = t.local_iterations;
        rounds.disc_batch = t.disc_batch;
        rounds.beta = p.beta;
        rounds.ppo = self.ppo();
        rounds.policy_lr = t.policy_lr;
        rounds.disc_lr = t.disc_lr;
        for e in rounds.violations() {
            out.push(e.to_string());
        }
        let e = &self.evaluation;
        if e.log_bins == 0 || e.daily_max == 0 || e.top_k_max == 0 {
            out.push("evaluation bins must all be at least 1".into());
        }
        if self.attack.max_per_class < 10 {
            out.push("attack.max_per_class must be at least 10".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_text();
        assert!(text.starts_with(HEADER));
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn partial_documents_take_defaults() {
        let c = RunConfig::parse(&format!("{HEADER}\nseed = 9\n[privacy]\nmode = \"noise-free\"\n")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.privacy.mode, PrivacyMode::NoiseFree);
        assert_eq!(c.grid, GridSection::default());
    }

    #[test]
    fn unknown_keys_and_missing_header_are_rejected() {
        assert!(RunConfig::parse(&format!("{HEADER}\nsed = 9\n")).is_err());
        assert!(RunConfig::parse("seed = 9\n").is_err());
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = RunConfig::default();
        c.grid.cell_size = -1.0;
        c.env.alpha = 0.0;
        c.privacy.kappa = 1.0;
        c.training.policy_lr = 0.0;
        c.ppo.gamma = 2.0;
        let v = c.violations();
        assert_eq!(v.len(), 5, "{v:?}");
        match c.validate() {
            Err(Error::Config(list)) => assert_eq!(list, v),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mean_only_requires_zero_beta() {
        let mut c = RunConfig::default();
        c.privacy.mode = PrivacyMode::MeanOnly;
        c.privacy.beta = 0.5;
        assert_eq!(c.violations(), vec!["privacy.beta must be 0 in mean-only mode".to_string()]);
        c.privacy.beta = 0.0;
        let b = c.budget(100).unwrap();
        assert_eq!(b.lambda_mean, 0.01);
    }
}
