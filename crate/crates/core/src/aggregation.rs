//! Private reward aggregation: Laplace-noised mean of client scores, a noised
//! spread term subtracted as compensation, and the matching noise scales.

use alloc::vec::Vec;

use rand::distributions::Open01;
use rand::Rng;

use crate::discriminator::{LabeledTrajectory, PairScorer};
use crate::env::TransitionConfig;
use crate::error::{Error, Result};
use crate::grid::LocationId;
use crate::math;
use crate::policy::{sample_trajectory, PolicyNet};
use crate::trajectory::{State, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpMode {
    MeanOnly,
    Compensated,
    NoiseFree,
}

/// Noise scales for one aggregation query. `delta` is always 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPBudget {
    pub mode: DpMode,
    /// Infinite in noise-free mode.
    pub epsilon: f64,
    pub kappa: Option<f64>,
    pub num_users: usize,
    pub lambda_mean: f64,
    pub lambda_var: f64,
}

impl DPBudget {
    pub const DELTA: f64 = 0.0;

    pub fn noise_free(num_users: usize) -> Result<Self> {
        check_users(num_users)?;
        Ok(Self {
            mode: DpMode::NoiseFree,
            epsilon: f64::INFINITY,
            kappa: None,
            num_users,
            lambda_mean: 0.0,
            lambda_var: 0.0,
        })
    }

    /// Same mode and budget recomputed for a different population size.
    pub fn with_users(&self, num_users: usize) -> Result<Self> {
        match self.mode {
            DpMode::NoiseFree => Self::noise_free(num_users),
            _ => budget_for(self.epsilon, num_users, self.kappa),
        }
    }
}

fn check_users(num_users: usize) -> Result<()> {
    if num_users < 2 {
        return Err(Error::InsufficientClients { available: num_users, required: 2 });
    }
    Ok(())
}

/// Mean-only scales without `kappa`, compensated scales with it.
pub fn budget_for(epsilon: f64, num_users: usize, kappa: Option<f64>) -> Result<DPBudget> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", "must be positive and finite"));
    }
    check_users(num_users)?;
    let n = num_users as f64;
    match kappa {
        None => Ok(DPBudget {
            mode: DpMode::MeanOnly,
            epsilon,
            kappa: None,
            num_users,
            lambda_mean: 1.0 / (epsilon * n),
            lambda_var: 0.0,
        }),
        Some(k) if k > 1.0 && k.is_finite() => Ok(DPBudget {
            mode: DpMode::Compensated,
            epsilon,
            kappa: Some(k),
            num_users,
            lambda_mean: k / (epsilon * n),
            lambda_var: 3.0 * k / (epsilon * (k - 1.0) * n),
        }),
        Some(_) => Err(Error::param("kappa", "split parameter must exceed 1")),
    }
}

/// One draw from Laplace(0, scale) by inverse CDF.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::param("scale", "must be non-negative and finite"));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    let mag = -scale * math::ln(1.0 - 2.0 * u.abs());
    Ok(if u < 0.0 { -mag } else { mag })
}

pub fn laplace_density(x: f64, location: f64, scale: f64) -> f64 {
    math::exp(-(x - location).abs() / scale) / (2.0 * scale)
}

fn check_scores(scores: &[f64], budget: &DPBudget) -> Result<()> {
    if scores.len() != budget.num_users {
        return Err(Error::LengthMismatch { expected: budget.num_users, got: scores.len() });
    }
    // sigmoid saturates to exactly 0 or 1 in floating point, so the ends are allowed
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::param("scores", "each score must lie in [0, 1]"));
    }
    Ok(())
}

/// Mean of the scores (summed in the given user order) plus mean noise.
pub fn aggregate_mean<R: Rng + ?Sized>(scores: &[f64], budget: &DPBudget, rng: &mut R) -> Result<f64> {
    check_scores(scores, budget)?;
    Ok(math::mean(scores) + laplace_sample(budget.lambda_mean, rng)?)
}

/// Square root of the noised population variance, clamped at 0.
pub fn dynamics_term<R: Rng + ?Sized>(scores: &[f64], budget: &DPBudget, rng: &mut R) -> Result<f64> {
    check_scores(scores, budget)?;
    if budget.mode == DpMode::MeanOnly {
        return Err(Error::param("mode", "a mean-only budget releases no spread term"));
    }
    let noisy = math::population_variance(scores) + laplace_sample(budget.lambda_var, rng)?;
    Ok(math::sqrt(noisy.max(0.0)))
}

/// The three released quantities for one state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReward {
    pub mean: f64,
    pub xi: f64,
    pub reward: f64,
}

/// Mean reward minus `beta` times the spread term, with independent draws.
/// With `beta == 0` the spread term is neither computed nor released.
pub fn aggregate_pair<R: Rng + ?Sized>(
    scores: &[f64],
    beta: f64,
    budget: &DPBudget,
    rng: &mut R,
) -> Result<PairReward> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", "must be non-negative"));
    }
    let mean = aggregate_mean(scores, budget, rng)?;
    let xi = if beta == 0.0 { 0.0 } else { dynamics_term(scores, budget, rng)? };
    Ok(PairReward { mean, xi, reward: mean - beta * xi })
}

pub fn compensated_reward<R: Rng + ?Sized>(
    scores: &[f64],
    beta: f64,
    budget: &DPBudget,
    rng: &mut R,
) -> Result<f64> {
    Ok(aggregate_pair(scores, beta, budget, rng)?.reward)
}

/// Rewards for a batch of pairs; `scores[i]` holds every user's score of pair `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBatch {
    pub scores: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub xi: Vec<f64>,
    pub reward: Vec<f64>,
}

impl RewardBatch {
    pub fn aggregate<R: Rng + ?Sized>(
        scores: Vec<Vec<f64>>,
        beta: f64,
        budget: &DPBudget,
        rng: &mut R,
    ) -> Result<Self> {
        let n = scores.len();
        let (mut mean, mut xi, mut reward) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for s in &scores {
            let r = aggregate_pair(s, beta, budget, rng)?;
            mean.push(r.mean);
            xi.push(r.xi);
            reward.push(r.reward);
        }
        Ok(Self { scores, mean, xi, reward })
    }
}

/// Result of the empirical lower-bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub trials: usize,
    /// Fraction of trials with the user's return at least the compensated return.
    pub fraction: f64,
    /// `max(0, 1 - 1/beta^2)`.
    pub bound: f64,
    /// Three standard errors of a binomial proportion at `bound`.
    pub slack: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.fraction >= self.bound - self.slack
    }
}

fn discounted(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Samples `trials` episodes and a uniformly random user for each, and counts
/// how often the user's own discounted return is at least the return under
/// the noise-free compensated reward.
#[allow(clippy::too_many_arguments)]
pub fn check_lower_bound<R: Rng + ?Sized>(
    policy: &PolicyNet,
    env: &TransitionConfig,
    scorers: &[&dyn PairScorer],
    beta: f64,
    gamma: f64,
    episode_len: usize,
    trials: usize,
    rng: &mut R,
) -> Result<BoundCheck> {
    if scorers.len() < 2 {
        return Err(Error::InsufficientClients { available: scorers.len(), required: 2 });
    }
    if trials < 100 {
        return Err(Error::param("trials", "need at least 100 trials"));
    }
    if !(beta >= 0.0) {
        return Err(Error::param("beta", "must be non-negative"));
    }
    let budget = DPBudget::noise_free(scorers.len())?;
    let cells = env.grid().num_cells();
    let mut hits = 0usize;
    for _ in 0..trials {
        let home = LocationId(rng.gen_range(0..cells));
        let (traj, _) =
            sample_trajectory(policy, env, State::at_home(home, 0), episode_len, UserId(0), rng)?;
        let episode = LabeledTrajectory::new(traj.into_points(), home);
        let per_user: Vec<Vec<f64>> =
            scorers.iter().map(|s| s.score_pairs(&episode)).collect::<Result<_>>()?;
        let mut hat = Vec::with_capacity(episode.num_pairs());
        for t in 0..episode.num_pairs() {
            let column: Vec<f64> = per_user.iter().map(|s| s[t]).collect();
            hat.push(compensated_reward(&column, beta, &budget, rng)?);
        }
        let u = rng.gen_range(0..scorers.len());
        let j_user = discounted(&per_user[u], gamma);
        let j_hat = discounted(&hat, gamma);
        if j_user >= j_hat - 1e-12 * (1.0 + j_hat.abs()) {
            hits += 1;
        }
    }
    let bound = (1.0 - 1.0 / (beta * beta)).max(0.0);
    let slack = 3.0 * math::sqrt(bound * (1.0 - bound) / trials as f64);
    Ok(BoundCheck { trials, fraction: hits as f64 / trials as f64, bound, slack })
}
