//! The generator: a stochastic policy over the four EPR actions, episode
//! rollouts through the mobility environment, and the PPO update.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{self, TransitionConfig};
use crate::error::{Error, Result};
use crate::features::{Dense, Encoder, FeatureContext, NetConfig, TokenBatch};
use crate::grid::LocationId;
use crate::math;
use crate::neuro::{Adam, Graph, ParameterSet, Var};
use crate::trajectory::{Action, Point, State, Trajectory, UserId};

/// Policy network with an action head (4 logits) and a value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    params: ParameterSet,
    cfg: NetConfig,
    ctx: FeatureContext,
    encoder: Encoder,
    action_hidden: Dense,
    action_head: Dense,
    value_hidden: Dense,
    value_head: Dense,
}

impl PolicyNet {
    /// Random encoder weights, zero-initialized heads (uniform actions).
    pub fn new<R: Rng + ?Sized>(cfg: NetConfig, ctx: FeatureContext, rng: &mut R) -> Result<Self> {
        let mut params = ParameterSet::new();
        let encoder = Encoder::register(&mut params, "policy.enc", &cfg, &ctx, rng)?;
        let width = Encoder::width(&cfg);
        let action_hidden =
            Dense::register(&mut params, "policy.pi_hidden", width, cfg.hidden, false, rng)?;
        let action_head =
            Dense::register(&mut params, "policy.pi_head", cfg.hidden, Action::COUNT, true, rng)?;
        let value_hidden =
            Dense::register(&mut params, "policy.v_hidden", width, cfg.hidden, false, rng)?;
        let value_head = Dense::register(&mut params, "policy.v_head", cfg.hidden, 1, true, rng)?;
        Ok(Self { params, cfg, ctx, encoder, action_hidden, action_head, value_hidden, value_head })
    }

    /// Rebuilds a network around previously saved parameters.
    pub fn from_params(cfg: NetConfig, ctx: FeatureContext, saved: &ParameterSet) -> Result<Self> {
        let mut rng = crate::seed::stream(0, crate::seed::Purpose::Init, 0, 0);
        let mut net = Self::new(cfg, ctx, &mut rng)?;
        net.params.load_from(saved)?;
        Ok(net)
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn context(&self) -> &FeatureContext {
        &self.ctx
    }

    /// Log action probabilities `[Q x 4]` and values `[Q x 1]`.
    pub fn forward(&self, g: &mut Graph, batch: &TokenBatch) -> (Var, Var) {
        let p = &self.params;
        let feats = self.encoder.forward(g, p, batch);
        let h = self.action_hidden.apply(g, p, feats);
        let h = g.tanh(h);
        let logits = self.action_head.apply(g, p, h);
        let log_probs = g.log_softmax_rows(logits);
        let hv = self.value_hidden.apply(g, p, feats);
        let hv = g.tanh(hv);
        let value = self.value_head.apply(g, p, hv);
        (log_probs, value)
    }

    fn evaluate_state(&self, state: &State) -> Result<([f64; 4], f64)> {
        let mut batch = TokenBatch::new(self.cfg.window);
        batch.push_state(state, &self.ctx)?;
        let mut g = Graph::new();
        let (lp, v) = self.forward(&mut g, &batch);
        let lp = g.value(lp).row(0);
        let mut probs = [0.0; 4];
        for (p, l) in probs.iter_mut().zip(lp) {
            *p = math::exp(*l);
        }
        Ok((probs, g.scalar(v)))
    }

    /// `pi(a | state)` for the four actions.
    pub fn action_distribution(&self, state: &State) -> Result<[f64; 4]> {
        Ok(self.evaluate_state(state)?.0)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the last bucket
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Per-step record of one generated episode.
///
/// `points` is the full history; decision `i` was taken in the state
/// `points[..=first_decision + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub home: LocationId,
    pub points: Vec<Point>,
    pub first_decision: usize,
    pub actions: Vec<Action>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Index into `points` of the state of each decision.
    pub fn state_indices(&self) -> Vec<usize> {
        (self.first_decision..self.first_decision + self.len()).collect()
    }

    pub fn state(&self, i: usize) -> Result<State> {
        State::new(self.points[..=self.first_decision + i].to_vec(), self.home)
    }
}

/// Rolls the policy out for `length` steps from `start`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    policy: &PolicyNet,
    env_cfg: &TransitionConfig,
    start: State,
    length: usize,
    user: UserId,
    rng: &mut R,
) -> Result<(Trajectory, Rollout)> {
    if length == 0 {
        return Err(Error::param("length", "episodes need at least one step"));
    }
    start.validate(env_cfg.grid())?;
    let first_decision = start.history().len() - 1;
    let home = start.home();
    let mut state = start;
    let mut actions = Vec::with_capacity(length);
    let mut log_probs = Vec::with_capacity(length);
    let mut values = Vec::with_capacity(length);
    for _ in 0..length {
        let (probs, value) = policy.evaluate_state(&state)?;
        let action = Action::ALL[sample_index(&probs, rng)];
        actions.push(action);
        log_probs.push(math::ln(probs[action.index()]));
        values.push(value);
        env::step(&mut state, action, env_cfg, rng);
    }
    let points = state.into_history();
    let trajectory = Trajectory::new(user, points.clone())?;
    let rollout = Rollout {
        home,
        points,
        first_decision,
        actions,
        log_probs,
        values,
        rewards: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
    };
    Ok((trajectory, rollout))
}

/// Discounted returns and generalized advantage estimates per episode (no
/// bootstrapping past the episode end). Advantages are left unnormalized.
pub fn compute_advantages(rollouts: &mut [Rollout], gamma: f64, gae_lambda: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma <= 1.0) {
        return Err(Error::param("gamma", "discount must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&gae_lambda) {
        return Err(Error::param("gae_lambda", "must lie in [0, 1]"));
    }
    for r in rollouts.iter_mut() {
        let n = r.len();
        if r.rewards.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: r.rewards.len() });
        }
        r.returns = vec![0.0; n];
        r.advantages = vec![0.0; n];
        let mut next_return = 0.0;
        let mut next_adv = 0.0;
        let mut next_value = 0.0;
        for t in (0..n).rev() {
            next_return = r.rewards[t] + gamma * next_return;
            r.returns[t] = next_return;
            let delta = r.rewards[t] + gamma * next_value - r.values[t];
            next_adv = delta + gamma * gae_lambda * next_adv;
            r.advantages[t] = next_adv;
            next_value = r.values[t];
        }
    }
    Ok(())
}

/// Shifts and scales advantages across the batch to zero mean, unit variance.
pub fn normalize_advantages(rollouts: &mut [Rollout]) {
    let all: Vec<f64> = rollouts.iter().flat_map(|r| r.advantages.iter().copied()).collect();
    if all.is_empty() {
        return;
    }
    let mean = math::mean(&all);
    let std = math::sqrt(math::population_variance(&all));
    for r in rollouts.iter_mut() {
        for a in &mut r.advantages {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    /// Minimum number of steps per minibatch; whole episodes are grouped.
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::param("clip", "must be positive"));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::param("epochs/minibatch", "must be at least 1"));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::param("coefficients", "must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::param("gae_lambda", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Averages over all minibatch updates of one [`ppo_update`] call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub updates: usize,
}

struct MinibatchLoss {
    total: Var,
    policy_loss: Var,
    value_loss: Var,
    entropy: Var,
    clipped: f64,
    steps: usize,
}

fn build_loss(
    policy: &PolicyNet,
    g: &mut Graph,
    episodes: &[&Rollout],
    cfg: &PpoConfig,
) -> Result<MinibatchLoss> {
    let mut batch = TokenBatch::new(policy.cfg.window);
    let mut actions = Vec::new();
    let mut old = Vec::new();
    let mut adv = Vec::new();
    let mut ret = Vec::new();
    for r in episodes {
        if r.advantages.len() != r.len() || r.returns.len() != r.len() {
            return Err(Error::param("rollout", "advantages must be computed before updating"));
        }
        batch.push(&r.points, r.home, &r.state_indices(), &policy.ctx)?;
        actions.extend(r.actions.iter().map(|a| a.index()));
        old.extend_from_slice(&r.log_probs);
        adv.extend_from_slice(&r.advantages);
        ret.extend_from_slice(&r.returns);
    }
    let steps = actions.len();
    let (log_probs, values) = policy.forward(g, &batch);
    let taken = g.pick(log_probs, &actions);
    let old_v = g.column(old);
    let diff = g.sub(taken, old_v);
    let ratio = g.exp(diff);
    let clipped = g
        .value(ratio)
        .values()
        .iter()
        .filter(|r| (**r - 1.0).abs() > cfg.clip)
        .count() as f64;
    let adv_v = g.column(adv);
    let surr1 = g.mul(ratio, adv_v);
    let ratio_c = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let surr2 = g.mul(ratio_c, adv_v);
    let surr = g.minimum(surr1, surr2);
    let mean_surr = g.mean(surr);
    let policy_loss = g.scale(mean_surr, -1.0);

    let ret_v = g.column(ret);
    let err = g.sub(values, ret_v);
    let sq = g.mul(err, err);
    let value_loss = g.mean(sq);

    let probs = g.exp(log_probs);
    let plogp = g.mul(probs, log_probs);
    let neg_entropy = g.sum_rows(plogp);
    let mean_neg_entropy = g.mean(neg_entropy);
    let entropy = g.scale(mean_neg_entropy, -1.0);

    let v_term = g.scale(value_loss, cfg.value_coef);
    let e_term = g.scale(mean_neg_entropy, cfg.entropy_coef);
    let partial = g.add(policy_loss, v_term);
    let total = g.add(partial, e_term);
    Ok(MinibatchLoss { total, policy_loss, value_loss, entropy, clipped, steps })
}

/// Clipped surrogate objective of the current policy on `rollouts`,
/// without updating anything.
pub fn evaluate_surrogate(policy: &PolicyNet, rollouts: &[Rollout], clip: f64) -> Result<f64> {
    let cfg = PpoConfig { clip, ..PpoConfig::default() };
    let episodes: Vec<&Rollout> = rollouts.iter().collect();
    let mut g = Graph::new();
    let loss = build_loss(policy, &mut g, &episodes, &cfg)?;
    Ok(-g.scalar(loss.policy_loss))
}

/// Splits episodes into shuffled minibatches of at least `min_steps` steps.
fn minibatches<R: Rng + ?Sized>(
    rollouts: &[Rollout],
    min_steps: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..rollouts.len()).filter(|&i| !rollouts[i].is_empty()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut steps = 0;
    for i in order {
        current.push(i);
        steps += rollouts[i].len();
        if steps >= min_steps {
            out.push(core::mem::take(&mut current));
            steps = 0;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// PPO epochs over `rollouts` (advantages already computed).
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    optimizer: &mut Adam,
    rollouts: &[Rollout],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    cfg.validate()?;
    let mut stats = PpoStats::default();
    let mut clipped = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        for mb in minibatches(rollouts, cfg.minibatch, rng) {
            let episodes: Vec<&Rollout> = mb.iter().map(|&i| &rollouts[i]).collect();
            let mut g = Graph::new();
            let loss = build_loss(policy, &mut g, &episodes, cfg)?;
            g.backward(loss.total, &mut policy.params)?;
            optimizer.step(&mut policy.params)?;
            stats.policy_loss += g.scalar(loss.policy_loss);
            stats.value_loss += g.scalar(loss.value_loss);
            stats.entropy += g.scalar(loss.entropy);
            clipped += loss.clipped;
            steps += loss.steps;
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        let n = stats.updates as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.clip_fraction = clipped / steps as f64;
    }
    Ok(stats)
}
