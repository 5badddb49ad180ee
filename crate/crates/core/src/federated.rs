//! Round-based federated training: the server samples synthetic episodes,
//! clients train personal discriminators and score the server's pairs, and
//! the server turns the aggregated scores into PPO rewards.
//!
//! Every message crosses a byte-level serialization boundary. Upstream
//! messages carry only `(pair index, score)` entries, which
//! [`message_audit`] verifies against the real data tagged at ingestion.

use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;

use crate::aggregation::{DPBudget, DpMode, RewardBatch};
use crate::discriminator::{LabeledTrajectory, LocalStatus, PairScorer, PersonalDiscriminator};
use crate::env::TransitionConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureContext, NetConfig};
use crate::grid::LocationId;
use crate::math;
use crate::neuro::{Adam, AdamConfig};
use crate::policy::{
    compute_advantages, normalize_advantages, ppo_update, sample_trajectory, PolicyNet, PpoConfig,
    PpoStats, Rollout,
};
use crate::seed::{stream, Purpose};
use crate::trajectory::{ClientDataset, Point, State, UserId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundConfig {
    pub num_rounds: usize,
    /// Synthetic episodes per batch (two batches per round).
    pub batch_trajectories: usize,
    pub episode_len: usize,
    pub local_iterations: usize,
    pub disc_batch: usize,
    pub beta: f64,
    pub budget: DPBudget,
    pub ppo: PpoConfig,
    pub policy_lr: f64,
    pub disc_lr: f64,
    /// Checkpoint interval in rounds; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl RoundConfig {
    pub fn new(budget: DPBudget, seed: u64) -> Self {
        Self {
            num_rounds: 60,
            batch_trajectories: 32,
            episode_len: 47,
            local_iterations: crate::discriminator::DEFAULT_LOCAL_ITERATIONS,
            disc_batch: crate::discriminator::DEFAULT_BATCH,
            beta: 0.1,
            budget,
            ppo: PpoConfig::default(),
            policy_lr: 3e-4,
            disc_lr: crate::discriminator::DEFAULT_LEARNING_RATE,
            checkpoint_every: 0,
            seed,
        }
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let mut need = |ok: bool, name: &'static str, reason: &str| {
            if !ok {
                out.push(Error::param(name, reason));
            }
        };
        need(self.batch_trajectories >= 1, "batch_trajectories", "must be at least 1");
        need(self.episode_len >= 1, "episode_len", "must be at least 1");
        need(self.local_iterations >= 1, "local_iterations", "must be at least 1");
        need(self.disc_batch >= 1, "disc_batch", "must be at least 1");
        need(self.beta >= 0.0 && self.beta.is_finite(), "beta", "must be non-negative");
        need(
            !(self.budget.mode == DpMode::MeanOnly && self.beta > 0.0),
            "beta",
            "a mean-only budget requires beta = 0",
        );
        need(self.policy_lr > 0.0, "policy_lr", "must be positive");
        need(self.disc_lr > 0.0, "disc_lr", "must be positive");
        if let Err(e) = self.ppo.validate() {
            out.push(e);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

const DOWN_TAG: u8 = b'D';
const UP_TAG: u8 = b'U';

/// A generated episode as shipped to clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticEpisode {
    pub home: LocationId,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerToClientMsg {
    pub round: u32,
    pub episodes: Vec<SyntheticEpisode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientToServerMsg {
    pub round: u32,
    /// `(pair index, score)`, pairs numbered episode by episode.
    pub scores: Vec<(u32, f64)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Decode(alloc::format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length is N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn tag(&mut self, want: u8) -> Result<()> {
        let [t] = self.take::<1>()?;
        if t != want {
            return Err(Error::Decode(alloc::format!("unexpected message tag {t:#04x}")));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Decode(alloc::format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

impl ServerToClientMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(DOWN_TAG);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.episodes.len() as u32).to_le_bytes());
        for e in &self.episodes {
            out.extend_from_slice(&e.home.0.to_le_bytes());
            out.extend_from_slice(&(e.points.len() as u32).to_le_bytes());
            for p in &e.points {
                out.extend_from_slice(&p.slot.to_le_bytes());
                out.extend_from_slice(&p.loc.0.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.tag(DOWN_TAG)?;
        let round = r.u32()?;
        let n = r.u32()? as usize;
        let mut episodes = Vec::new();
        for _ in 0..n {
            let home = LocationId(r.u32()?);
            let len = r.u32()? as usize;
            let mut points = Vec::new();
            for _ in 0..len {
                let slot = r.u32()?;
                points.push(Point { slot, loc: LocationId(r.u32()?) });
            }
            episodes.push(SyntheticEpisode { home, points });
        }
        r.finish()?;
        Ok(Self { round, episodes })
    }
}

impl ClientToServerMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 12 * self.scores.len());
        out.push(UP_TAG);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.scores.len() as u32).to_le_bytes());
        for (i, s) in &self.scores {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Rejects anything but well-formed `(index, score)` entries with
    /// strictly increasing indices and scores in `[0, 1]`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        r.tag(UP_TAG)?;
        let round = r.u32()?;
        let n = r.u32()? as usize;
        let mut scores = Vec::new();
        for _ in 0..n {
            let i = r.u32()?;
            let s = r.f64()?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Decode(alloc::format!("score {s} outside [0, 1]")));
            }
            if scores.last().is_some_and(|&(prev, _)| prev >= i) {
                return Err(Error::Decode(alloc::format!("pair index {i} out of order")));
            }
            scores.push((i, s));
        }
        r.finish()?;
        Ok(Self { round, scores })
    }
}

/// Serialized messages in the order they crossed the boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageTrace {
    pub down: Vec<(u32, Vec<u8>)>,
    /// `(round, sender, bytes)`.
    pub up: Vec<(u32, UserId, Vec<u8>)>,
}

/// Byte patterns of every real `(slot, loc)` point, tagged at ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RealDataRegistry {
    patterns: BTreeSet<[u8; 8]>,
}

fn point_pattern(p: &Point) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&p.slot.to_le_bytes());
    out[4..].copy_from_slice(&p.loc.0.to_le_bytes());
    out
}

impl RealDataRegistry {
    pub fn ingest(&mut self, data: &ClientDataset) {
        for t in data.trajectories() {
            self.patterns.extend(t.points().iter().map(point_pattern));
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Offset of the first real point serialized anywhere in `bytes`.
    pub fn find_in(&self, bytes: &[u8]) -> Option<usize> {
        bytes.windows(8).position(|w| self.patterns.contains(<&[u8; 8]>::try_from(w).unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditVerdict {
    Pass,
    /// An upstream message that is not a well-formed score message.
    Malformed { round: u32, sender: UserId, reason: alloc::string::String },
    /// An upstream message containing a real point at `offset`.
    Leak { round: u32, sender: UserId, offset: usize },
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        *self == AuditVerdict::Pass
    }
}

/// Length of the `tag, round, count` header of an upstream message.
const UP_HEADER: usize = 9;
/// Length of one `(pair index, score)` entry.
const UP_ENTRY: usize = 12;

/// Decodes every upstream message strictly, then scans each
/// `(pair index, score)` entry for the bytes of a real point. Header fields
/// and entry boundaries are structure, not payload, and are not scanned.
pub fn message_audit(trace: &MessageTrace, registry: &RealDataRegistry) -> AuditVerdict {
    for (round, sender, bytes) in &trace.up {
        if let Err(e) = ClientToServerMsg::decode(bytes) {
            return AuditVerdict::Malformed { round: *round, sender: *sender, reason: e.to_string() };
        }
        for (k, entry) in bytes[UP_HEADER..].chunks(UP_ENTRY).enumerate() {
            if let Some(at) = registry.find_in(entry) {
                let offset = UP_HEADER + k * UP_ENTRY + at;
                return AuditVerdict::Leak { round: *round, sender: *sender, offset };
            }
        }
    }
    AuditVerdict::Pass
}

/// One device: its private data and personal discriminator.
#[derive(Debug, Clone)]
pub struct Client {
    data: ClientDataset,
    disc: PersonalDiscriminator,
}

impl Client {
    pub fn new(data: ClientDataset, disc: PersonalDiscriminator) -> Self {
        Self { data, disc }
    }

    pub fn user(&self) -> UserId {
        self.data.user()
    }

    pub fn discriminator(&self) -> &PersonalDiscriminator {
        &self.disc
    }

    fn episodes(msg: &[u8]) -> Result<(u32, Vec<LabeledTrajectory>)> {
        let down = ServerToClientMsg::decode(msg)?;
        let eps = down.episodes.into_iter().map(|e| LabeledTrajectory::new(e.points, e.home)).collect();
        Ok((down.round, eps))
    }

    /// Trains on the generated batch; returns the mean loss.
    pub fn local_phase<R: Rng + ?Sized>(
        &mut self,
        msg: &[u8],
        iterations: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let (_, synthetic) = Self::episodes(msg)?;
        let t = self.disc.train_local(&self.data, &synthetic, iterations, batch, rng)?;
        Ok(match t.status {
            LocalStatus::Trained => Some(math::mean(&t.losses)),
            LocalStatus::SkippedDegenerate => None,
        })
    }

    /// Scores every pair of the generated batch and serializes the reply.
    pub fn score_phase(&self, msg: &[u8]) -> Result<Vec<u8>> {
        let (round, episodes) = Self::episodes(msg)?;
        let mut scores = Vec::new();
        for e in &episodes {
            for s in self.disc.score_pairs(e)? {
                scores.push((scores.len() as u32, s));
            }
        }
        Ok(ClientToServerMsg { round, scores }.encode())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    pub participants: usize,
    pub excluded: Vec<UserId>,
    /// Mean local loss per participating client, in user order.
    pub disc_losses: Vec<f64>,
    pub mean_disc_loss: f64,
    /// Mean of the noised score means over all pairs.
    pub mean_score: f64,
    pub mean_xi: f64,
    /// Mean compensated reward over all pairs.
    pub mean_reward: f64,
    pub lambda_mean: f64,
    pub lambda_var: f64,
    pub ppo: PpoStats,
}

/// Server and clients of one training run.
#[derive(Debug, Clone)]
pub struct Federation {
    policy: PolicyNet,
    optimizer: Adam,
    env: TransitionConfig,
    clients: Vec<Client>,
    registry: RealDataRegistry,
    trace: Option<MessageTrace>,
    rounds_done: u32,
}

impl Federation {
    /// Clients are ordered by user id, which fixes the aggregation order.
    pub fn new(
        cfg: &RoundConfig,
        net: NetConfig,
        env: TransitionConfig,
        ctx: FeatureContext,
        mut datasets: Vec<ClientDataset>,
    ) -> Result<Self> {
        if ctx.grid != *env.grid() {
            return Err(Error::param("grid", "features and environment must share one grid"));
        }
        cfg.validate()?;
        net.validate()?;
        if datasets.len() < 2 {
            return Err(Error::InsufficientClients { available: datasets.len(), required: 2 });
        }
        datasets.sort_by_key(|d| d.user());
        if datasets.windows(2).any(|w| w[0].user() == w[1].user()) {
            return Err(Error::param("clients", "user ids must be unique"));
        }
        let policy = PolicyNet::new(net, ctx, &mut stream(cfg.seed, Purpose::Init, 0, 0))?;
        let optimizer = Adam::new(policy.params(), AdamConfig::with_learning_rate(cfg.policy_lr));
        let mut registry = RealDataRegistry::default();
        let mut clients = Vec::with_capacity(datasets.len());
        for d in datasets {
            for t in d.trajectories() {
                t.validate(env.grid())?;
            }
            registry.ingest(&d);
            let mut rng = stream(cfg.seed, Purpose::Init, 1, d.user().0 as u64);
            let disc = PersonalDiscriminator::new(d.user(), net, ctx, cfg.disc_lr, &mut rng)?;
            clients.push(Client::new(d, disc));
        }
        Ok(Self { policy, optimizer, env, clients, registry, trace: None, rounds_done: 0 })
    }

    /// Keep every serialized message for auditing.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(MessageTrace::default);
    }

    pub fn trace(&self) -> Option<&MessageTrace> {
        self.trace.as_ref()
    }

    pub fn trace_mut(&mut self) -> Option<&mut MessageTrace> {
        self.trace.as_mut()
    }

    pub fn registry(&self) -> &RealDataRegistry {
        &self.registry
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn into_policy(self) -> PolicyNet {
        self.policy
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn rounds_done(&self) -> u32 {
        self.rounds_done
    }

    fn sample_batch(&self, cfg: &RoundConfig, which: u64) -> Result<(ServerToClientMsg, Vec<Rollout>)> {
        let round = self.rounds_done;
        let mut rng = stream(cfg.seed, Purpose::Rollout, round as u64, which);
        let cells = self.env.grid().num_cells();
        let mut episodes = Vec::with_capacity(cfg.batch_trajectories);
        let mut rollouts = Vec::with_capacity(cfg.batch_trajectories);
        for _ in 0..cfg.batch_trajectories {
            let home = LocationId(rng.gen_range(0..cells));
            let start = State::at_home(home, 0);
            let (t, r) =
                sample_trajectory(&self.policy, &self.env, start, cfg.episode_len, UserId(0), &mut rng)?;
            episodes.push(SyntheticEpisode { home, points: t.into_points() });
            rollouts.push(r);
        }
        Ok((ServerToClientMsg { round, episodes }, rollouts))
    }

    pub fn run_round(&mut self, cfg: &RoundConfig) -> Result<RoundReport> {
        cfg.validate()?;
        let round = self.rounds_done;

        // negatives for local discriminator training
        let (train_msg, _) = self.sample_batch(cfg, 0)?;
        let train_bytes = train_msg.encode();
        let mut active = Vec::new();
        let mut excluded = Vec::new();
        let mut disc_losses = Vec::new();
        for (i, c) in self.clients.iter_mut().enumerate() {
            let mut rng = stream(cfg.seed, Purpose::Client, c.user().0 as u64, round as u64);
            match c.local_phase(&train_bytes, cfg.local_iterations, cfg.disc_batch, &mut rng) {
                Ok(Some(loss)) => {
                    active.push(i);
                    disc_losses.push(loss);
                }
                Ok(None) | Err(_) => excluded.push(c.user()),
            }
        }

        // a fresh batch whose pairs are scored and rewarded
        let (query_msg, mut rollouts) = self.sample_batch(cfg, 1)?;
        let query_bytes = query_msg.encode();
        if let Some(trace) = &mut self.trace {
            trace.down.push((round, train_bytes));
            trace.down.push((round, query_bytes.clone()));
        }
        let num_pairs: usize = rollouts.iter().map(|r| r.len()).sum();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut kept = Vec::new();
        for (pos, &i) in active.iter().enumerate() {
            let c = &self.clients[i];
            let reply = c.score_phase(&query_bytes);
            if let (Some(trace), Ok(bytes)) = (&mut self.trace, &reply) {
                trace.up.push((round, c.user(), bytes.clone()));
            }
            let decoded = reply.and_then(|b| ClientToServerMsg::decode(&b));
            match decoded {
                Ok(msg) if msg.round == round && msg.scores.len() == num_pairs => {
                    columns.push(msg.scores.into_iter().map(|(_, s)| s).collect());
                    kept.push(pos);
                }
                _ => excluded.push(c.user()),
            }
        }
        let disc_losses: Vec<f64> = kept.iter().map(|&p| disc_losses[p]).collect();
        excluded.sort();
        let budget = cfg.budget.with_users(columns.len())?;

        let per_pair: Vec<Vec<f64>> =
            (0..num_pairs).map(|j| columns.iter().map(|c| c[j]).collect()).collect();
        let mut noise = stream(cfg.seed, Purpose::Noise, round as u64, 0);
        let batch = RewardBatch::aggregate(per_pair, cfg.beta, &budget, &mut noise)?;

        let mut offset = 0;
        for r in &mut rollouts {
            r.rewards = batch.reward[offset..offset + r.len()].to_vec();
            offset += r.len();
        }
        compute_advantages(&mut rollouts, cfg.ppo.gamma, cfg.ppo.gae_lambda)?;
        normalize_advantages(&mut rollouts);
        let mut rng = stream(cfg.seed, Purpose::Rollout, round as u64, 2);
        let ppo = ppo_update(&mut self.policy, &mut self.optimizer, &rollouts, &cfg.ppo, &mut rng)?;

        self.rounds_done += 1;
        Ok(RoundReport {
            round,
            participants: columns.len(),
            excluded,
            mean_disc_loss: math::mean(&disc_losses),
            disc_losses,
            mean_score: math::mean(&batch.mean),
            mean_xi: math::mean(&batch.xi),
            mean_reward: math::mean(&batch.reward),
            lambda_mean: budget.lambda_mean,
            lambda_var: budget.lambda_var,
            ppo,
        })
    }

    /// Runs the remaining rounds of `cfg`, calling `checkpoint` with the
    /// number of completed rounds every `checkpoint_every` rounds.
    pub fn train<F>(&mut self, cfg: &RoundConfig, mut checkpoint: F) -> Result<Vec<RoundReport>>
    where
        F: FnMut(u32, &PolicyNet) -> Result<()>,
    {
        let mut history = Vec::with_capacity(cfg.num_rounds);
        for _ in 0..cfg.num_rounds {
            history.push(self.run_round(cfg)?);
            if cfg.checkpoint_every > 0 && self.rounds_done as usize % cfg.checkpoint_every == 0 {
                checkpoint(self.rounds_done, &self.policy)?;
            }
        }
        Ok(history)
    }
}

/// Builds a federation and trains it for `cfg.num_rounds` rounds.
pub fn train(
    cfg: &RoundConfig,
    net: NetConfig,
    env: TransitionConfig,
    ctx: FeatureContext,
    clients: Vec<ClientDataset>,
) -> Result<(PolicyNet, Vec<RoundReport>)> {
    let mut fed = Federation::new(cfg, net, env, ctx, clients)?;
    let history = fed.train(cfg, |_, _| Ok(()))?;
    Ok((fed.into_policy(), history))
}
