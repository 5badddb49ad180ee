//! Personal discriminators: per-client classifiers of state-action pairs,
//! trained on the client's own trajectories against generated ones.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{Dense, Encoder, FeatureContext, NetConfig, TokenBatch};
use crate::grid::LocationId;
use crate::math;
use crate::neuro::{Adam, AdamConfig, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::trajectory::{Action, ClientDataset, Point, State, Trajectory, UserId};

pub const DEFAULT_LOCAL_ITERATIONS: usize = 5;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// EPR action that explains the move from `points[t]` to `points[t + 1]`.
fn label(points: &[Point], t: usize, home: LocationId) -> Action {
    let (cur, next) = (points[t].loc, points[t + 1].loc);
    if next == cur {
        Action::Stay
    } else if next == home {
        Action::HomeReturn
    } else if points[..t].iter().any(|p| p.loc == next) {
        Action::PreferentialReturn
    } else {
        Action::Explore
    }
}

/// Actions for every consecutive pair of `points` (empty below length 2).
pub fn label_actions(points: &[Point], home: LocationId) -> Vec<Action> {
    (0..points.len().saturating_sub(1)).map(|t| label(points, t, home)).collect()
}

/// Prefix states of `trajectory` paired with the action that explains each move.
pub fn extract_pairs(trajectory: &Trajectory, home: LocationId) -> Vec<(State, Action)> {
    let pts = trajectory.points();
    label_actions(pts, home)
        .into_iter()
        .enumerate()
        .map(|(t, a)| {
            let state = State::new(pts[..=t].to_vec(), home).expect("trajectory slots are monotonic");
            (state, a)
        })
        .collect()
}

/// A trajectory with its home and the labeled action of every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTrajectory {
    pub home: LocationId,
    pub points: Vec<Point>,
    pub actions: Vec<Action>,
}

impl LabeledTrajectory {
    pub fn new(points: Vec<Point>, home: LocationId) -> Self {
        let actions = label_actions(&points, home);
        Self { home, points, actions }
    }

    pub fn num_pairs(&self) -> usize {
        self.actions.len()
    }

    pub fn state(&self, t: usize) -> Result<State> {
        if t >= self.num_pairs() {
            return Err(Error::IndexOutOfRange { index: t, len: self.num_pairs() });
        }
        State::new(self.points[..=t].to_vec(), self.home)
    }
}

/// Anything that scores every state-action pair of an episode.
pub trait PairScorer {
    fn score_pairs(&self, episode: &LabeledTrajectory) -> Result<Vec<f64>>;
}

/// Outcome of one local training call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalStatus {
    Trained,
    /// The client had no trajectory with at least two points.
    SkippedDegenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTraining {
    pub losses: Vec<f64>,
    pub status: LocalStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalDiscriminator {
    user: UserId,
    params: ParameterSet,
    cfg: NetConfig,
    ctx: FeatureContext,
    encoder: Encoder,
    action_emb: ParamId,
    hidden: Dense,
    head: Dense,
    optimizer: Adam,
}

impl PersonalDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        user: UserId,
        cfg: NetConfig,
        ctx: FeatureContext,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        let mut params = ParameterSet::new();
        let encoder = Encoder::register(&mut params, "disc.enc", &cfg, &ctx, rng)?;
        let action_emb = params
            .add("disc.action_emb", Tensor::gaussian(Action::COUNT, cfg.action_dim, 0.1, rng))?;
        let width = Encoder::width(&cfg) + cfg.action_dim;
        let hidden = Dense::register(&mut params, "disc.hidden", width, cfg.hidden, false, rng)?;
        let head = Dense::register(&mut params, "disc.head", cfg.hidden, 1, true, rng)?;
        let optimizer = Adam::new(&params, AdamConfig::with_learning_rate(learning_rate));
        Ok(Self { user, params, cfg, ctx, encoder, action_emb, hidden, head, optimizer })
    }

    /// Rebuilds a discriminator around saved parameters with a fresh optimizer.
    pub fn from_params(
        user: UserId,
        cfg: NetConfig,
        ctx: FeatureContext,
        learning_rate: f64,
        saved: &ParameterSet,
    ) -> Result<Self> {
        let mut rng = crate::seed::stream(0, crate::seed::Purpose::Init, 0, 0);
        let mut disc = Self::new(user, cfg, ctx, learning_rate, &mut rng)?;
        disc.params.load_from(saved)?;
        Ok(disc)
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Logits `[Q x 1]` for the queries in `batch` paired with `actions`.
    fn logits(&self, g: &mut Graph, batch: &TokenBatch, actions: &[Action]) -> Var {
        let p = &self.params;
        let feats = self.encoder.forward(g, p, batch);
        let table = g.param(p, self.action_emb);
        let ids: Vec<usize> = actions.iter().map(|a| a.index()).collect();
        let act = g.gather_rows(table, &ids);
        let x = g.concat_cols(&[feats, act]);
        let h = self.hidden.apply(g, p, x);
        let h = g.tanh(h);
        self.head.apply(g, p, h)
    }

    pub fn score(&self, state: &State, action: Action) -> Result<f64> {
        let mut batch = TokenBatch::new(self.cfg.window);
        batch.push_state(state, &self.ctx)?;
        let mut g = Graph::new();
        let z = self.logits(&mut g, &batch, &[action]);
        Ok(math::sigmoid(g.scalar(z)))
    }

    fn pair_batch(&self, pairs: &[(&LabeledTrajectory, usize)]) -> Result<(TokenBatch, Vec<Action>)> {
        let mut batch = TokenBatch::new(self.cfg.window);
        let mut actions = Vec::with_capacity(pairs.len());
        for &(traj, t) in pairs {
            batch.push(&traj.points, traj.home, &[t], &self.ctx)?;
            actions.push(traj.actions[t]);
        }
        Ok((batch, actions))
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        pos: &[(&LabeledTrajectory, usize)],
        neg: &[(&LabeledTrajectory, usize)],
    ) -> Result<Var> {
        if pos.is_empty() {
            return Err(Error::Empty("positive pairs"));
        }
        if neg.is_empty() {
            return Err(Error::Empty("negative pairs"));
        }
        let (pb, pa) = self.pair_batch(pos)?;
        let (nb, na) = self.pair_batch(neg)?;
        let zp = self.logits(g, &pb, &pa);
        let zn = self.logits(g, &nb, &na);
        // -ln sigmoid(z) = softplus(-z), -ln(1 - sigmoid(z)) = softplus(z)
        let neg_zp = g.scale(zp, -1.0);
        let lp = g.softplus(neg_zp);
        let lp = g.mean(lp);
        let ln = g.softplus(zn);
        let ln = g.mean(ln);
        Ok(g.add(lp, ln))
    }

    fn pair_loss_graph(
        &self,
        positives: &[(State, Action)],
        negatives: &[(State, Action)],
    ) -> Result<(Graph, Var)> {
        let wrap = |pairs: &[(State, Action)]| -> Vec<LabeledTrajectory> {
            pairs
                .iter()
                .map(|(s, a)| {
                    let mut points = s.history().to_vec();
                    // dummy successor so the pair has one labeled step
                    let last = s.current();
                    points.push(Point { slot: last.slot + 1, loc: last.loc });
                    LabeledTrajectory { home: s.home(), points, actions: alloc::vec![*a] }
                })
                .collect()
        };
        let (p, n) = (wrap(positives), wrap(negatives));
        let pos: Vec<_> = p.iter().map(|t| (t, 0)).collect();
        let neg: Vec<_> = n.iter().map(|t| (t, 0)).collect();
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &pos, &neg)?;
        Ok((g, loss))
    }

    /// Mean of `-ln D` over positives plus mean of `-ln(1 - D)` over negatives.
    pub fn loss(&self, positives: &[(State, Action)], negatives: &[(State, Action)]) -> Result<f64> {
        let (g, loss) = self.pair_loss_graph(positives, negatives)?;
        Ok(g.scalar(loss))
    }

    /// Same loss; also leaves its gradient in the parameter set.
    pub fn loss_with_gradient(
        &mut self,
        positives: &[(State, Action)],
        negatives: &[(State, Action)],
    ) -> Result<f64> {
        let (g, loss) = self.pair_loss_graph(positives, negatives)?;
        g.backward(loss, &mut self.params)?;
        Ok(g.scalar(loss))
    }

    /// `iterations` optimizer steps against fresh minibatches of real and
    /// generated pairs. Reads nothing but `client` and `synthetic`.
    pub fn train_local<R: Rng + ?Sized>(
        &mut self,
        client: &ClientDataset,
        synthetic: &[LabeledTrajectory],
        iterations: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<LocalTraining> {
        if batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        let real: Vec<LabeledTrajectory> = client
            .trajectories()
            .iter()
            .map(|t| LabeledTrajectory::new(t.points().to_vec(), client.home()))
            .collect();
        let real_pool = pair_pool(&real);
        if real_pool.is_empty() {
            return Ok(LocalTraining { losses: Vec::new(), status: LocalStatus::SkippedDegenerate });
        }
        let synth_pool = pair_pool(synthetic);
        if synth_pool.is_empty() {
            return Err(Error::Empty("synthetic pairs"));
        }
        let mut losses = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let pos: Vec<_> = (0..batch).map(|_| real_pool[rng.gen_range(0..real_pool.len())]).collect();
            let neg: Vec<_> =
                (0..batch).map(|_| synth_pool[rng.gen_range(0..synth_pool.len())]).collect();
            let mut g = Graph::new();
            let loss = self.loss_graph(&mut g, &pos, &neg)?;
            g.backward(loss, &mut self.params)?;
            self.optimizer.step(&mut self.params)?;
            losses.push(g.scalar(loss));
        }
        Ok(LocalTraining { losses, status: LocalStatus::Trained })
    }
}

fn pair_pool(trajs: &[LabeledTrajectory]) -> Vec<(&LabeledTrajectory, usize)> {
    trajs.iter().flat_map(|t| (0..t.num_pairs()).map(move |i| (t, i))).collect()
}

impl PairScorer for PersonalDiscriminator {
    fn score_pairs(&self, episode: &LabeledTrajectory) -> Result<Vec<f64>> {
        let n = episode.num_pairs();
        if n == 0 {
            return Ok(Vec::new());
        }
        let queries: Vec<usize> = (0..n).collect();
        let mut batch = TokenBatch::new(self.cfg.window);
        batch.push(&episode.points, episode.home, &queries, &self.ctx)?;
        let mut g = Graph::new();
        let z = self.logits(&mut g, &batch, &episode.actions);
        Ok(g.value(z).values().iter().map(|&z| math::sigmoid(z)).collect())
    }
}

/// The loss evaluated directly on discriminator outputs.
pub fn loss_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Empty("positive pairs"));
    }
    if negatives.is_empty() {
        return Err(Error::Empty("negative pairs"));
    }
    let pos: Vec<f64> = positives.iter().map(|d| -math::ln(*d)).collect();
    let neg: Vec<f64> = negatives.iter().map(|d| -math::ln_1p(-*d)).collect();
    Ok(math::mean(&pos) + math::mean(&neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LocationGrid;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> FeatureContext {
        FeatureContext::new(LocationGrid::new(5, 5, 200.0, (0.0, 0.0)).unwrap(), 48).unwrap()
    }

    fn small() -> NetConfig {
        NetConfig { window: 4, loc_dim: 6, slot_dim: 3, action_dim: 3, model_dim: 8, hidden: 8 }
    }

    fn disc(seed: u64, lr: f64) -> PersonalDiscriminator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PersonalDiscriminator::new(UserId(0), small(), ctx(), lr, &mut rng).unwrap()
    }

    fn traj(locs: &[u32]) -> Trajectory {
        let pts = locs.iter().enumerate().map(|(i, &l)| Point::new(i as u32, l)).collect();
        Trajectory::new(UserId(0), pts).unwrap()
    }

    #[test]
    fn labels_follow_rule_table() {
        let h = LocationId(9);
        let acts = |l: &[u32]| -> Vec<Action> {
            extract_pairs(&traj(l), h).into_iter().map(|(_, a)| a).collect()
        };
        assert_eq!(acts(&[1, 1]), vec![Action::Stay]);
        assert_eq!(acts(&[1, 9]), vec![Action::HomeReturn]);
        assert_eq!(acts(&[1, 2, 1]), vec![Action::Explore, Action::PreferentialReturn]);
        assert!(acts(&[1]).is_empty());
        // home that was also visited before still counts as a home return
        assert_eq!(acts(&[9, 1, 9]), vec![Action::Explore, Action::HomeReturn]);
        let pairs = extract_pairs(&traj(&[1, 2, 1]), h);
        assert_eq!(pairs[1].0.history().len(), 2);
    }

    #[test]
    fn zero_head_scores_one_half() {
        let d = disc(1, 1e-3);
        let s = State::new(vec![Point::new(0, 3), Point::new(1, 4)], LocationId(3)).unwrap();
        for a in Action::ALL {
            assert_eq!(d.score(&s, a).unwrap(), 0.5);
        }
        let l = d.loss(&[(s.clone(), Action::Stay)], &[(s, Action::Explore)]).unwrap();
        assert!((l - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_from_hand_scores() {
        let l = loss_from_scores(&[0.9], &[0.2]).unwrap();
        assert!((l - 0.328504066972).abs() < 1e-9);
        assert!(loss_from_scores(&[1.0 - 1e-12], &[1e-12]).unwrap() < 1e-9);
        assert!(loss_from_scores(&[], &[0.5]).is_err());
        let d = disc(1, 1e-3);
        let s = State::at_home(LocationId(0), 0);
        assert!(d.loss(&[(s, Action::Stay)], &[]).is_err());
    }

    #[test]
    fn sequence_scores_match_single_pairs() {
        let mut d = disc(2, 1e-3);
        let client = ClientDataset::new(UserId(0), vec![traj(&[0, 0, 1, 2, 1, 0, 3])], 48).unwrap();
        let synth = vec![LabeledTrajectory::new(traj(&[5, 6, 7, 7, 8]).into_points(), LocationId(5))];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        d.train_local(&client, &synth, 3, 8, &mut rng).unwrap();
        let ep = LabeledTrajectory::new(traj(&[0, 1, 1, 2, 0, 4, 1]).into_points(), LocationId(0));
        let seq = d.score_pairs(&ep).unwrap();
        for t in 0..ep.num_pairs() {
            let single = d.score(&ep.state(t).unwrap(), ep.actions[t]).unwrap();
            assert!((seq[t] - single).abs() < 1e-12);
            assert!(seq[t] > 0.0 && seq[t] < 1.0);
        }
    }

    #[test]
    fn zero_iterations_and_degenerate_clients() {
        let mut d = disc(4, 1e-3);
        let before = d.params().clone();
        let synth = vec![LabeledTrajectory::new(traj(&[5, 6]).into_points(), LocationId(5))];
        let client = ClientDataset::new(UserId(0), vec![traj(&[1, 2])], 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = d.train_local(&client, &synth, 0, 4, &mut rng).unwrap();
        assert!(r.losses.is_empty());
        assert_eq!(d.params(), &before);
        let lonely = ClientDataset::new(UserId(0), vec![traj(&[1]), traj(&[2])], 48).unwrap();
        let r = d.train_local(&lonely, &synth, 5, 4, &mut rng).unwrap();
        assert_eq!(r.status, LocalStatus::SkippedDegenerate);
        assert_eq!(d.params(), &before);
        assert!(d.train_local(&client, &[], 1, 4, &mut rng).is_err());
    }

    #[test]
    fn separable_toy_is_learned() {
        let mut d = disc(5, 1e-2);
        // real: always stays home; generated: a new cell every step
        let client = ClientDataset::new(UserId(0), vec![traj(&[0; 12])], 48).unwrap();
        let moving: Vec<u32> = (0..12).collect();
        let synth = vec![LabeledTrajectory::new(traj(&moving).into_points(), LocationId(0))];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = d.train_local(&client, &synth, 200, 16, &mut rng).unwrap();
        assert!(*r.losses.last().unwrap() < 0.1, "{:?}", r.losses.last());

        let mut again = disc(5, 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r2 = again.train_local(&client, &synth, 200, 16, &mut rng).unwrap();
        assert_eq!(r.losses, r2.losses);
    }
}
