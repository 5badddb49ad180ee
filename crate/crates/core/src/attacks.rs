//! Privacy-risk harness: white-box membership inference from per-pair
//! rewards, and the uniqueness (overlap) test against generated data.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::seq::SliceRandom;

use crate::aggregation::{compensated_reward, DPBudget};
use crate::discriminator::{LabeledTrajectory, PairScorer};
use crate::error::{Error, Result};
use crate::math;
use crate::neuro::{Adam, AdamConfig, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::seed::{self, Purpose};
use crate::trajectory::Trajectory;

pub const NUM_FEATURES: usize = 9;
pub const NUM_FOLDS: usize = 5;
pub const FEATURE_DESCRIPTION: &str =
    "per-pair reward mean, std, min, max, q10, q25, q50, q75, q90; logistic regression";

/// Fraction of `a`'s points matched by `b` at the same slot and location.
pub fn overlap_rate(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let (pa, pb) = (a.points(), b.points());
    let (mut i, mut j, mut hits) = (0, 0, 0usize);
    while i < pa.len() && j < pb.len() {
        match pa[i].slot.cmp(&pb[j].slot) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                hits += (pa[i].loc == pb[j].loc) as usize;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(hits as f64 / pa.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessResult {
    /// Per real trajectory: index of the best synthetic match and its overlap.
    pub best: Vec<(usize, f64)>,
    pub mean: f64,
    pub max: f64,
}

pub fn uniqueness_test(real: &[Trajectory], synthetic: &[Trajectory]) -> Result<UniquenessResult> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    let mut best = Vec::with_capacity(real.len());
    for r in real {
        let mut top = (0, -1.0);
        for (i, s) in synthetic.iter().enumerate() {
            let o = overlap_rate(r, s)?;
            if o > top.1 {
                top = (i, o);
            }
        }
        best.push(top);
    }
    let rates: Vec<f64> = best.iter().map(|b| b.1).collect();
    let max = rates.iter().copied().fold(0.0, f64::max);
    Ok(UniquenessResult { mean: math::mean(&rates), max, best })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of a reward sequence: mean, population std, min, max and the
/// 0.1, 0.25, 0.5, 0.75, 0.9 quantiles.
pub fn summarize(rewards: &[f64]) -> Result<[f64; NUM_FEATURES]> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward sequence"));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = [0.0; NUM_FEATURES];
    out[0] = math::mean(rewards);
    out[1] = math::sqrt(math::population_variance(rewards));
    out[2] = sorted[0];
    out[3] = sorted[sorted.len() - 1];
    for (o, q) in out[4..].iter_mut().zip([0.1, 0.25, 0.5, 0.75, 0.9]) {
        *o = quantile(&sorted, q);
    }
    Ok(out)
}

pub fn mia_features(trajectory: &LabeledTrajectory, oracle: &dyn PairScorer) -> Result<[f64; NUM_FEATURES]> {
    if trajectory.num_pairs() == 0 {
        return Err(Error::param("trajectory", "needs at least two points"));
    }
    summarize(&oracle.score_pairs(trajectory)?)
}

/// The released reward of the federation: noised compensated aggregate of
/// every client's score, with fresh noise per query.
pub struct PrivateRewardOracle<'a> {
    scorers: Vec<&'a dyn PairScorer>,
    beta: f64,
    budget: DPBudget,
    rng: RefCell<seed::Rng>,
}

impl<'a> PrivateRewardOracle<'a> {
    pub fn new(scorers: Vec<&'a dyn PairScorer>, beta: f64, budget: DPBudget, seed: u64) -> Result<Self> {
        let budget = budget.with_users(scorers.len())?;
        Ok(Self { scorers, beta, budget, rng: RefCell::new(seed::stream(seed, Purpose::Noise, u64::MAX, 0)) })
    }
}

impl PairScorer for PrivateRewardOracle<'_> {
    fn score_pairs(&self, episode: &LabeledTrajectory) -> Result<Vec<f64>> {
        let per_user: Vec<Vec<f64>> =
            self.scorers.iter().map(|s| s.score_pairs(episode)).collect::<Result<_>>()?;
        let mut rng = self.rng.borrow_mut();
        (0..episode.num_pairs())
            .map(|t| {
                let column: Vec<f64> = per_user.iter().map(|s| s[t]).collect();
                compensated_reward(&column, self.beta, &self.budget, &mut *rng)
            })
            .collect()
    }
}

/// L2-regularized logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    params: ParameterSet,
    w: ParamId,
    b: ParamId,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub l2: f64,
}

impl LogisticRegression {
    pub fn new(dim: usize, l2: f64) -> Result<Self> {
        let mut params = ParameterSet::new();
        let w = params.add("lr.w", Tensor::zeros(vec![dim, 1]))?;
        let b = params.add("lr.b", Tensor::zeros(vec![1, 1]))?;
        Ok(Self { params, w, b, mean: vec![0.0; dim], scale: vec![1.0; dim], l2 })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn design(&self, x: &[Vec<f64>]) -> Result<Tensor> {
        let d = self.mean.len();
        let mut v = Vec::with_capacity(x.len() * d);
        for row in x {
            if row.len() != d {
                return Err(Error::LengthMismatch { expected: d, got: row.len() });
            }
            v.extend(row.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s));
        }
        Tensor::new(vec![x.len(), d], v)
    }

    /// Mean logistic loss plus `l2/2 * |w|^2`.
    pub fn loss_graph(&self, g: &mut Graph, x: &[Vec<f64>], y: &[bool]) -> Result<Var> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
        }
        let xv = g.input(self.design(x)?);
        let w = g.param(&self.params, self.w);
        let b = g.param(&self.params, self.b);
        let xw = g.matmul(xv, w);
        let z = g.add_bias(xw, b);
        // softplus((1 - 2y) z) is -ln sigmoid(z) for y = 1 and -ln(1 - sigmoid(z)) for y = 0
        let signs = g.column(y.iter().map(|&t| if t { -1.0 } else { 1.0 }).collect());
        let sz = g.mul(z, signs);
        let l = g.softplus(sz);
        let data = g.mean(l);
        let ww = g.mul(w, w);
        let reg = g.sum(ww);
        let reg = g.scale(reg, 0.5 * self.l2);
        Ok(g.add(data, reg))
    }

    pub fn fit(&mut self, x: &[Vec<f64>], y: &[bool], iterations: usize, lr: f64) -> Result<()> {
        if x.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let d = self.mean.len();
        let n = x.len() as f64;
        for j in 0..d {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            self.mean[j] = col.iter().sum::<f64>() / n;
            let sd = math::sqrt(math::population_variance(&col));
            self.scale[j] = if sd > 1e-12 { sd } else { 1.0 };
        }
        let mut opt = Adam::new(&self.params, AdamConfig::with_learning_rate(lr));
        for _ in 0..iterations {
            let mut g = Graph::new();
            let loss = self.loss_graph(&mut g, x, y)?;
            g.backward(loss, &mut self.params)?;
            opt.step(&mut self.params)?;
        }
        Ok(())
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<bool>> {
        let xt = self.design(x)?;
        let w = self.params.value(self.w).values();
        let b = self.params.value(self.b).values()[0];
        Ok((0..x.len())
            .map(|i| xt.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b > 0.0)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MIAResult {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub features: &'static str,
}

/// Stratified 5-fold cross-validated accuracy of a logistic-regression
/// attacker; folds are drawn from `seed`.
pub fn cross_validate(features: &[Vec<f64>], labels: &[bool], seed: u64) -> Result<MIAResult> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: features.len(), got: labels.len() });
    }
    let mut rng = seed::stream(seed, Purpose::Folds, 0, 0);
    let mut fold = vec![0usize; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < NUM_FOLDS {
            return Err(Error::param("classes", "each class needs at least one sample per fold"));
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold[i] = k % NUM_FOLDS;
        }
    }
    let dim = features[0].len();
    let mut accs = Vec::with_capacity(NUM_FOLDS);
    for f in 0..NUM_FOLDS {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..labels.len() {
            if fold[i] == f {
                xte.push(features[i].clone());
                yte.push(labels[i]);
            } else {
                xtr.push(features[i].clone());
                ytr.push(labels[i]);
            }
        }
        let mut model = LogisticRegression::new(dim, 1e-3)?;
        model.fit(&xtr, &ytr, 300, 0.05)?;
        let pred = model.predict(&xte)?;
        let correct = pred.iter().zip(&yte).filter(|(p, y)| p == y).count();
        accs.push(correct as f64 / yte.len() as f64);
    }
    Ok(MIAResult { mean_accuracy: math::mean(&accs), fold_accuracies: accs, features: FEATURE_DESCRIPTION })
}

/// Members (used in training) against an equal number of non-members.
pub fn membership_inference(
    members: &[LabeledTrajectory],
    non_members: &[LabeledTrajectory],
    oracle: &dyn PairScorer,
    seed: u64,
) -> Result<MIAResult> {
    if members.len() != non_members.len() {
        return Err(Error::LengthMismatch { expected: members.len(), got: non_members.len() });
    }
    if members.len() < 10 {
        return Err(Error::param("members", "need at least 10 per class"));
    }
    let mut x = Vec::with_capacity(2 * members.len());
    let mut y = Vec::with_capacity(2 * members.len());
    for (set, label) in [(members, true), (non_members, false)] {
        for t in set {
            x.push(mia_features(t, oracle)?.to_vec());
            y.push(label);
        }
    }
    cross_validate(&x, &y, seed)
}
