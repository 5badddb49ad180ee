//! Ground-truth data from a fixed EPR behavior policy, and synthetic data
//! sampled from a trained policy.

use alloc::vec::Vec;

use rand::Rng;

use crate::env::{step, TransitionConfig};
use crate::error::{Error, Result};
use crate::grid::LocationId;
use crate::policy::{sample_trajectory, PolicyNet};
use crate::trajectory::{Action, ClientDataset, State, Trajectory, UserId};

/// Fixed action probabilities, in [`Action::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorPolicy {
    pub probs: [f64; 4],
}

impl Default for BehaviorPolicy {
    fn default() -> Self {
        Self { probs: [0.6, 0.1, 0.2, 0.1] }
    }
}

impl BehaviorPolicy {
    pub fn new(probs: [f64; 4]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::param("behavior", "probabilities must be non-negative"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("behavior", "probabilities must sum to 1"));
        }
        Ok(Self { probs })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in Action::ALL.iter().zip(self.probs) {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        Action::Stay
    }
}

/// One trajectory per day for each user, each day starting at home at slot
/// `day * slots_per_day` and covering the whole day.
pub fn synth_ground_truth<R: Rng + ?Sized>(
    num_users: usize,
    days: usize,
    env: &TransitionConfig,
    behavior: &BehaviorPolicy,
    slots_per_day: u32,
    first_user: u32,
    rng: &mut R,
) -> Result<Vec<ClientDataset>> {
    if num_users == 0 || days == 0 || slots_per_day == 0 {
        return Err(Error::param("synth", "users, days and slots per day must be at least 1"));
    }
    let cells = env.grid().num_cells();
    let mut out = Vec::with_capacity(num_users);
    for u in 0..num_users {
        let user = UserId(first_user + u as u32);
        let home = LocationId(rng.gen_range(0..cells));
        let mut trajs = Vec::with_capacity(days);
        for d in 0..days {
            let mut state = State::at_home(home, d as u32 * slots_per_day);
            for _ in 1..slots_per_day {
                step(&mut state, behavior.sample(rng), env, rng);
            }
            trajs.push(Trajectory::new(user, state.into_history())?);
        }
        out.push(ClientDataset::new(user, trajs, slots_per_day)?);
    }
    Ok(out)
}

/// Synthetic users from the policy: a uniformly random home per user, one
/// episode of `episode_len` steps per day.
#[allow(clippy::too_many_arguments)]
pub fn generate_from_policy<R: Rng + ?Sized>(
    policy: &PolicyNet,
    env: &TransitionConfig,
    num_users: usize,
    days: usize,
    episode_len: usize,
    slots_per_day: u32,
    first_user: u32,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let cells = env.grid().num_cells();
    let mut out = Vec::with_capacity(num_users * days);
    for u in 0..num_users {
        let user = UserId(first_user + u as u32);
        let home = LocationId(rng.gen_range(0..cells));
        for d in 0..days {
            let start = State::at_home(home, d as u32 * slots_per_day);
            out.push(sample_trajectory(policy, env, start, episode_len, user, rng)?.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LocationGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> TransitionConfig {
        TransitionConfig::new(0.55, LocationGrid::new(6, 6, 100.0, (0.0, 0.0)).unwrap()).unwrap()
    }

    #[test]
    fn ground_truth_shape_and_determinism() {
        let b = BehaviorPolicy::default();
        let gen = |s| synth_ground_truth(3, 2, &env(), &b, 48, 10, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let a = gen(1);
        assert_eq!(a, gen(1));
        assert_ne!(a, gen(2));
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].user(), UserId(10));
        for c in &a {
            assert_eq!(c.trajectories().len(), 2);
            let t = &c.trajectories()[1];
            assert_eq!(t.len(), 48);
            assert_eq!(t.points()[0].slot, 48);
            assert_eq!(t.points()[47].slot, 95);
        }
    }

    #[test]
    fn behavior_validation() {
        assert!(BehaviorPolicy::new([0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(BehaviorPolicy::new([0.5, 0.6, 0.0, -0.1]).is_err());
        assert!(BehaviorPolicy::new([0.5, 0.1, 0.0, 0.0]).is_err());
        let stay = BehaviorPolicy::new([1.0, 0.0, 0.0, 0.0]).unwrap();
        let d = synth_ground_truth(1, 1, &env(), &stay, 48, 0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t = &d[0].trajectories()[0];
        assert!(t.points().iter().all(|p| p.loc == d[0].home()));
    }
}
