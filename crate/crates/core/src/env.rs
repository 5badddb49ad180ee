//! EPR state-transition kernel: where an agent goes next given an action.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{LocationGrid, LocationId};
use crate::math;
use crate::trajectory::{Action, State};

pub const DEFAULT_ALPHA: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionConfig {
    alpha: f64,
    grid: LocationGrid,
}

impl TransitionConfig {
    pub fn new(alpha: f64, grid: LocationGrid) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", "exploration exponent must be positive"));
        }
        Ok(Self { alpha, grid })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &LocationGrid {
        &self.grid
    }
}

/// Distribution over the next location. `fallback` is set when the requested
/// action had no eligible target and the agent stays instead.
#[derive(Debug, Clone, PartialEq)]
pub struct NextLocationDistribution {
    pub support: Vec<(LocationId, f64)>,
    pub fallback: bool,
}

impl NextLocationDistribution {
    fn point_mass(loc: LocationId, fallback: bool) -> Self {
        Self { support: alloc::vec![(loc, 1.0)], fallback }
    }

    pub fn probability(&self, loc: LocationId) -> f64 {
        self.support.iter().filter(|(l, _)| *l == loc).map(|(_, p)| p).sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LocationId {
        if self.support.len() == 1 {
            return self.support[0].0;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(loc, p) in &self.support {
            acc += p;
            if u < acc {
                return loc;
            }
        }
        self.support[self.support.len() - 1].0
    }
}

/// Unvisited cells (home counts as visited) ordered by distance from `from`,
/// ties by id. Position `i` has rank `i + 1`.
pub fn exploration_ranking(state: &State, grid: &LocationGrid) -> Vec<LocationId> {
    let from = state.current().loc;
    let mut cells: Vec<(u64, LocationId)> = (0..grid.num_cells())
        .map(LocationId)
        .filter(|&l| !state.is_visited(l))
        .map(|l| (grid.cell_offset_sq(from, l), l))
        .collect();
    cells.sort_unstable();
    cells.into_iter().map(|(_, l)| l).collect()
}

pub fn transition_distribution(
    state: &State,
    action: Action,
    cfg: &TransitionConfig,
) -> NextLocationDistribution {
    let current = state.current().loc;
    match action {
        Action::Stay => NextLocationDistribution::point_mass(current, false),
        Action::HomeReturn => NextLocationDistribution::point_mass(state.home(), false),
        Action::PreferentialReturn => {
            let eligible: Vec<(LocationId, u32)> = state
                .visit_counts()
                .iter()
                .filter(|(&l, _)| l != state.home() && l != current)
                .map(|(&l, &c)| (l, c))
                .collect();
            if eligible.is_empty() {
                return NextLocationDistribution::point_mass(current, true);
            }
            let total: u32 = eligible.iter().map(|(_, c)| c).sum();
            let support =
                eligible.into_iter().map(|(l, c)| (l, c as f64 / total as f64)).collect();
            NextLocationDistribution { support, fallback: false }
        }
        Action::Explore => {
            let ranked = exploration_ranking(state, &cfg.grid);
            if ranked.is_empty() {
                return NextLocationDistribution::point_mass(current, true);
            }
            let weights: Vec<f64> =
                (1..=ranked.len()).map(|r| math::powf(r as f64, -cfg.alpha)).collect();
            let total: f64 = weights.iter().sum();
            let support = ranked.into_iter().zip(weights).map(|(l, w)| (l, w / total)).collect();
            NextLocationDistribution { support, fallback: false }
        }
    }
}

/// Advances `state` in place by one slot; returns whether the action fell
/// back to staying.
pub fn step<R: Rng + ?Sized>(
    state: &mut State,
    action: Action,
    cfg: &TransitionConfig,
    rng: &mut R,
) -> bool {
    let dist = transition_distribution(state, action, cfg);
    let loc = dist.sample(rng);
    state.advance(loc);
    dist.fallback
}

/// The successor state after taking `action`, drawn from the EPR kernel.
pub fn sample_next<R: Rng + ?Sized>(
    state: &State,
    action: Action,
    cfg: &TransitionConfig,
    rng: &mut R,
) -> State {
    let mut next = state.clone();
    step(&mut next, action, cfg, rng);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Point;
    use alloc::vec;
    use rand::SeedableRng;

    fn cfg(w: u32, h: u32, alpha: f64) -> TransitionConfig {
        TransitionConfig::new(alpha, LocationGrid::new(w, h, 100.0, (0.0, 0.0)).unwrap()).unwrap()
    }

    #[test]
    fn stay_and_home_are_point_masses() {
        let c = cfg(5, 5, 0.55);
        let s = State::new(vec![Point::new(0, 3), Point::new(1, 12)], LocationId(3)).unwrap();
        let d = transition_distribution(&s, Action::Stay, &c);
        assert_eq!(d.support, vec![(LocationId(12), 1.0)]);
        let d = transition_distribution(&s, Action::HomeReturn, &c);
        assert_eq!(d.support, vec![(LocationId(3), 1.0)]);
    }

    #[test]
    fn preferential_return_normalizes_counts() {
        let c = cfg(5, 5, 0.55);
        // A=1 three times, B=2 once, home H=0, current C=4
        let pts = [0, 1, 1, 2, 1, 4].iter().enumerate().map(|(i, &l)| Point::new(i as u32, l));
        let s = State::new(pts.collect(), LocationId(0)).unwrap();
        let d = transition_distribution(&s, Action::PreferentialReturn, &c);
        assert_eq!(d.support, vec![(LocationId(1), 0.75), (LocationId(2), 0.25)]);
        assert!(!d.fallback);
    }

    #[test]
    fn explore_ranks_three_candidates() {
        // 4x1 strip, agent at home 0: cells 1, 2, 3 are ranks 1, 2, 3
        let c = cfg(4, 1, 1.0);
        let s = State::at_home(LocationId(0), 0);
        let d = transition_distribution(&s, Action::Explore, &c);
        let expect = [(1, 6.0 / 11.0), (2, 3.0 / 11.0), (3, 2.0 / 11.0)];
        assert_eq!(d.support.len(), 3);
        for ((l, p), (el, ep)) in d.support.iter().zip(expect) {
            assert_eq!(l.0, el);
            assert!((p - ep).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_sets_fall_back_to_stay() {
        let c = cfg(1, 2, 0.55);
        let s = State::at_home(LocationId(0), 0);
        let d = transition_distribution(&s, Action::PreferentialReturn, &c);
        assert!(d.fallback);
        assert_eq!(d.support, vec![(LocationId(0), 1.0)]);
        let full = State::new(vec![Point::new(0, 0), Point::new(1, 1)], LocationId(0)).unwrap();
        let d = transition_distribution(&full, Action::Explore, &c);
        assert!(d.fallback);
        assert_eq!(d.support, vec![(LocationId(1), 1.0)]);
    }

    #[test]
    fn stay_keeps_location_and_advances_slot() {
        let c = cfg(5, 5, 0.55);
        let s = State::at_home(LocationId(7), 10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = sample_next(&s, Action::Stay, &c, &mut rng);
        assert_eq!(n.current(), Point::new(11, 7));
        assert_eq!(n.history().len(), 2);
        for a in Action::ALL {
            assert_eq!(sample_next(&s, a, &c, &mut rng).history().len(), 2);
        }
    }

    #[test]
    fn alpha_must_be_positive() {
        let g = LocationGrid::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        assert!(TransitionConfig::new(0.0, g).is_err());
        assert!(TransitionConfig::new(-1.0, g).is_err());
    }
}
