//! Trajectories, MDP states and the four EPR actions.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{LocationGrid, LocationId};

/// Time-slot length used unless configured otherwise (30 minutes).
pub const DEFAULT_SLOTS_PER_DAY: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

/// One visit: a time-slot index and the visited cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub slot: u32,
    pub loc: LocationId,
}

impl Point {
    pub fn new(slot: u32, loc: u32) -> Self {
        Self { slot, loc: LocationId(loc) }
    }
}

/// Time-ordered visits of one user. Slots are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    user: UserId,
    points: Vec<Point>,
}

impl Trajectory {
    pub fn new(user: UserId, points: Vec<Point>) -> Result<Self> {
        check_monotonic(&points)?;
        Ok(Self { user, points })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Point) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.slot <= last.slot {
                return Err(Error::NonMonotonicSlots { prev: last.slot, next: point.slot });
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn validate(&self, grid: &LocationGrid) -> Result<()> {
        self.points.iter().try_for_each(|p| grid.check(p.loc))
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn with_user(mut self, user: UserId) -> Self {
        self.user = user;
        self
    }
}

fn check_monotonic(points: &[Point]) -> Result<()> {
    for w in points.windows(2) {
        if w[1].slot <= w[0].slot {
            return Err(Error::NonMonotonicSlots { prev: w[0].slot, next: w[1].slot });
        }
    }
    Ok(())
}

/// Visit count of each location among `history`.
pub fn visit_histogram(history: &[Point]) -> BTreeMap<LocationId, u32> {
    let mut counts = BTreeMap::new();
    for p in history {
        *counts.entry(p.loc).or_insert(0) += 1;
    }
    counts
}

/// Whether a time-of-day slot falls in 22:00-06:00.
pub fn is_night_slot(slot: u32, slots_per_day: u32) -> bool {
    let tod = (slot % slots_per_day) as u64;
    let spd = slots_per_day as u64;
    tod * 24 < 6 * spd || tod * 24 >= 22 * spd
}

/// Most visited location during night slots across all trajectories, falling
/// back to the overall most visited location. Ties go to the smallest id.
pub fn infer_home(trajectories: &[Trajectory], slots_per_day: u32) -> Result<LocationId> {
    if slots_per_day == 0 {
        return Err(Error::param("slots_per_day", "must be at least 1"));
    }
    let mut night: BTreeMap<LocationId, u32> = BTreeMap::new();
    let mut all: BTreeMap<LocationId, u32> = BTreeMap::new();
    for p in trajectories.iter().flat_map(|t| t.points()) {
        *all.entry(p.loc).or_insert(0) += 1;
        if is_night_slot(p.slot, slots_per_day) {
            *night.entry(p.loc).or_insert(0) += 1;
        }
    }
    let counts = if night.is_empty() { &all } else { &night };
    most_frequent(counts).ok_or(Error::Empty("no points to infer a home from"))
}

/// Highest count; the map iterates ids ascending so the first maximum wins.
fn most_frequent(counts: &BTreeMap<LocationId, u32>) -> Option<LocationId> {
    let mut best: Option<(LocationId, u32)> = None;
    for (&loc, &c) in counts {
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((loc, c));
        }
    }
    best.map(|(l, _)| l)
}

/// One of the four EPR decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Stay = 0,
    HomeReturn = 1,
    PreferentialReturn = 2,
    Explore = 3,
}

impl Action {
    pub const ALL: [Action; 4] =
        [Action::Stay, Action::HomeReturn, Action::PreferentialReturn, Action::Explore];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL.get(i).copied().ok_or(Error::IndexOutOfRange { index: i, len: 4 })
    }
}

/// Observed history of one agent plus its home.
///
/// `visit_counts` always equals `visit_histogram(history)`; the history is
/// never empty and its last point is the current position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    history: Vec<Point>,
    home: LocationId,
    visit_counts: BTreeMap<LocationId, u32>,
}

impl State {
    pub fn new(history: Vec<Point>, home: LocationId) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::Empty("state history"));
        }
        check_monotonic(&history)?;
        let visit_counts = visit_histogram(&history);
        Ok(Self { history, home, visit_counts })
    }

    /// A fresh state at `home` at the given slot.
    pub fn at_home(home: LocationId, slot: u32) -> Self {
        let history = alloc::vec![Point { slot, loc: home }];
        let visit_counts = visit_histogram(&history);
        Self { history, home, visit_counts }
    }

    pub fn validate(&self, grid: &LocationGrid) -> Result<()> {
        grid.check(self.home)?;
        self.history.iter().try_for_each(|p| grid.check(p.loc))
    }

    pub fn history(&self) -> &[Point] {
        &self.history
    }

    pub fn home(&self) -> LocationId {
        self.home
    }

    pub fn visit_counts(&self) -> &BTreeMap<LocationId, u32> {
        &self.visit_counts
    }

    pub fn current(&self) -> Point {
        // non-empty by construction
        self.history[self.history.len() - 1]
    }

    /// Locations visited so far, counting home as visited.
    pub fn is_visited(&self, loc: LocationId) -> bool {
        loc == self.home || self.visit_counts.contains_key(&loc)
    }

    /// Appends the next visit in place.
    pub fn advance(&mut self, loc: LocationId) {
        let slot = self.current().slot + 1;
        self.history.push(Point { slot, loc });
        *self.visit_counts.entry(loc).or_insert(0) += 1;
    }

    pub fn into_history(self) -> Vec<Point> {
        self.history
    }
}

/// The private data held by one client device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientDataset {
    user: UserId,
    trajectories: Vec<Trajectory>,
    home: LocationId,
}

impl ClientDataset {
    pub fn new(user: UserId, trajectories: Vec<Trajectory>, slots_per_day: u32) -> Result<Self> {
        for t in &trajectories {
            if t.user() != user {
                return Err(Error::ForeignTrajectory { expected: user.0, got: t.user().0 });
            }
        }
        let home = infer_home(&trajectories, slots_per_day)?;
        Ok(Self { user, trajectories, home })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn home(&self) -> LocationId {
        self.home
    }
}
