//! State featurization shared by the policy and the discriminators.
//!
//! A state is represented by its last `window` visits, each a token of
//! (location embedding, time-of-day embedding). Locations are embedded
//! either by cell id or by their cell offset from home; the offset form
//! makes the features independent of where home is. Shorter histories are
//! left-padded with a dedicated padding token. Tokens are projected to the
//! model width, passed through one causal self-attention layer, and the
//! output at the newest token is concatenated with the normalized
//! distance from home.
//!
//! Several states of one trajectory share tokens, so a [`TokenBatch`] lays
//! out whole trajectories once and lets each queried position attend to its
//! own sliding window. The result is identical to featurizing each state on
//! its own.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{LocationGrid, LocationId};
use crate::neuro::{AttentionBlock, Graph, ParamId, ParameterSet, Span, Tensor, Var};
use crate::trajectory::{Point, State};

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub window: usize,
    pub loc_dim: usize,
    pub slot_dim: usize,
    pub action_dim: usize,
    pub model_dim: usize,
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { window: 24, loc_dim: 32, slot_dim: 8, action_dim: 8, model_dim: 48, hidden: 64 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("window", self.window),
            ("loc_dim", self.loc_dim),
            ("slot_dim", self.slot_dim),
            ("action_dim", self.action_dim),
            ("model_dim", self.model_dim),
            ("hidden", self.hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocationEncoding {
    /// One embedding row per cell id.
    Absolute,
    /// One embedding row per (column, row) offset from home.
    HomeRelative,
    /// One embedding row per whole-cell distance ring around home.
    #[default]
    HomeRing,
}

fn ring(dx: usize, dy: usize) -> usize {
    libm::round(libm::sqrt((dx * dx + dy * dy) as f64)) as usize
}

/// Spatial and temporal frame the features are computed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureContext {
    pub grid: LocationGrid,
    pub slots_per_day: u32,
    pub locations: LocationEncoding,
}

impl FeatureContext {
    pub fn new(grid: LocationGrid, slots_per_day: u32) -> Result<Self> {
        Self::with_encoding(grid, slots_per_day, LocationEncoding::default())
    }

    pub fn with_encoding(
        grid: LocationGrid,
        slots_per_day: u32,
        locations: LocationEncoding,
    ) -> Result<Self> {
        if slots_per_day == 0 {
            return Err(Error::param("slots_per_day", "must be at least 1"));
        }
        Ok(Self { grid, slots_per_day, locations })
    }

    /// Number of location tokens, excluding padding.
    fn loc_vocab(&self) -> usize {
        let (w, h) = (self.grid.width() as usize, self.grid.height() as usize);
        match self.locations {
            LocationEncoding::Absolute => w * h,
            LocationEncoding::HomeRelative => (2 * w - 1) * (2 * h - 1),
            LocationEncoding::HomeRing => ring(w - 1, h - 1) + 1,
        }
    }

    fn loc_token(&self, loc: LocationId, home: LocationId) -> usize {
        match self.locations {
            LocationEncoding::Absolute => loc.index(),
            LocationEncoding::HomeRelative => {
                let w = self.grid.width() as usize;
                let h = self.grid.height() as usize;
                let (lc, lr) = (loc.index() % w, loc.index() / w);
                let (hc, hr) = (home.index() % w, home.index() / w);
                (lc + w - 1 - hc) * (2 * h - 1) + (lr + h - 1 - hr)
            }
            LocationEncoding::HomeRing => {
                let w = self.grid.width() as usize;
                let (lc, lr) = (loc.index() % w, loc.index() / w);
                let (hc, hr) = (home.index() % w, home.index() / w);
                ring(lc.abs_diff(hc), lr.abs_diff(hr))
            }
        }
    }

    fn pad_loc(&self) -> usize {
        self.loc_vocab()
    }

    fn pad_slot(&self) -> usize {
        self.slots_per_day as usize
    }

    fn home_distance(&self, loc: LocationId, home: LocationId) -> f64 {
        self.grid.distance_unchecked(loc, home) / self.grid.diagonal()
    }
}

/// Token layout for a batch of featurization queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    window: usize,
    locs: Vec<usize>,
    slots: Vec<usize>,
    spans: Vec<Span>,
    home_dist: Vec<f64>,
}

impl TokenBatch {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            locs: Vec::new(),
            slots: Vec::new(),
            spans: Vec::new(),
            home_dist: Vec::new(),
        }
    }

    pub fn num_queries(&self) -> usize {
        self.spans.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.locs.len()
    }

    /// Adds one query per index in `queries`: the state whose history is
    /// `points[..=t]`. Locations must be valid for the context's grid.
    pub fn push(
        &mut self,
        points: &[Point],
        home: LocationId,
        queries: &[usize],
        ctx: &FeatureContext,
    ) -> Result<()> {
        let (Some(&min_q), Some(&max_q)) = (queries.iter().min(), queries.iter().max()) else {
            return Ok(());
        };
        if max_q >= points.len() {
            return Err(Error::IndexOutOfRange { index: max_q, len: points.len() });
        }
        ctx.grid.check(home)?;
        let w = self.window;
        let start = (min_q + 1).saturating_sub(w);
        let pads = w - 1 - (min_q - start);
        let base = self.locs.len();
        for _ in 0..pads {
            self.locs.push(ctx.pad_loc());
            self.slots.push(ctx.pad_slot());
        }
        for p in &points[start..=max_q] {
            ctx.grid.check(p.loc)?;
            self.locs.push(ctx.loc_token(p.loc, home));
            self.slots.push((p.slot % ctx.slots_per_day) as usize);
        }
        for &t in queries {
            let row = base + pads + (t - start);
            self.spans.push(Span { row, start: row + 1 - w, end: row + 1 });
            self.home_dist.push(ctx.home_distance(points[t].loc, home));
        }
        Ok(())
    }

    pub fn push_state(&mut self, state: &State, ctx: &FeatureContext) -> Result<()> {
        let h = state.history();
        let from = h.len().saturating_sub(self.window);
        self.push(&h[from..], state.home(), &[h.len() - 1 - from], ctx)
    }
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = if zero_init {
            Tensor::zeros(alloc::vec![inputs, outputs])
        } else {
            Tensor::glorot(inputs, outputs, rng)
        };
        Ok(Self {
            w: params.add(format!("{name}.w"), w)?,
            b: params.add(format!("{name}.b"), Tensor::zeros(alloc::vec![1, outputs]))?,
        })
    }

    pub fn apply(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Var {
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        let xw = g.matmul(x, w);
        g.add_bias(xw, b)
    }
}

/// Token embeddings, input projection and the attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    loc_emb: ParamId,
    slot_emb: ParamId,
    input: Dense,
    attention: AttentionBlock,
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        cfg: &NetConfig,
        ctx: &FeatureContext,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let locs = ctx.pad_loc() + 1;
        let slots = ctx.pad_slot() + 1;
        let loc_emb = params.add(
            format!("{prefix}.loc_emb"),
            Tensor::gaussian(locs, cfg.loc_dim, 0.1, rng),
        )?;
        let slot_emb = params.add(
            format!("{prefix}.slot_emb"),
            Tensor::gaussian(slots, cfg.slot_dim, 0.1, rng),
        )?;
        let input = Dense::register(
            params,
            &format!("{prefix}.input"),
            cfg.loc_dim + cfg.slot_dim,
            cfg.model_dim,
            false,
            rng,
        )?;
        let attention =
            AttentionBlock::register(params, &format!("{prefix}.attn"), cfg.model_dim, rng)?;
        Ok(Self { loc_emb, slot_emb, input, attention })
    }

    /// Output width of [`forward`](Self::forward).
    pub fn width(cfg: &NetConfig) -> usize {
        cfg.model_dim + 1
    }

    /// One feature row per query of `batch`.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, batch: &TokenBatch) -> Var {
        let loc_table = g.param(params, self.loc_emb);
        let slot_table = g.param(params, self.slot_emb);
        let locs = g.gather_rows(loc_table, &batch.locs);
        let slots = g.gather_rows(slot_table, &batch.slots);
        let tokens = g.concat_cols(&[locs, slots]);
        let x = self.input.apply(g, params, tokens);
        let attended = self.attention.apply(g, params, x, &batch.spans);
        let home = g.column(batch.home_dist.clone());
        g.concat_cols(&[attended, home])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::State;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> FeatureContext {
        let grid = LocationGrid::new(4, 4, 100.0, (0.0, 0.0)).unwrap();
        FeatureContext::with_encoding(grid, 48, LocationEncoding::Absolute).unwrap()
    }

    #[test]
    fn relative_tokens_ignore_where_home_is() {
        let grid = LocationGrid::new(4, 4, 100.0, (0.0, 0.0)).unwrap();
        let c = FeatureContext::with_encoding(grid, 48, LocationEncoding::HomeRelative).unwrap();
        // 7x7 offsets; home itself is the center token
        assert_eq!(c.pad_loc(), 49);
        assert_eq!(c.loc_token(LocationId(0), LocationId(0)), 24);
        assert_eq!(c.loc_token(LocationId(15), LocationId(15)), 24);
        // one column east of home, wherever home is
        assert_eq!(c.loc_token(LocationId(1), LocationId(0)), c.loc_token(LocationId(11), LocationId(10)));
        assert_eq!(c.loc_token(LocationId(3), LocationId(12)), 6 * 7);
        assert_eq!(c.loc_token(LocationId(12), LocationId(3)), 6);
    }

    #[test]
    fn ring_tokens_count_rounded_cell_distance() {
        let grid = LocationGrid::new(4, 4, 100.0, (0.0, 0.0)).unwrap();
        let c = FeatureContext::new(grid, 48).unwrap();
        assert_eq!(c.locations, LocationEncoding::HomeRing);
        // rings 0..=round(sqrt(18)) = 0..=4
        assert_eq!(c.pad_loc(), 5);
        assert_eq!(c.loc_token(LocationId(5), LocationId(5)), 0);
        assert_eq!(c.loc_token(LocationId(6), LocationId(5)), 1);
        assert_eq!(c.loc_token(LocationId(4), LocationId(5)), 1);
        assert_eq!(c.loc_token(LocationId(10), LocationId(5)), 1);
        assert_eq!(c.loc_token(LocationId(15), LocationId(0)), 4);
    }

    fn points(n: u32) -> Vec<Point> {
        (0..n).map(|i| Point::new(i, (i * 7) % 16)).collect()
    }

    #[test]
    fn short_histories_are_left_padded() {
        let c = ctx();
        let mut b = TokenBatch::new(4);
        b.push(&points(2), LocationId(0), &[1], &c).unwrap();
        assert_eq!(b.locs, vec![16, 16, 0, 7]);
        assert_eq!(b.slots, vec![48, 48, 0, 1]);
        assert_eq!(b.spans, vec![Span { row: 3, start: 0, end: 4 }]);
    }

    #[test]
    fn long_histories_keep_the_last_window() {
        let c = ctx();
        let s = State::new(points(10), LocationId(0)).unwrap();
        let mut b = TokenBatch::new(3);
        b.push_state(&s, &c).unwrap();
        assert_eq!(b.locs, vec![(7 * 7) % 16, (8 * 7) % 16, (9 * 7) % 16]);
        assert_eq!(b.num_queries(), 1);
    }

    #[test]
    fn sequence_layout_matches_per_state_layout() {
        let c = ctx();
        let cfg = NetConfig { window: 3, loc_dim: 4, slot_dim: 2, model_dim: 5, ..NetConfig::default() };
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = Encoder::register(&mut params, "enc", &cfg, &c, &mut rng).unwrap();
        let pts = points(7);
        let home = LocationId(5);

        let mut seq = TokenBatch::new(cfg.window);
        let queries: Vec<usize> = (0..7).collect();
        seq.push(&pts, home, &queries, &c).unwrap();
        let mut g = Graph::new();
        let out = enc.forward(&mut g, &params, &seq);
        let joint = g.value(out).clone();

        for t in 0..7 {
            let s = State::new(pts[..=t].to_vec(), home).unwrap();
            let mut one = TokenBatch::new(cfg.window);
            one.push_state(&s, &c).unwrap();
            let mut g = Graph::new();
            let out = enc.forward(&mut g, &params, &one);
            for (a, b) in g.value(out).row(0).iter().zip(joint.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_locations_are_rejected() {
        let c = ctx();
        let mut b = TokenBatch::new(2);
        assert!(b.push(&[Point::new(0, 99)], LocationId(0), &[0], &c).is_err());
        assert!(b.push(&points(2), LocationId(0), &[5], &c).is_err());
    }
}
