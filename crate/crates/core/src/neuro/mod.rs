//! A small reverse-mode autodiff toolkit: enough for embeddings, one causal
//! self-attention layer, tanh MLPs and the losses used by the policy,
//! discriminators and the membership-inference attacker.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Span, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParameterSet};
pub use tensor::Tensor;

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rows of `table` selected by `ids`.
pub fn embed(ids: &[usize], table: &Tensor) -> Result<Tensor> {
    let (vocab, dim) = table.matrix_dims()?;
    let mut values = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= vocab {
            return Err(Error::IndexOutOfRange { index: id, len: vocab });
        }
        values.extend_from_slice(&table.values()[id * dim..(id + 1) * dim]);
    }
    Tensor::new(alloc::vec![ids.len(), dim], values)
}

pub use crate::math::softmax;

/// Query/key/value projections of a single-head attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionBlock {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl AttentionBlock {
    pub fn register<R: rand::Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        Ok(Self {
            w_q: params.add(name("w_q"), Tensor::glorot(dim, dim, rng))?,
            w_k: params.add(name("w_k"), Tensor::glorot(dim, dim, rng))?,
            w_v: params.add(name("w_v"), Tensor::glorot(dim, dim, rng))?,
        })
    }

    /// Residual attention for the rows named in `spans`: each output row is
    /// `x[row] + sum_j w_j V(x_j)` with `w` a softmax over the span.
    pub fn apply(&self, g: &mut Graph, params: &ParameterSet, x: Var, spans: &[Span]) -> Var {
        self.apply_traced(g, params, x, spans).0
    }

    /// Like [`apply`](Self::apply), also returning the attention node.
    pub fn apply_traced(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: Var,
        spans: &[Span],
    ) -> (Var, Var) {
        let rows: Vec<usize> = spans.iter().map(|s| s.row).collect();
        let x_q = g.select_rows(x, &rows);
        let w_q = g.param(params, self.w_q);
        let w_k = g.param(params, self.w_k);
        let w_v = g.param(params, self.w_v);
        let q = g.matmul(x_q, w_q);
        let k = g.matmul(x, w_k);
        let v = g.matmul(x, w_v);
        let attended = g.attention(q, k, v, spans);
        (g.add(x_q, attended), attended)
    }
}

/// Causal self-attention over one sequence: position `i` attends to all
/// positions `<= i`. Returns the residual output and the attention weights
/// (row `i` holds `i + 1` weights).
pub fn self_attention(
    x: &Tensor,
    params: &ParameterSet,
    block: &AttentionBlock,
) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let (len, _) = x.matrix_dims()?;
    if len == 0 {
        return Err(Error::Empty("attention input"));
    }
    let spans: Vec<Span> = (0..len).map(|i| Span { row: i, start: 0, end: i + 1 }).collect();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (out, attended) = block.apply_traced(&mut g, params, xv, &spans);
    let weights = g.attention_weights(attended).unwrap_or_default();
    Ok((g.value(out).clone(), weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embed_examples() {
        let out = embed(&[0], &Tensor::identity(3)).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0, 0.0]);
        let out = embed(&[2, 2], &Tensor::identity(3)).unwrap();
        assert_eq!(out.row(0), out.row(1));
        let table = Tensor::new(vec![2, 1], vec![4.0, 9.0]).unwrap();
        assert_eq!(embed(&[1, 0], &table).unwrap().values(), &[9.0, 4.0]);
        assert!(embed(&[3], &Tensor::identity(3)).is_err());
    }

    fn block(dim: usize, seed: u64) -> (ParameterSet, AttentionBlock) {
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = AttentionBlock::register(&mut params, "attn", dim, &mut rng).unwrap();
        (params, b)
    }

    #[test]
    fn single_position_attends_to_itself() {
        let (params, b) = block(4, 1);
        let x = Tensor::new(vec![1, 4], vec![0.1, -0.2, 0.3, 0.5]).unwrap();
        let (_, w) = self_attention(&x, &params, &b).unwrap();
        assert_eq!(w, vec![vec![1.0]]);
    }

    #[test]
    fn attention_rows_are_stochastic_and_causal() {
        let (params, b) = block(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::gaussian(6, 5, 1.0, &mut rng);
        let (out, w) = self_attention(&x, &params, &b).unwrap();
        assert_eq!(out.shape(), &[6, 5]);
        for (i, row) in w.iter().enumerate() {
            assert_eq!(row.len(), i + 1);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_weights() {
        let (mut params, b) = block(3, 4);
        params.set("attn.w_q", Tensor::zeros(vec![3, 3])).unwrap();
        params.set("attn.w_k", Tensor::zeros(vec![3, 3])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::gaussian(4, 3, 1.0, &mut rng);
        let (out, w) = self_attention(&x, &params, &b).unwrap();
        for (i, row) in w.iter().enumerate() {
            for p in row {
                assert!((p - 1.0 / (i + 1) as f64).abs() < 1e-15);
            }
        }
        // residual + mean of V over the causal prefix
        let wv = params.value(b.w_v);
        for i in 0..4 {
            for c in 0..3 {
                let mut avg = 0.0;
                for j in 0..=i {
                    avg += (0..3).map(|r| x.get(j, r) * wv.get(r, c)).sum::<f64>();
                }
                avg /= (i + 1) as f64;
                assert!((out.get(i, c) - (x.get(i, c) + avg)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut params = ParameterSet::new();
        let id = params.add("x", Tensor::vector(vec![0.5, -2.0, 3.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let loss = g.sum(x);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(id).values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_square() {
        let mut params = ParameterSet::new();
        let id = params.add("x", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let sq = g.mul(x, x);
        let loss = g.sum(sq);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(id).values(), &[6.0]);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut params = ParameterSet::new();
        let id = params.add("x", Tensor::scalar(1000.0)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let e = g.exp(x);
        let loss = g.sum(e);
        assert_eq!(g.backward(loss, &mut params), Err(Error::NonFinite("loss")));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut params = ParameterSet::new();
        params.add("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        let before = params.clone();
        let mut opt = Adam::new(&params, AdamConfig::default());
        opt.step(&mut params).unwrap();
        assert_eq!(params.iter().next().unwrap().1, before.iter().next().unwrap().1);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = ParameterSet::new();
        let id = params.add("w", Tensor::vector(vec![1.0, -1.0, 0.0])).unwrap();
        let mut opt = Adam::new(&params, AdamConfig::with_learning_rate(0.01));
        let mut g = Graph::new();
        let w = g.param(&params, id);
        let scaled = g.scale(w, 2.5);
        let loss = g.sum(scaled);
        g.backward(loss, &mut params).unwrap();
        opt.step(&mut params).unwrap();
        for (after, before) in params.value(id).values().iter().zip([1.0, -1.0, 0.0]) {
            assert!((before - after - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_rejects_foreign_parameter_sets() {
        let mut a = ParameterSet::new();
        a.add("w", Tensor::vector(vec![1.0])).unwrap();
        let mut b = ParameterSet::new();
        b.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut opt = Adam::new(&a, AdamConfig::default());
        assert!(matches!(opt.step(&mut b), Err(Error::ShapeMismatch { .. })));
    }
}
