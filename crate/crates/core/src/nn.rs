//! Inference-only neural building blocks: linear layers, layer norm,
//! multi-head attention with an optional look-ahead limit, feed-forward
//! blocks and an LSTM cell.

use crate::tensor::{sigmoid, Matrix};

const LAYER_NORM_EPS: f32 = 1e-5;

/// `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        y.add_row_vector(&self.bias);
        y
    }

    pub fn forward_vec(&self, x: &[f32]) -> Vec<f32> {
        let mut y = self.bias.clone();
        vec_mat_acc(x, &self.weight, &mut y);
        y
    }
}

/// `acc += x M` for a row vector `x`.
pub fn vec_mat_acc(x: &[f32], m: &Matrix, acc: &mut [f32]) {
    debug_assert_eq!(x.len(), m.rows());
    debug_assert_eq!(acc.len(), m.cols());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (a, w) in acc.iter_mut().zip(m.row(i)) {
            *a += xi * w;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNorm {
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.clone();
        for r in 0..y.rows() {
            self.apply(y.row_mut(r));
        }
        y
    }

    fn apply(&self, row: &mut [f32]) {
        let n = row.len() as f32;
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for ((x, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *x = (*x - mean) * inv * g + b;
        }
    }
}

/// Scaled dot-product attention over `n_heads` heads.
///
/// `q` is `Tq x D`, `k` and `v` are `Tk x D`. With `lookahead = Some(l)`,
/// query `t` only sees keys `0..=t+l`; keys outside that window are never
/// touched, so their weight is exactly zero. `None` means every key is
/// visible. Softmax uses max subtraction.
pub fn scaled_dot_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_heads: usize,
    lookahead: Option<usize>,
) -> Matrix {
    let (tq, d) = q.shape();
    let tk = k.rows();
    assert_eq!(k.cols(), d);
    assert_eq!(v.shape(), (tk, d));
    assert!(n_heads > 0 && d % n_heads == 0);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = Matrix::zeros(tq, d);
    let mut weights = vec![0.0f32; tk];

    for t in 0..tq {
        let limit = match lookahead {
            Some(l) => tk.min(t.saturating_add(l).saturating_add(1)),
            None => tk,
        };
        if limit == 0 {
            continue;
        }
        let qrow = q.row(t);
        for h in 0..n_heads {
            let span = h * dh..(h + 1) * dh;
            let qh = &qrow[span.clone()];
            let mut max = f32::NEG_INFINITY;
            for (key, w) in weights[..limit].iter_mut().enumerate() {
                let s = crate::tensor::dot(qh, &k.row(key)[span.clone()]) * scale;
                *w = s;
                max = max.max(s);
            }
            let mut sum = 0.0f32;
            for w in &mut weights[..limit] {
                *w = (*w - max).exp();
                sum += *w;
            }
            let orow = &mut out.row_mut(t)[span.clone()];
            for (key, w) in weights[..limit].iter().enumerate() {
                let p = w / sum;
                for (o, x) in orow.iter_mut().zip(&v.row(key)[span.clone()]) {
                    *o += p * x;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    /// Queries from `x`, keys and values from `memory`.
    pub fn forward(&self, x: &Matrix, memory: &Matrix, lookahead: Option<usize>) -> Matrix {
        let q = self.query.forward(x);
        let k = self.key.forward(memory);
        let v = self.value.forward(memory);
        let ctx = scaled_dot_attention(&q, &k, &v, self.n_heads, lookahead);
        self.output.forward(&ctx)
    }
}

/// Position-wise `linear2(relu(linear1(x)))`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub linear1: Linear,
    pub linear2: Linear,
}

impl FeedForward {
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = self.linear1.forward(x);
        h.map_inplace(|v| v.max(0.0));
        self.linear2.forward(&h)
    }
}

/// LSTM cell with gates packed `[input, forget, cell, output]` along the
/// output axis of `w_input` (`[in, 4H]`) and `w_hidden` (`[H, 4H]`).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmCell {
    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    /// Input contributions `X W + b` for a whole sequence at once.
    pub fn project_inputs(&self, x: &Matrix) -> Matrix {
        let mut g = x.matmul(&self.w_input);
        g.add_row_vector(&self.bias);
        g
    }

    /// One step given the precomputed input contribution (`x W + b`).
    pub fn step_projected(&self, projected: &[f32], state: &LstmState) -> LstmState {
        let hd = self.hidden_dim();
        let mut gates = projected.to_vec();
        vec_mat_acc(&state.h, &self.w_hidden, &mut gates);
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for k in 0..hd {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hd + k]);
            let g = gates[2 * hd + k].tanh();
            let o = sigmoid(gates[3 * hd + k]);
            c[k] = f * state.c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        LstmState { h, c }
    }

    /// One step with zero input, as used by the attractor decoder.
    pub fn step_zero_input(&self, state: &LstmState) -> LstmState {
        self.step_projected(&self.bias, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    #[test]
    fn attention_with_equal_values_returns_that_value() {
        let q = mat(3, 4, |r, c| (r * 7 + c) as f32 * 0.3 - 1.0);
        let k = mat(5, 4, |r, c| ((r + 2 * c) % 5) as f32 - 2.0);
        let v = mat(5, 4, |_, c| c as f32 + 0.5);
        let out = scaled_dot_attention(&q, &k, &v, 2, None);
        for r in 0..3 {
            for c in 0..4 {
                assert!((out.get(r, c) - (c as f32 + 0.5)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lookahead_zero_first_query_sees_only_first_key() {
        let q = mat(3, 2, |_, _| 1.0);
        let k = mat(3, 2, |r, _| r as f32);
        let v = mat(3, 2, |r, _| 10.0 * r as f32);
        let out = scaled_dot_attention(&q, &k, &v, 1, Some(0));
        assert_eq!(out.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let ln = LayerNorm {
            gamma: vec![1.0; 4],
            beta: vec![0.0; 4],
        };
        let y = ln.forward(&Matrix::from_vec(1, 4, vec![1., 2., 3., 4.]));
        let mean: f32 = y.row(0).iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn lstm_zero_weights() {
        let cell = LstmCell {
            w_input: Matrix::zeros(2, 8),
            w_hidden: Matrix::zeros(2, 8),
            bias: vec![0.0; 8],
        };
        let s = cell.step_zero_input(&LstmState {
            h: vec![0.3, -0.3],
            c: vec![1.0, -2.0],
        });
        // c' = 0.5 c + 0.5 * tanh(0) ; h' = 0.5 tanh(c')
        assert!((s.c[0] - 0.5).abs() < 1e-7);
        assert!((s.h[1] - 0.5 * (-1.0f32).tanh()).abs() < 1e-7);
    }
}
