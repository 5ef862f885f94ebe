//! Online neural clustering.
//!
//! Each discovered speaker owns a GRU whose hidden state is its centroid.
//! Chunk attractors are classified against the known centroids plus the
//! shared initial state `h0` (the "new speaker" class), matched one-to-one
//! by linear assignment, and the matched GRUs are stepped with their
//! attractor. Unmatched centroids are left untouched.

use crate::eend_eda::LocalPosteriors;
use crate::error::{Error, Result};
use crate::lsap::linear_sum_assignment;
use crate::tensor::{sigmoid, Matrix};

/// Standard GRU cell, weights stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub b_update: Vec<f32>,
    pub w_reset: Matrix,
    pub u_reset: Matrix,
    pub b_reset: Vec<f32>,
    pub w_candidate: Matrix,
    pub u_candidate: Matrix,
    pub b_candidate: Vec<f32>,
}

impl GruCell {
    /// All-zero parameters for hidden size `d`.
    pub fn zeros(d: usize) -> Self {
        Self {
            w_update: Matrix::zeros(d, d),
            u_update: Matrix::zeros(d, d),
            b_update: vec![0.0; d],
            w_reset: Matrix::zeros(d, d),
            u_reset: Matrix::zeros(d, d),
            b_reset: vec![0.0; d],
            w_candidate: Matrix::zeros(d, d),
            u_candidate: Matrix::zeros(d, d),
            b_candidate: vec![0.0; d],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_update.rows()
    }
}

fn affine(x: &[f32], w: &Matrix, h: &[f32], u: &Matrix, b: &[f32]) -> Vec<f32> {
    let mut acc = b.to_vec();
    crate::nn::vec_mat_acc(x, w, &mut acc);
    crate::nn::vec_mat_acc(h, u, &mut acc);
    acc
}

/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r * h) Uh + bh)
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_cell(x: &[f32], h: &[f32], gru: &GruCell) -> Vec<f32> {
    let z: Vec<f32> = affine(x, &gru.w_update, h, &gru.u_update, &gru.b_update)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f32> = affine(x, &gru.w_reset, h, &gru.u_reset, &gru.b_reset)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f32> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    let cand = affine(x, &gru.w_candidate, &rh, &gru.u_candidate, &gru.b_candidate);
    h.iter()
        .zip(&z)
        .zip(cand)
        .map(|((h, z), c)| (1.0 - z) * h + z * c.tanh())
        .collect()
}

/// Session-local centroid state.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    centroids: Vec<Vec<f32>>,
    h0: Vec<f32>,
}

impl CentroidBank {
    pub fn new(h0: Vec<f32>) -> Self {
        Self {
            centroids: Vec::new(),
            h0,
        }
    }

    /// A bank seeded with existing centroids.
    pub fn with_centroids(h0: Vec<f32>, centroids: Vec<Vec<f32>>) -> Self {
        assert!(centroids.iter().all(|c| c.len() == h0.len()));
        Self { centroids, h0 }
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.h0.len()
    }

    pub fn h0(&self) -> &[f32] {
        &self.h0
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j]
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    /// `C x D` matrix of the current centroids.
    pub fn as_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.centroids, self.dim())
    }
}

/// `S x (C + 1)` class probabilities; column `C` is the `h0` class.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProbs {
    pub p: Vec<Vec<f64>>,
}

impl AssignmentProbs {
    pub fn attractors(&self) -> usize {
        self.p.len()
    }

    /// Number of known centroids `C` (columns minus the `h0` column).
    pub fn centroids(&self) -> usize {
        self.p.first().map_or(0, |r| r.len() - 1)
    }

    fn log_p(&self, i: usize, j: usize) -> f64 {
        self.p[i][j].max(f64::MIN_POSITIVE).ln()
    }
}

/// Softmax over `[refined centroids..., h0]` of their dot product with each
/// refined attractor.
pub fn assignment_probs(refined_centroids: &Matrix, h0: &[f32], attractors: &Matrix) -> AssignmentProbs {
    let c = refined_centroids.rows();
    let p = attractors
        .iter_rows()
        .map(|a| {
            let logits: Vec<f64> = refined_centroids
                .iter_rows()
                .chain(std::iter::once(h0))
                .map(|cand| cand.iter().zip(a).map(|(x, y)| *x as f64 * *y as f64).sum())
                .collect();
            debug_assert_eq!(logits.len(), c + 1);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect();
    AssignmentProbs { p }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// An existing centroid index.
    Centroid(usize),
    /// A fresh centroid founded from `h0`.
    New,
}

/// One target per attractor, in attractor order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub targets: Vec<Target>,
}

impl Assignment {
    pub fn new(targets: Vec<Target>) -> Self {
        Self { targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn new_count(&self) -> usize {
        self.targets.iter().filter(|t| **t == Target::New).count()
    }

    /// Global speaker index of each attractor; new speakers are numbered
    /// from `n_centroids` upwards in attractor order.
    pub fn global_ids(&self, n_centroids: usize) -> Vec<usize> {
        let mut next = n_centroids;
        self.targets
            .iter()
            .map(|t| match *t {
                Target::Centroid(j) => j,
                Target::New => {
                    next += 1;
                    next - 1
                }
            })
            .collect()
    }

    /// `sum_i log p[i][target(i)]`, accumulated in attractor order.
    pub fn total_log_prob(&self, probs: &AssignmentProbs) -> f64 {
        let c = probs.centroids();
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| match *t {
                Target::Centroid(j) => probs.log_p(i, j),
                Target::New => probs.log_p(i, c),
            })
            .sum()
    }

    /// Checks the target set against a bank of `n_centroids` centroids.
    pub fn validate(&self, n_centroids: usize) -> Result<()> {
        let mut used = vec![false; n_centroids];
        for t in &self.targets {
            if let Target::Centroid(j) = *t {
                if j >= n_centroids {
                    return Err(Error::contract(format!("target centroid {j} out of range")));
                }
                if std::mem::replace(&mut used[j], true) {
                    return Err(Error::contract(format!("centroid {j} targeted twice")));
                }
            }
        }
        Ok(())
    }
}

/// Maximizes total log-probability with distinct centroid targets. The
/// `h0` column is replicated once per attractor so any number of them can
/// found new speakers.
pub fn match_attractors(probs: &AssignmentProbs) -> Assignment {
    let s = probs.attractors();
    if s == 0 {
        return Assignment::default();
    }
    let c = probs.centroids();
    let cols = c + s;
    let mut cost = Vec::with_capacity(s * cols);
    for i in 0..s {
        for j in 0..c {
            cost.push(-probs.log_p(i, j));
        }
        let new_cost = -probs.log_p(i, c);
        cost.extend(std::iter::repeat_n(new_cost, s));
    }
    let cols_of = linear_sum_assignment(&cost, s, cols);
    Assignment {
        targets: cols_of
            .into_iter()
            .map(|col| match col.expect("rows <= cols") {
                j if j < c => Target::Centroid(j),
                _ => Target::New,
            })
            .collect(),
    }
}

/// Steps matched GRUs with their attractor and founds new centroids from
/// `h0`. Centroids not targeted are left bit-identical.
pub fn update_centroids(
    bank: &mut CentroidBank,
    gru: &GruCell,
    attractors: &Matrix,
    assignment: &Assignment,
) -> Result<()> {
    if attractors.rows() != assignment.len() {
        return Err(Error::contract(format!(
            "{} attractors but {} assignment targets",
            attractors.rows(),
            assignment.len()
        )));
    }
    assignment.validate(bank.len())?;
    for (i, t) in assignment.targets.iter().enumerate() {
        let a = attractors.row(i);
        match *t {
            Target::Centroid(j) => {
                let h = gru_cell(a, &bank.centroids[j], gru);
                bank.centroids[j] = h;
            }
            Target::New => {
                let h = gru_cell(a, &bank.h0, gru);
                bank.centroids.push(h);
            }
        }
    }
    Ok(())
}

/// Re-indexes local posterior rows by global speaker id. The result has one
/// row per speaker known after this chunk (`n_centroids` + new ones); rows
/// of speakers absent from the chunk are zero.
pub fn permute_local(local: &LocalPosteriors, assignment: &Assignment, n_centroids: usize) -> Result<Matrix> {
    if local.data.rows() != assignment.len() {
        return Err(Error::contract(format!(
            "{} posterior rows but {} assignment targets",
            local.data.rows(),
            assignment.len()
        )));
    }
    assignment.validate(n_centroids)?;
    let ids = assignment.global_ids(n_centroids);
    let mut out = Matrix::zeros(n_centroids + assignment.new_count(), local.data.cols());
    for (i, g) in ids.into_iter().enumerate() {
        out.row_mut(g).copy_from_slice(local.data.row(i));
    }
    Ok(out)
}
