//! Loss evaluators in `f64` (no gradients): existence and PIT diarization
//! BCE at chunk and recording level, clustering cross-entropy, the
//! diarization loss on stitched output and the weighted total.
//!
//! BCE reductions are means over elements.

use crate::error::{Error, Result};
use crate::lsap::linear_sum_assignment;

pub const BCE_EPS: f64 = 1e-7;

/// Weight of the chunk-level EEND-EDA term in [`total_loss`].
pub const CHUNK_LOSS_WEIGHT: f64 = 10.0;

/// Binary cross-entropy with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean BCE of `existence` against `[1; speakers] ++ [0]`.
pub fn existence_loss(existence: &[f64], speakers: usize) -> Result<f64> {
    if existence.len() != speakers + 1 {
        return Err(Error::contract(format!(
            "existence has {} entries, expected {}",
            existence.len(),
            speakers + 1
        )));
    }
    let sum: f64 = existence
        .iter()
        .enumerate()
        .map(|(i, &p)| bce(p, if i < speakers { 1.0 } else { 0.0 }))
        .sum();
    Ok(sum / existence.len() as f64)
}

fn check_labels(reference: &[Vec<f64>]) -> Result<()> {
    if reference.iter().flatten().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract("reference labels must be 0 or 1"));
    }
    Ok(())
}

/// `cost[i][j] = sum_t bce(hyp[i][t], reference[j][t])`, row-major `S x S`.
pub fn pairwise_bce(hyp: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<f64> {
    let s = hyp.len();
    let mut cost = Vec::with_capacity(s * s);
    for h in hyp {
        for r in reference {
            cost.push(h.iter().zip(r).map(|(&p, &y)| bce(p, y)).sum());
        }
    }
    cost
}

/// Permutation-free diarization loss.
///
/// Returns the mean BCE under the best speaker permutation, and that
/// permutation: hypothesis row `i` is compared with reference row `perm[i]`.
/// The search is an exact linear assignment on pairwise BCE sums.
pub fn pit_diarization_loss(hyp: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    if hyp.len() != reference.len() {
        return Err(Error::contract(format!(
            "hypothesis has {} speakers, reference {}",
            hyp.len(),
            reference.len()
        )));
    }
    let s = hyp.len();
    if s == 0 {
        return Ok((0.0, Vec::new()));
    }
    let t = hyp[0].len();
    if hyp.iter().chain(reference).any(|row| row.len() != t) {
        return Err(Error::contract("all rows must have the same frame count"));
    }
    check_labels(reference)?;
    if t == 0 {
        return Ok((0.0, (0..s).collect()));
    }
    let cost = pairwise_bce(hyp, reference);
    let perm: Vec<usize> = linear_sum_assignment(&cost, s, s)
        .into_iter()
        .map(|c| c.expect("square problem"))
        .collect();
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * s + j]).sum();
    Ok((total / (s * t) as f64, perm))
}

/// Model outputs and labels for one chunk (or a whole recording).
#[derive(Debug, Clone, PartialEq)]
pub struct EendEdaOutput {
    /// `S + 1` existence probabilities.
    pub existence: Vec<f64>,
    /// `S x T` posteriors.
    pub posteriors: Vec<Vec<f64>>,
    /// `S x T` binary labels.
    pub reference: Vec<Vec<f64>>,
}

impl EendEdaOutput {
    fn terms(&self) -> Result<(f64, f64)> {
        let diar = pit_diarization_loss(&self.posteriors, &self.reference)?.0;
        let exist = existence_loss(&self.existence, self.reference.len())?;
        Ok((diar, exist))
    }
}

/// Recording-level `L_diar + L_exist`.
pub fn eend_eda_loss_global(output: &EendEdaOutput) -> Result<f64> {
    let (d, e) = output.terms()?;
    Ok(d + e)
}

/// Chunk-level loss: both terms averaged over chunks.
pub fn eend_eda_loss_chunks(chunks: &[EendEdaOutput]) -> Result<f64> {
    if chunks.is_empty() {
        return Ok(0.0);
    }
    let mut diar = 0.0;
    let mut exist = 0.0;
    for c in chunks {
        let (d, e) = c.terms()?;
        diar += d;
        exist += e;
    }
    let n = chunks.len() as f64;
    Ok(diar / n + exist / n)
}

/// Clustering cross-entropy: per chunk the mean over attractors of
/// `-log p[i][true class]`, averaged over chunks. `targets[n][i]` is the
/// true column (`C` meaning the `h0` class) of attractor `i` in chunk `n`.
/// Chunks without attractors are skipped.
pub fn clustering_ce(probs: &[Vec<Vec<f64>>], targets: &[Vec<Vec<f64>>]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::contract("probability and reference chunk counts differ"));
    }
    let mut sum = 0.0;
    let mut chunks = 0usize;
    for (p, r) in probs.iter().zip(targets) {
        if p.len() != r.len() {
            return Err(Error::contract("attractor counts differ within a chunk"));
        }
        if p.is_empty() {
            continue;
        }
        let mut chunk = 0.0;
        for (prow, rrow) in p.iter().zip(r) {
            if prow.len() != rrow.len() {
                return Err(Error::contract("class counts differ"));
            }
            let ones = rrow.iter().filter(|&&x| x == 1.0).count();
            if ones != 1 || rrow.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::contract("reference row is not one-hot"));
            }
            let (j, _) = rrow.iter().enumerate().find(|(_, &x)| x == 1.0).unwrap();
            chunk += -prow[j].clamp(BCE_EPS, 1.0).ln();
        }
        sum += chunk / p.len() as f64;
        chunks += 1;
    }
    Ok(if chunks == 0 { 0.0 } else { sum / chunks as f64 })
}

/// PIT diarization loss on the stitched recording-level output. The side
/// with fewer speakers is padded with rows of probability `BCE_EPS`
/// (hypothesis) or zeros (reference).
pub fn cluster_diar_loss(stitched: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    let t = stitched
        .first()
        .or(reference.first())
        .map_or(0, |r| r.len());
    if stitched.iter().chain(reference).any(|r| r.len() != t) {
        return Err(Error::contract("stitched output and reference cover different frames"));
    }
    let s = stitched.len().max(reference.len());
    let mut hyp = stitched.to_vec();
    hyp.resize(s, vec![BCE_EPS; t]);
    let mut refs = reference.to_vec();
    refs.resize(s, vec![0.0; t]);
    Ok(pit_diarization_loss(&hyp, &refs)?.0)
}

/// `L_global + 10 L_chunk + L_ce + L_cluster_diar`.
pub fn total_loss(global: f64, chunk: f64, ce: f64, cluster_diar: f64) -> f64 {
    global + CHUNK_LOSS_WEIGHT * chunk + ce + cluster_diar
}
