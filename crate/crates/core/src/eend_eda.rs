//! Chunk-level EEND-EDA inference: a latency-masked transformer encoder
//! without positional encoding, an LSTM encoder-decoder producing
//! attractors with existence probabilities, and sigmoid speaker posteriors.

use crate::error::{Error, Result};
use crate::nn::{FeedForward, LayerNorm, Linear, LstmCell, LstmState, MultiHeadAttention};
use crate::tensor::{dot, sigmoid, Matrix};

/// Lower bound (and `1 - upper bound`) applied to posteriors so they stay
/// strictly inside `(0, 1)` in `f32`.
pub const POSTERIOR_EPS: f32 = 1e-7;

/// Self-attention visibility for a chunk of `frames` frames: query `t` may
/// attend to key `k` iff `k <= t + latency_frames`.
///
/// The look-ahead is granted in the first encoder layer only; deeper layers
/// are causal, so every encoder output at frame `t` depends on inputs up to
/// `t + latency_frames` and no further. A mask that admits every key
/// (`latency_frames >= frames - 1`) is applied unrestricted in all layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionMask {
    pub frames: usize,
    pub latency_frames: usize,
}

impl AttentionMask {
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        key <= query.saturating_add(self.latency_frames)
    }

    pub fn is_unrestricted(&self) -> bool {
        self.latency_frames.saturating_add(1) >= self.frames
    }

    /// Look-ahead for encoder layer `layer`, `None` meaning unrestricted.
    pub fn lookahead_for_layer(&self, layer: usize) -> Option<usize> {
        if self.is_unrestricted() {
            None
        } else if layer == 0 {
            Some(self.latency_frames)
        } else {
            Some(0)
        }
    }

    /// Materialized `frames x frames` boolean matrix (query-major).
    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.frames)
            .map(|t| (0..self.frames).map(|k| self.allowed(t, k)).collect())
            .collect()
    }
}

pub fn build_latency_mask(frames: usize, latency_frames: usize) -> AttentionMask {
    AttentionMask {
        frames,
        latency_frames,
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

/// Pre-norm transformer encoder stack.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
    pub norm_out: LayerNorm,
}

/// Frame embeddings, one `D`-dimensional row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub data: Matrix,
}

impl FrameEmbeddings {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }
}

/// Encodes `features` (`T x D'`) into `T x D` embeddings.
pub fn encode(features: &Matrix, mask: &AttentionMask, encoder: &Encoder) -> Result<FrameEmbeddings> {
    if features.cols() != encoder.input.in_dim() {
        return Err(Error::config(format!(
            "feature dim {} does not match encoder input dim {}",
            features.cols(),
            encoder.input.in_dim()
        )));
    }
    if mask.frames != features.rows() {
        return Err(Error::contract(format!(
            "mask covers {} frames, input has {}",
            mask.frames,
            features.rows()
        )));
    }
    let mut e = encoder.input.forward(features);
    for (i, layer) in encoder.layers.iter().enumerate() {
        let h = layer.norm1.forward(&e);
        let a = layer.self_attn.forward(&h, &h, mask.lookahead_for_layer(i));
        e.add_assign(&a);
        let h = layer.norm2.forward(&e);
        let f = layer.ff.forward(&h);
        e.add_assign(&f);
    }
    Ok(FrameEmbeddings {
        data: encoder.norm_out.forward(&e),
    })
}

/// Encoder-decoder attractor module.
#[derive(Debug, Clone)]
pub struct Eda {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub exist_weight: Vec<f32>,
    pub exist_bias: f32,
    pub max_speakers: usize,
    pub threshold: f32,
}

/// Attractors (one per row) and their existence probabilities.
///
/// `existence.len() == count() + 1`: the trailing entry is the probe that
/// stopped emission (below threshold, unless the set was truncated at the
/// speaker cap).
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    pub vectors: Matrix,
    pub existence: Vec<f32>,
}

impl AttractorSet {
    pub fn count(&self) -> usize {
        self.vectors.rows()
    }
}

/// Applies the stop rule to a stream of `(attractor, existence)` candidates.
pub fn collect_attractors(
    dim: usize,
    max_speakers: usize,
    threshold: f32,
    mut next: impl FnMut() -> (Vec<f32>, f32),
) -> AttractorSet {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut existence = Vec::new();
    loop {
        let (a, p) = next();
        existence.push(p);
        if p < threshold || rows.len() == max_speakers {
            break;
        }
        rows.push(a);
    }
    AttractorSet {
        vectors: Matrix::from_rows(&rows, dim),
        existence,
    }
}

/// Runs the LSTM encoder over frames in time order, then decodes attractors
/// from zero inputs until the stop rule fires.
pub fn eda_attractors(emb: &FrameEmbeddings, eda: &Eda) -> AttractorSet {
    let d = eda.encoder.hidden_dim();
    let projected = eda.encoder.project_inputs(&emb.data);
    let mut state = LstmState::zeros(d);
    for t in 0..projected.rows() {
        state = eda.encoder.step_projected(projected.row(t), &state);
    }
    collect_attractors(d, eda.max_speakers, eda.threshold, || {
        state = eda.decoder.step_zero_input(&state);
        let p = sigmoid(dot(&eda.exist_weight, &state.h) + eda.exist_bias);
        (state.h.clone(), p)
    })
}

/// `S x T` speaker activity probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPosteriors {
    pub data: Matrix,
}

/// `sigmoid(a_s . e_t)` for every attractor `s` and frame `t`.
pub fn speaker_posteriors(attractors: &Matrix, emb: &FrameEmbeddings) -> LocalPosteriors {
    assert_eq!(attractors.cols(), emb.data.cols(), "attractor / embedding dim mismatch");
    let mut logits = attractors.matmul(&emb.data.transpose());
    logits.map_inplace(|x| sigmoid(x).clamp(POSTERIOR_EPS, 1.0 - POSTERIOR_EPS));
    LocalPosteriors { data: logits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::weights::random_weights;
    use crate::model::{Model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            input_dim: 10,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 2,
            ff_dim: 16,
            ..ModelConfig::default()
        };
        Model::from_bundle(&random_weights(&cfg, seed).unwrap()).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect())
    }

    #[test]
    fn mask_shapes() {
        let causal = build_latency_mask(4, 0).to_dense();
        for (t, row) in causal.iter().enumerate() {
            for (k, &allowed) in row.iter().enumerate() {
                assert_eq!(allowed, k <= t);
            }
        }
        assert!(build_latency_mask(4, 3).to_dense().iter().flatten().all(|&b| b));
        let m = build_latency_mask(5, 1).to_dense();
        for (t, row) in m.iter().enumerate() {
            let expect: Vec<bool> = (0..5).map(|k| k <= (t + 1).min(4)).collect();
            assert_eq!(row, &expect);
        }
    }

    #[test]
    fn encoder_respects_latency() {
        let model = tiny_model(1);
        let t_len = 12;
        for lat in [0usize, 2, 4] {
            let x = random_matrix(t_len, 10, 2);
            let mask = build_latency_mask(t_len, lat);
            let base = encode(&x, &mask, &model.encoder).unwrap();
            for k in 0..t_len {
                let mut y = x.clone();
                for v in y.row_mut(k) {
                    *v += 1.5;
                }
                let out = encode(&y, &mask, &model.encoder).unwrap();
                for t in 0..t_len {
                    if t + lat < k {
                        assert_eq!(out.data.row(t), base.data.row(t), "lat {lat} k {k} t {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_frame_ignores_latency() {
        let model = tiny_model(3);
        let x = random_matrix(1, 10, 4);
        let a = encode(&x, &build_latency_mask(1, 0), &model.encoder).unwrap();
        let b = encode(&x, &build_latency_mask(1, 7), &model.encoder).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_mask_is_non_causal() {
        let model = tiny_model(5);
        let x = random_matrix(6, 10, 6);
        let a = encode(&x, &build_latency_mask(6, 5), &model.encoder).unwrap();
        let x2 = x.vstack(&x.slice_rows(5..6));
        let b = encode(&x2, &build_latency_mask(7, 6), &model.encoder).unwrap();
        assert_ne!(a.data, b.data.slice_rows(0..6));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let model = tiny_model(1);
        let x = Matrix::zeros(3, 9);
        assert!(matches!(
            encode(&x, &build_latency_mask(3, 0), &model.encoder),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stop_rule_on_stub() {
        let probs = [0.9f32, 0.6, 0.3, 0.8];
        let mut i = 0;
        let set = collect_attractors(2, 4, 0.5, || {
            let p = probs[i];
            i += 1;
            (vec![i as f32; 2], p)
        });
        assert_eq!(set.count(), 2);
        assert_eq!(set.existence, vec![0.9, 0.6, 0.3]);

        let set = collect_attractors(2, 4, 0.5, || (vec![0.0; 2], 0.2));
        assert_eq!(set.count(), 0);
        assert_eq!(set.existence.len(), 1);

        let set = collect_attractors(2, 3, 0.5, || (vec![0.0; 2], 0.99));
        assert_eq!(set.count(), 3);
        assert_eq!(set.existence.len(), 4);
    }

    #[test]
    fn eda_deterministic_and_immediate_stop() {
        let mut model = tiny_model(7);
        let x = random_matrix(9, 10, 8);
        let e = encode(&x, &build_latency_mask(9, 9), &model.encoder).unwrap();
        let a = eda_attractors(&e, &model.eda);
        assert_eq!(a, eda_attractors(&e, &model.eda));
        assert_eq!(a.existence.len(), a.count() + 1);

        model.eda.exist_bias = -10.0;
        model.eda.exist_weight.iter_mut().for_each(|w| *w = 0.0);
        let a = eda_attractors(&e, &model.eda);
        assert_eq!(a.count(), 0);
        assert_eq!(a.vectors.shape(), (0, 8));
    }

    #[test]
    fn posterior_examples() {
        let e = FrameEmbeddings {
            data: random_matrix(5, 4, 9),
        };
        let p = speaker_posteriors(&Matrix::zeros(2, 4), &e);
        assert!(p.data.as_slice().iter().all(|&x| x == 0.5));

        let e = FrameEmbeddings {
            data: Matrix::from_vec(1, 2, vec![3f32.ln(), 0.0]),
        };
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let p = speaker_posteriors(&a, &e);
        assert!((p.data.get(0, 0) - 0.75).abs() < 1e-6);
        assert_eq!(p.data.get(1, 0), 0.5);

        let big = Matrix::from_vec(1, 2, vec![1e4, -1e4]);
        let e = FrameEmbeddings {
            data: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
        };
        let p = speaker_posteriors(&big, &e);
        assert!(p.data.as_slice().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn posteriors_permute_with_attractors() {
        let e = FrameEmbeddings {
            data: random_matrix(6, 4, 10),
        };
        let a = random_matrix(3, 4, 11);
        let p = speaker_posteriors(&a, &e);
        let perm = [2usize, 0, 1];
        let q = speaker_posteriors(&a.select_rows(&perm), &e);
        assert_eq!(q.data, p.data.select_rows(&perm));
    }
}
