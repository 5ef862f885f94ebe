//! Transformer-decoder refinement of chunk attractors (against the chunk's
//! frame embeddings) and of centroids (against the ghost speaker plus the
//! refined attractors).

use crate::eend_eda::FrameEmbeddings;
use crate::nn::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::tensor::Matrix;

/// Trainable extra attention target for the centroid decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostSpeaker {
    pub embedding: Vec<f32>,
}

/// Post-norm transformer decoder block without positional encoding:
/// self-attention over the queries, cross-attention into the memory, then a
/// feed-forward layer.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn forward(&self, queries: &Matrix, memory: &Matrix) -> Matrix {
        let mut x = queries.clone();
        x.add_assign(&self.self_attn.forward(queries, queries, None));
        let x = self.norm1.forward(&x);

        let mut y = x.clone();
        y.add_assign(&self.cross_attn.forward(&x, memory, None));
        let y = self.norm2.forward(&y);

        let mut z = y.clone();
        z.add_assign(&self.ff.forward(&y));
        self.norm3.forward(&z)
    }
}

fn decode(blocks: &[DecoderBlock], queries: &Matrix, memory: &Matrix) -> Matrix {
    blocks
        .iter()
        .fold(queries.clone(), |x, block| block.forward(&x, memory))
}

/// Refines `S x D` attractors against the current chunk's embeddings only.
/// An empty attractor set is returned as is.
pub fn refine_attractors(attractors: &Matrix, emb: &FrameEmbeddings, blocks: &[DecoderBlock]) -> Matrix {
    if attractors.is_empty() {
        return attractors.clone();
    }
    decode(blocks, attractors, &emb.data)
}

/// `[g_spk; refined attractors]` as a `(S + 1) x D` matrix.
pub fn with_ghost(ghost: &GhostSpeaker, refined: &Matrix) -> Matrix {
    Matrix::from_vec(1, ghost.embedding.len(), ghost.embedding.clone()).vstack(refined)
}

/// Refines `C x D` centroids with keys and values `attractors_plus`
/// (ghost speaker first). Returns exactly `C` rows; `C = 0` yields an empty
/// matrix.
pub fn refine_centroids(centroids: &Matrix, attractors_plus: &Matrix, blocks: &[DecoderBlock]) -> Matrix {
    if centroids.is_empty() {
        return centroids.clone();
    }
    decode(blocks, centroids, attractors_plus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::weights::random_weights;
    use crate::model::{Model, ModelConfig};
    use rand::{Rng, SeedableRng};

    fn tiny() -> Model {
        let cfg = ModelConfig {
            input_dim: 6,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            ff_dim: 16,
            ..ModelConfig::default()
        };
        Model::from_bundle(&random_weights(&cfg, 21).unwrap()).unwrap()
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn empty_inputs_skip() {
        let m = tiny();
        let e = FrameEmbeddings { data: rand_mat(4, 8, 1) };
        assert_eq!(refine_attractors(&Matrix::zeros(0, 8), &e, &m.attractor_decoder).shape(), (0, 8));
        assert_eq!(refine_centroids(&Matrix::zeros(0, 8), &rand_mat(2, 8, 2), &m.centroid_decoder).shape(), (0, 8));
    }

    #[test]
    fn query_count_preserved() {
        let m = tiny();
        for s in 1..4 {
            for t in [1, 5, 13] {
                let e = FrameEmbeddings { data: rand_mat(t, 8, t as u64) };
                let a = rand_mat(s, 8, s as u64 + 100);
                assert_eq!(refine_attractors(&a, &e, &m.attractor_decoder).shape(), (s, 8));
            }
        }
        for c in 1..5 {
            for s in 0..3 {
                let plus = with_ghost(&m.ghost, &rand_mat(s, 8, 7));
                assert_eq!(plus.rows(), s + 1);
                let h = rand_mat(c, 8, 9);
                assert_eq!(refine_centroids(&h, &plus, &m.centroid_decoder).shape(), (c, 8));
            }
        }
    }

    #[test]
    fn attractor_refinement_is_permutation_equivariant() {
        let m = tiny();
        let e = FrameEmbeddings { data: rand_mat(7, 8, 3) };
        let a = rand_mat(3, 8, 4);
        let base = refine_attractors(&a, &e, &m.attractor_decoder);
        let perm = [1usize, 2, 0];
        let permuted = refine_attractors(&a.select_rows(&perm), &e, &m.attractor_decoder);
        let expect = base.select_rows(&perm);
        for (x, y) in permuted.as_slice().iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic() {
        let m = tiny();
        let h = rand_mat(3, 8, 5);
        let plus = with_ghost(&m.ghost, &rand_mat(2, 8, 6));
        assert_eq!(
            refine_centroids(&h, &plus, &m.centroid_decoder),
            refine_centroids(&h, &plus, &m.centroid_decoder)
        );
    }
}
