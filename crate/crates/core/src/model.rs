//! Model configuration, the canonical tensor layout, and the typed model
//! assembled from a [`WeightBundle`].

use serde::{Deserialize, Serialize};

use crate::cluster::GruCell;
use crate::eend_eda::{Eda, Encoder, EncoderLayer};
use crate::error::{Error, Result, WeightError};
use crate::io::weights::{Tensor, WeightBundle};
use crate::nn::{FeedForward, LayerNorm, Linear, LstmCell, MultiHeadAttention};
use crate::refine::{DecoderBlock, GhostSpeaker};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spliced feature dimension consumed by the encoder input projection.
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub ff_dim: usize,
    pub max_speakers: usize,
    pub existence_threshold: f32,
    pub n_decoder_layers_refine: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 345,
            d_model: 256,
            n_heads: 4,
            n_encoder_layers: 4,
            ff_dim: 1024,
            max_speakers: 4,
            existence_threshold: 0.5,
            n_decoder_layers_refine: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.d_model == 0 || self.ff_dim == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.existence_threshold > 0.0 && self.existence_threshold < 1.0) {
            return Err(Error::config("existence_threshold must lie in (0, 1)"));
        }
        if self.max_speakers == 0 {
            return Err(Error::config("max_speakers must be at least 1"));
        }
        Ok(())
    }

    /// Every tensor the architecture requires, in canonical order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));

        linear_layout(&mut push, "encoder.input", self.input_dim, d);
        for i in 0..self.n_encoder_layers {
            let p = format!("encoder.layer{i}");
            norm_layout(&mut push, &format!("{p}.norm1"), d);
            attention_layout(&mut push, &format!("{p}.self_attn"), d);
            norm_layout(&mut push, &format!("{p}.norm2"), d);
            ff_layout(&mut push, &format!("{p}.ff"), d, self.ff_dim);
        }
        norm_layout(&mut push, "encoder.norm_out", d);

        for lstm in ["eda.encoder", "eda.decoder"] {
            push(format!("{lstm}.W"), vec![d, 4 * d]);
            push(format!("{lstm}.U"), vec![d, 4 * d]);
            push(format!("{lstm}.b"), vec![4 * d]);
        }
        push("eda.exist.weight".into(), vec![d]);
        push("eda.exist.bias".into(), vec![1]);

        for dec in ["refine.attractor", "refine.centroid"] {
            for i in 0..self.n_decoder_layers_refine {
                let p = format!("{dec}.layer{i}");
                attention_layout(&mut push, &format!("{p}.self_attn"), d);
                norm_layout(&mut push, &format!("{p}.norm1"), d);
                attention_layout(&mut push, &format!("{p}.cross_attn"), d);
                norm_layout(&mut push, &format!("{p}.norm2"), d);
                ff_layout(&mut push, &format!("{p}.ff"), d, self.ff_dim);
                norm_layout(&mut push, &format!("{p}.norm3"), d);
            }
        }
        push("refine.ghost_speaker".into(), vec![d]);

        for gate in ["update", "reset", "candidate"] {
            push(format!("gru.{gate}.W"), vec![d, d]);
            push(format!("gru.{gate}.U"), vec![d, d]);
            push(format!("gru.{gate}.b"), vec![d]);
        }
        push("cluster.h0".into(), vec![d]);
        out
    }
}

fn linear_layout(push: &mut impl FnMut(String, Vec<usize>), p: &str, i: usize, o: usize) {
    push(format!("{p}.weight"), vec![i, o]);
    push(format!("{p}.bias"), vec![o]);
}

fn norm_layout(push: &mut impl FnMut(String, Vec<usize>), p: &str, d: usize) {
    push(format!("{p}.weight"), vec![d]);
    push(format!("{p}.bias"), vec![d]);
}

fn attention_layout(push: &mut impl FnMut(String, Vec<usize>), p: &str, d: usize) {
    for proj in ["query", "key", "value", "output"] {
        linear_layout(push, &format!("{p}.{proj}"), d, d);
    }
}

fn ff_layout(push: &mut impl FnMut(String, Vec<usize>), p: &str, d: usize, ff: usize) {
    linear_layout(push, &format!("{p}.linear1"), d, ff);
    linear_layout(push, &format!("{p}.linear2"), ff, d);
}

/// All trained parameters, in typed form. Immutable after construction and
/// safe to share between sessions.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub eda: Eda,
    pub attractor_decoder: Vec<DecoderBlock>,
    pub centroid_decoder: Vec<DecoderBlock>,
    pub ghost: GhostSpeaker,
    pub gru: GruCell,
    pub h0: Vec<f32>,
}

impl Model {
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let cfg = bundle.config.clone();
        cfg.validate()?;
        bundle.validate()?;
        let src = Source { bundle };
        let heads = cfg.n_heads;

        let layers = (0..cfg.n_encoder_layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                Ok(EncoderLayer {
                    norm1: src.norm(&format!("{p}.norm1"))?,
                    self_attn: src.attention(&format!("{p}.self_attn"), heads)?,
                    norm2: src.norm(&format!("{p}.norm2"))?,
                    ff: src.ff(&format!("{p}.ff"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder = Encoder {
            input: src.linear("encoder.input")?,
            layers,
            norm_out: src.norm("encoder.norm_out")?,
        };

        let eda = Eda {
            encoder: src.lstm("eda.encoder")?,
            decoder: src.lstm("eda.decoder")?,
            exist_weight: src.vector("eda.exist.weight")?,
            exist_bias: src.vector("eda.exist.bias")?[0],
            max_speakers: cfg.max_speakers,
            threshold: cfg.existence_threshold,
        };

        let decoder = |name: &str| {
            (0..cfg.n_decoder_layers_refine)
                .map(|i| {
                    let p = format!("{name}.layer{i}");
                    Ok(DecoderBlock {
                        self_attn: src.attention(&format!("{p}.self_attn"), heads)?,
                        norm1: src.norm(&format!("{p}.norm1"))?,
                        cross_attn: src.attention(&format!("{p}.cross_attn"), heads)?,
                        norm2: src.norm(&format!("{p}.norm2"))?,
                        ff: src.ff(&format!("{p}.ff"))?,
                        norm3: src.norm(&format!("{p}.norm3"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        };

        let gate = |g: &str| -> Result<(Matrix, Matrix, Vec<f32>)> {
            Ok((
                src.matrix(&format!("gru.{g}.W"))?,
                src.matrix(&format!("gru.{g}.U"))?,
                src.vector(&format!("gru.{g}.b"))?,
            ))
        };
        let (wz, uz, bz) = gate("update")?;
        let (wr, ur, br) = gate("reset")?;
        let (wh, uh, bh) = gate("candidate")?;

        Ok(Model {
            encoder,
            eda,
            attractor_decoder: decoder("refine.attractor")?,
            centroid_decoder: decoder("refine.centroid")?,
            ghost: GhostSpeaker {
                embedding: src.vector("refine.ghost_speaker")?,
            },
            gru: GruCell {
                w_update: wz,
                u_update: uz,
                b_update: bz,
                w_reset: wr,
                u_reset: ur,
                b_reset: br,
                w_candidate: wh,
                u_candidate: uh,
                b_candidate: bh,
            },
            h0: src.vector("cluster.h0")?,
            config: cfg,
        })
    }
}

struct Source<'a> {
    bundle: &'a WeightBundle,
}

impl Source<'_> {
    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.bundle
            .get(name)
            .ok_or_else(|| WeightError::MissingTensor(name.to_string()).into())
    }

    fn vector(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.tensor(name)?.data.clone())
    }

    fn matrix(&self, name: &str) -> Result<Matrix> {
        let t = self.tensor(name)?;
        match t.shape[..] {
            [r, c] => Ok(Matrix::from_vec(r, c, t.data.clone())),
            _ => Err(WeightError::Malformed(format!("`{name}` is not rank 2")).into()),
        }
    }

    fn linear(&self, p: &str) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{p}.weight"))?,
            bias: self.vector(&format!("{p}.bias"))?,
        })
    }

    fn norm(&self, p: &str) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{p}.weight"))?,
            beta: self.vector(&format!("{p}.bias"))?,
        })
    }

    fn attention(&self, p: &str, n_heads: usize) -> Result<MultiHeadAttention> {
        Ok(MultiHeadAttention {
            query: self.linear(&format!("{p}.query"))?,
            key: self.linear(&format!("{p}.key"))?,
            value: self.linear(&format!("{p}.value"))?,
            output: self.linear(&format!("{p}.output"))?,
            n_heads,
        })
    }

    fn ff(&self, p: &str) -> Result<FeedForward> {
        Ok(FeedForward {
            linear1: self.linear(&format!("{p}.linear1"))?,
            linear2: self.linear(&format!("{p}.linear2"))?,
        })
    }

    fn lstm(&self, p: &str) -> Result<LstmCell> {
        Ok(LstmCell {
            w_input: self.matrix(&format!("{p}.W"))?,
            w_hidden: self.matrix(&format!("{p}.U"))?,
            bias: self.vector(&format!("{p}.b"))?,
        })
    }
}
