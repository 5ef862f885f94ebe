//! Online sessions.
//!
//! Audio is featurized incrementally; every `latency` worth of new frames
//! triggers one pipeline step over the FIFO buffer (the most recent
//! `buffer` worth of frames). Only the newest `latency` frames of each
//! chunk (the innovation) are emitted, under the speaker permutation
//! resolved by online clustering, so emitted output is never revised.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::cluster::{
    assignment_probs, match_attractors, permute_local, update_centroids, Assignment, AssignmentProbs,
    CentroidBank,
};
use crate::eend_eda::{build_latency_mask, eda_attractors, encode, speaker_posteriors, AttractorSet};
use crate::error::{Error, Result};
use crate::eval::{Segment, SegmentList};
use crate::features::{FeatureConfig, StreamingFeaturizer};
use crate::io::rttm::RttmRecord;
use crate::model::{Model, ModelConfig};
use crate::refine::{refine_attractors, refine_centroids, with_ghost};
use crate::tensor::Matrix;

/// Posterior threshold for emitted activity.
pub const ACTIVITY_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BufferSize {
    Seconds(f64),
    /// Keep every past frame.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    /// Hop between emissions, in seconds.
    pub latency: f64,
    /// Total context per chunk, innovation included.
    pub buffer: BufferSize,
    pub model: ModelConfig,
    pub features: FeatureConfig,
}

fn whole_frames(seconds: f64, period: f64, what: &str) -> Result<usize> {
    let f = seconds / period;
    let r = f.round();
    if !f.is_finite() || (f - r).abs() > 1e-6 {
        return Err(Error::config(format!(
            "{what} {seconds} s is not a whole number of {period} s frames"
        )));
    }
    Ok(r as usize)
}

impl StreamConfig {
    pub fn new(latency: f64, buffer: BufferSize) -> Self {
        Self {
            latency,
            buffer,
            model: ModelConfig::default(),
            features: FeatureConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        if self.latency.is_nan() || self.latency <= 0.0 {
            return Err(Error::config("latency must be positive"));
        }
        if let BufferSize::Seconds(b) = self.buffer {
            if b.is_nan() || b < self.latency {
                return Err(Error::config(format!(
                    "buffer ({b} s) must be at least the latency ({} s)",
                    self.latency
                )));
            }
        }
        self.latency_frames()?;
        self.buffer_frames()?;
        if self.model.input_dim != self.features.feature_dim() {
            return Err(Error::config(format!(
                "model input dim {} does not match feature dim {}",
                self.model.input_dim,
                self.features.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn frame_period(&self) -> f64 {
        self.features.frame_period()
    }

    /// Hop length in frames.
    pub fn latency_frames(&self) -> Result<usize> {
        let n = whole_frames(self.latency, self.frame_period(), "latency")?;
        if n == 0 {
            return Err(Error::config("latency shorter than one frame"));
        }
        Ok(n)
    }

    /// Buffer capacity in frames; `None` when unbounded.
    pub fn buffer_frames(&self) -> Result<Option<usize>> {
        match self.buffer {
            BufferSize::Seconds(b) => whole_frames(b, self.frame_period(), "buffer").map(Some),
            BufferSize::Unbounded => Ok(None),
        }
    }
}

/// Appends `new_frames` and drops the oldest frames beyond `capacity`.
pub fn fifo_update<T>(fifo: &mut VecDeque<T>, new_frames: impl IntoIterator<Item = T>, capacity: Option<usize>) {
    fifo.extend(new_frames);
    if let Some(cap) = capacity {
        while fifo.len() > cap {
            fifo.pop_front();
        }
    }
}

/// Multiply-accumulate counts of one pipeline step, by component. Attention
/// terms are counted dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    pub encoder_projection: u64,
    pub encoder_attention: u64,
    pub encoder_dense: u64,
    pub eda: u64,
    pub attractor_decoder: u64,
    pub centroid_decoder: u64,
    pub clustering: u64,
    pub posteriors: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.encoder_projection
            + self.encoder_attention
            + self.encoder_dense
            + self.eda
            + self.attractor_decoder
            + self.centroid_decoder
            + self.clustering
            + self.posteriors
    }
}

/// Closed-form MAC count of one step over `context_frames` frames with
/// `n_centroids` known speakers, assuming the worst case of `max_speakers`
/// attractors.
pub fn count_step_ops(model: &ModelConfig, context_frames: usize, n_centroids: usize) -> OpCount {
    let t = context_frames as u64;
    let d = model.d_model as u64;
    let f = model.ff_dim as u64;
    let s = model.max_speakers as u64;
    let c = n_centroids as u64;
    let layers = model.n_encoder_layers as u64;
    let dec_layers = model.n_decoder_layers_refine as u64;
    let mem = s + 1;

    let decoder = |queries: u64, memory: u64| -> u64 {
        if queries == 0 {
            return 0;
        }
        let self_attn = 4 * queries * d * d + 2 * queries * queries * d;
        let cross = 2 * queries * d * d + 2 * memory * d * d + 2 * queries * memory * d;
        let ff = 2 * queries * d * f;
        dec_layers * (self_attn + cross + ff)
    };

    OpCount {
        encoder_projection: t * model.input_dim as u64 * d,
        encoder_attention: layers * 2 * t * t * d,
        encoder_dense: layers * (4 * t * d * d + 2 * t * d * f),
        eda: 8 * t * d * d + mem * (4 * d * d + d),
        attractor_decoder: decoder(s, t),
        centroid_decoder: decoder(c, mem),
        clustering: s * (c + 1) * d + s * 6 * d * d,
        posteriors: s * t * d,
    }
}

/// Everything produced by one chunk.
#[derive(Debug, Clone)]
pub struct ChunkOutcome {
    pub attractors: AttractorSet,
    /// Refined attractors (rows), used for matching and GRU updates.
    pub refined: Matrix,
    pub probs: AssignmentProbs,
    pub assignment: Assignment,
    pub centroids_before: usize,
    /// `speakers x T` posteriors indexed by global speaker id.
    pub posteriors: Matrix,
}

/// Runs the per-chunk pipeline and updates `bank` in place.
pub fn process_chunk(
    model: &Model,
    bank: &mut CentroidBank,
    features: &Matrix,
    latency_frames: usize,
) -> Result<ChunkOutcome> {
    let mask = build_latency_mask(features.rows(), latency_frames);
    let emb = encode(features, &mask, &model.encoder)?;
    let attractors = eda_attractors(&emb, &model.eda);
    let before = bank.len();

    if attractors.count() == 0 {
        return Ok(ChunkOutcome {
            refined: attractors.vectors.clone(),
            attractors,
            probs: AssignmentProbs { p: Vec::new() },
            assignment: Assignment::default(),
            centroids_before: before,
            posteriors: Matrix::zeros(before, features.rows()),
        });
    }

    let refined = refine_attractors(&attractors.vectors, &emb, &model.attractor_decoder);
    let plus = with_ghost(&model.ghost, &refined);
    let refined_centroids = refine_centroids(&bank.as_matrix(), &plus, &model.centroid_decoder);
    let probs = assignment_probs(&refined_centroids, bank.h0(), &refined);
    let assignment = match_attractors(&probs);
    let local = speaker_posteriors(&attractors.vectors, &emb);
    let posteriors = permute_local(&local, &assignment, before)?;
    update_centroids(bank, &model.gru, &refined, &assignment)?;

    Ok(ChunkOutcome {
        attractors,
        refined,
        probs,
        assignment,
        centroids_before: before,
        posteriors,
    })
}

/// Stitched binary activity, `activity[speaker][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDiarization {
    pub frame_period: f64,
    pub activity: Vec<Vec<bool>>,
    frames: usize,
}

impl GlobalDiarization {
    pub fn new(frame_period: f64) -> Self {
        Self {
            frame_period,
            activity: Vec::new(),
            frames: 0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn speakers(&self) -> usize {
        self.activity.len()
    }

    fn append(&mut self, block: &EmittedBlock) {
        debug_assert_eq!(block.start_frame, self.frames);
        while self.activity.len() < block.activity.len() {
            self.activity.push(vec![false; self.frames]);
        }
        for (row, new) in self.activity.iter_mut().zip(&block.activity) {
            row.extend_from_slice(new);
        }
        self.frames += block.frames;
    }

    /// Runs of active frames per speaker, labelled `spk<id>`.
    pub fn to_segments(&self) -> SegmentList {
        let mut segments = Vec::new();
        for (s, row) in self.activity.iter().enumerate() {
            let mut start = None;
            for (t, &on) in row.iter().chain(std::iter::once(&false)).enumerate() {
                match (on, start) {
                    (true, None) => start = Some(t),
                    (false, Some(t0)) => {
                        segments.push(Segment {
                            speaker: format!("spk{s}"),
                            start: t0 as f64 * self.frame_period,
                            end: t as f64 * self.frame_period,
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        SegmentList { segments }
    }

    pub fn to_rttm_records(&self, file_id: &str) -> Vec<RttmRecord> {
        self.to_segments()
            .segments
            .into_iter()
            .map(|s| RttmRecord {
                file_id: file_id.to_string(),
                onset: s.start,
                duration: s.end - s.start,
                speaker: s.speaker,
            })
            .collect()
    }
}

/// Newly emitted frames. `activity` has one row per speaker known at
/// emission time, each `frames` long.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedBlock {
    pub start_frame: usize,
    pub frames: usize,
    pub activity: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub index: usize,
    pub context_frames: usize,
    pub attractors: usize,
    pub centroids_before: usize,
    pub centroids_after: usize,
    pub ops: OpCount,
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct Session {
    cfg: StreamConfig,
    model: Arc<Model>,
    featurizer: StreamingFeaturizer,
    fifo: VecDeque<Vec<f32>>,
    bank: CentroidBank,
    emitted: GlobalDiarization,
    latency_frames: usize,
    buffer_frames: Option<usize>,
    pending: usize,
    steps: Vec<StepReport>,
    finalized: bool,
}

impl Session {
    pub fn new(model: Arc<Model>, cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        if model.config != cfg.model {
            return Err(Error::config("weights were built for a different model configuration"));
        }
        let latency_frames = cfg.latency_frames()?;
        let buffer_frames = cfg.buffer_frames()?;
        Ok(Self {
            featurizer: StreamingFeaturizer::new(&cfg.features)?,
            fifo: VecDeque::new(),
            bank: CentroidBank::new(model.h0.clone()),
            emitted: GlobalDiarization::new(cfg.frame_period()),
            latency_frames,
            buffer_frames,
            pending: 0,
            steps: Vec::new(),
            finalized: false,
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn latency_frames(&self) -> usize {
        self.latency_frames
    }

    pub fn buffer_frames(&self) -> Option<usize> {
        self.buffer_frames
    }

    pub fn fifo_len(&self) -> usize {
        self.fifo.len()
    }

    pub fn bank(&self) -> &CentroidBank {
        &self.bank
    }

    pub fn emitted(&self) -> &GlobalDiarization {
        &self.emitted
    }

    /// Frames emitted so far.
    pub fn clock(&self) -> usize {
        self.emitted.frames()
    }

    pub fn steps(&self) -> &[StepReport] {
        &self.steps
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Feeds mono samples at the configured rate.
    pub fn push_audio(&mut self, samples: &[f32]) -> Result<Vec<EmittedBlock>> {
        if self.finalized {
            return Err(Error::SessionFinalized);
        }
        let frames = self.featurizer.push(samples);
        self.push_frames(frames)
    }

    /// Feeds already computed feature frames, bypassing the audio frontend.
    pub fn push_features(&mut self, frames: Vec<Vec<f32>>) -> Result<Vec<EmittedBlock>> {
        if self.finalized {
            return Err(Error::SessionFinalized);
        }
        self.push_frames(frames)
    }

    fn push_frames(&mut self, frames: Vec<Vec<f32>>) -> Result<Vec<EmittedBlock>> {
        let dim = self.cfg.features.feature_dim();
        let mut out = Vec::new();
        for frame in frames {
            if frame.len() != dim {
                return Err(Error::contract(format!(
                    "feature frame has {} dims, expected {dim}",
                    frame.len()
                )));
            }
            fifo_update(&mut self.fifo, std::iter::once(frame), self.buffer_frames);
            self.pending += 1;
            if self.pending == self.latency_frames {
                out.push(self.step(self.latency_frames)?);
                self.pending = 0;
            }
        }
        Ok(out)
    }

    /// Releases the featurizer tail, zero-pads a final partial hop, and emits
    /// the remaining frames truncated to the true stream length. Calling it
    /// again returns nothing.
    pub fn finalize(&mut self) -> Result<Vec<EmittedBlock>> {
        if self.finalized {
            return Ok(Vec::new());
        }
        let tail = self.featurizer.flush();
        let mut out = self.push_frames(tail)?;
        if self.pending > 0 {
            let dim = self.cfg.features.feature_dim();
            let pad = self.latency_frames - self.pending;
            fifo_update(&mut self.fifo, (0..pad).map(|_| vec![0.0; dim]), self.buffer_frames);
            out.push(self.step(self.pending)?);
            self.pending = 0;
        }
        self.finalized = true;
        Ok(out)
    }

    /// One pipeline step over the current FIFO; emits the first `valid`
    /// frames of the innovation.
    fn step(&mut self, valid: usize) -> Result<EmittedBlock> {
        let started = Instant::now();
        let context = self.fifo.len();
        let ops = count_step_ops(&self.cfg.model, context, self.bank.len());
        let chunk = Matrix::from_rows(self.fifo.make_contiguous(), self.cfg.features.feature_dim());
        let outcome = process_chunk(&self.model, &mut self.bank, &chunk, self.latency_frames)?;

        let innovation_start = context - self.latency_frames.min(context);
        let activity: Vec<Vec<bool>> = (0..self.bank.len())
            .map(|s| {
                (innovation_start..innovation_start + valid)
                    .map(|t| s < outcome.posteriors.rows() && outcome.posteriors.get(s, t) > ACTIVITY_THRESHOLD)
                    .collect()
            })
            .collect();
        let block = EmittedBlock {
            start_frame: self.emitted.frames(),
            frames: valid,
            activity,
        };
        self.emitted.append(&block);
        self.steps.push(StepReport {
            index: self.steps.len(),
            context_frames: context,
            attractors: outcome.attractors.count(),
            centroids_before: outcome.centroids_before,
            centroids_after: self.bank.len(),
            ops,
            elapsed: started.elapsed(),
        });
        Ok(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::weights::random_weights;

    fn tiny_stream(latency: f64, buffer: BufferSize) -> (Arc<Model>, StreamConfig) {
        let features = FeatureConfig {
            n_mels: 4,
            context: 1,
            ..FeatureConfig::default()
        };
        let model = ModelConfig {
            input_dim: features.feature_dim(),
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            ff_dim: 16,
            ..ModelConfig::default()
        };
        let m = Model::from_bundle(&random_weights(&model, 5).unwrap()).unwrap();
        let cfg = StreamConfig {
            latency,
            buffer,
            model,
            features,
        };
        (Arc::new(m), cfg)
    }

    fn noise(n: usize, seed: u32) -> Vec<f32> {
        let mut x = seed.wrapping_mul(2654435761).wrapping_add(1);
        (0..n)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 17;
                x ^= x << 5;
                (x as f32 / u32::MAX as f32 - 0.5) * 0.2
            })
            .collect()
    }

    #[test]
    fn config_rules() {
        let (_, cfg) = tiny_stream(1.0, BufferSize::Seconds(0.5));
        assert!(cfg.validate().is_err());
        let (_, cfg) = tiny_stream(1.0, BufferSize::Seconds(10.0));
        assert_eq!(cfg.latency_frames().unwrap(), 10);
        assert_eq!(cfg.buffer_frames().unwrap(), Some(100));
        let (_, cfg) = tiny_stream(0.15, BufferSize::Seconds(1.0));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn new_session_is_empty() {
        let (m, cfg) = tiny_stream(1.0, BufferSize::Seconds(2.0));
        let s = Session::new(m.clone(), cfg.clone()).unwrap();
        assert_eq!(s.clock(), 0);
        assert_eq!(s.bank().len(), 0);
        assert_eq!(s.fifo_len(), 0);

        let mut other = cfg;
        other.model.max_speakers = 3;
        assert!(Session::new(m, other).is_err());
    }

    #[test]
    fn fifo_behaviour() {
        let mut f: VecDeque<u32> = (0..100).collect();
        fifo_update(&mut f, 100..110, Some(100));
        assert_eq!(f.len(), 100);
        assert_eq!(f[0], 10);

        let mut f: VecDeque<u32> = VecDeque::new();
        fifo_update(&mut f, 0..5, Some(100));
        assert_eq!(f.len(), 5);

        let mut f: VecDeque<u32> = (0..10).collect();
        fifo_update(&mut f, 10..20, Some(10));
        assert_eq!(f.iter().copied().collect::<Vec<_>>(), (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn short_audio_emits_nothing_until_finalize() {
        let (m, cfg) = tiny_stream(1.0, BufferSize::Seconds(2.0));
        let mut s = Session::new(m, cfg).unwrap();
        assert!(s.push_audio(&noise(4000, 1)).unwrap().is_empty());
        let tail = s.finalize().unwrap();
        assert_eq!(tail.len(), 1);
        assert_eq!(tail[0].frames, 5);
        assert!(s.finalize().unwrap().is_empty());
        assert!(matches!(s.push_audio(&[0.0]), Err(Error::SessionFinalized)));
    }

    #[test]
    fn step_cadence_and_coverage() {
        let (m, cfg) = tiny_stream(1.0, BufferSize::Seconds(3.0));
        let mut s = Session::new(m, cfg).unwrap();
        let audio = noise(8000 * 6, 2);
        let blocks = s.push_audio(&audio).unwrap();
        assert_eq!(blocks.len(), 6);
        assert_eq!(s.clock(), 60);
        assert!(s.finalize().unwrap().is_empty());
        assert!(s.steps().iter().all(|st| st.context_frames <= 30));
        assert_eq!(s.steps()[0].context_frames, 10);
        assert_eq!(s.steps()[5].context_frames, 30);
    }

    #[test]
    fn tail_truncated_to_true_length() {
        // 0.55 s beyond 2 s
        let (m, cfg) = tiny_stream(1.0, BufferSize::Seconds(1.0));
        let mut s = Session::new(m, cfg).unwrap();
        s.push_audio(&noise(8000 * 2 + 4400, 3)).unwrap();
        let tail = s.finalize().unwrap();
        let n: usize = tail.iter().map(|b| b.frames).sum();
        assert!((5..=6).contains(&n), "{n}");
        assert_eq!(s.clock(), 20 + n);
    }

    #[test]
    fn buffer_equal_latency_keeps_only_innovation() {
        let (m, cfg) = tiny_stream(1.0, BufferSize::Seconds(1.0));
        let mut s = Session::new(m, cfg).unwrap();
        s.push_audio(&noise(8000 * 4, 4)).unwrap();
        assert!(s.steps().iter().all(|st| st.context_frames == 10));
    }

    #[test]
    fn op_count_formula() {
        let cfg = ModelConfig::default();
        let a = count_step_ops(&cfg, 50, 2);
        assert_eq!(a, count_step_ops(&cfg, 50, 2));
        let b = count_step_ops(&cfg, 100, 2);
        assert_eq!(b.encoder_attention, 4 * a.encoder_attention);
        assert!(count_step_ops(&cfg, 50, 3).total() > a.total());
    }

    #[test]
    fn segments_from_activity() {
        let mut g = GlobalDiarization::new(0.1);
        g.append(&EmittedBlock {
            start_frame: 0,
            frames: 4,
            activity: vec![vec![true, true, false, true]],
        });
        g.append(&EmittedBlock {
            start_frame: 4,
            frames: 2,
            activity: vec![vec![true, false], vec![false, true]],
        });
        assert_eq!(g.activity[1], vec![false, false, false, false, false, true]);
        let segs = g.to_segments().segments;
        assert_eq!(segs.len(), 3);
        assert!((segs[1].start - 0.3).abs() < 1e-12 && (segs[1].end - 0.5).abs() < 1e-12);
        assert_eq!(segs[2].speaker, "spk1");
    }
}
