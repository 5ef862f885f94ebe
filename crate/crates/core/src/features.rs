//! Log-mel frontend: framing, Hann-windowed power spectrum, HTK-scale
//! triangular filterbank, log compression, context splicing and frame
//! subsampling.
//!
//! [`StreamingFeaturizer`] produces exactly the same frames as
//! [`featurize`] on the whole signal, however the input is split.

use std::collections::VecDeque;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    /// Analysis window length in seconds.
    pub window: f64,
    /// Hop between analysis windows in seconds.
    pub hop: f64,
    /// Frames of context spliced on each side.
    pub context: usize,
    pub subsample: usize,
    pub log_floor: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            n_mels: 23,
            window: 0.025,
            hop: 0.010,
            context: 7,
            subsample: 10,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !(self.hop > 0.0 && self.hop <= self.window) {
            return Err(Error::config("require 0 < hop <= window"));
        }
        if self.subsample == 0 {
            return Err(Error::config("subsample must be at least 1"));
        }
        if self.hop_samples() == 0 {
            return Err(Error::config("hop shorter than one sample"));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop * self.sample_rate as f64).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    /// Spliced feature dimension, `n_mels * (2 * context + 1)`.
    pub fn feature_dim(&self) -> usize {
        self.n_mels * (2 * self.context + 1)
    }

    /// Seconds between consecutive output frames.
    pub fn frame_period(&self) -> f64 {
        self.hop_samples() as f64 / self.sample_rate as f64 * self.subsample as f64
    }

    /// Number of mel frames for `len` samples.
    pub fn mel_frame_count(&self, len: usize) -> usize {
        let w = self.window_samples();
        if len < w {
            0
        } else {
            (len - w) / self.hop_samples() + 1
        }
    }
}

/// Frame-major spliced features: row `t` is the feature vector of frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub data: Matrix,
    pub frame_period: f64,
    pub start_time: f64,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` triangular filters spanning
/// 0 Hz to Nyquist.
pub fn mel_centers(cfg: &FeatureConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular HTK filterbank with unit peaks, `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Matrix {
    let n_fft = cfg.fft_size();
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(m, k, w as f32);
        }
    }
    fb
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Reusable per-window analysis state.
#[derive(Clone)]
pub struct MelFrontend {
    cfg: FeatureConfig,
    window: Vec<f32>,
    filterbank: Matrix,
    fft: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend").field("cfg", &self.cfg).finish()
    }
}

impl MelFrontend {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size());
        Ok(Self {
            cfg: cfg.clone(),
            window: hann(cfg.window_samples()),
            filterbank: mel_filterbank(cfg),
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Log-mel vector of one analysis window (`samples.len() == window_samples`).
    pub fn frame(&self, samples: &[f32]) -> Vec<f32> {
        debug_assert_eq!(samples.len(), self.window.len());
        let n_fft = self.cfg.fft_size();
        let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
        for (b, (s, w)) in buf.iter_mut().zip(samples.iter().zip(&self.window)) {
            b.re = s * w;
        }
        self.fft.process(&mut buf);
        let power: Vec<f32> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        self.filterbank
            .iter_rows()
            .map(|filt| {
                let e: f32 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.cfg.log_floor).ln()
            })
            .collect()
    }
}

/// Log-mel spectrogram, one row per analysis frame (`F x n_mels`).
/// Input shorter than one window yields zero frames.
pub fn logmel(pcm: &[f32], cfg: &FeatureConfig) -> Result<Matrix> {
    let fe = MelFrontend::new(cfg)?;
    let n = cfg.mel_frame_count(pcm.len());
    let (w, h) = (cfg.window_samples(), cfg.hop_samples());
    let mut out = Matrix::zeros(n, cfg.n_mels);
    for f in 0..n {
        let v = fe.frame(&pcm[f * h..f * h + w]);
        out.row_mut(f).copy_from_slice(&v);
    }
    Ok(out)
}

fn splice_frame<'a>(
    get: impl Fn(usize) -> &'a [f32],
    center: usize,
    last: usize,
    context: usize,
    out: &mut Vec<f32>,
) {
    for j in 0..=2 * context {
        let idx = (center + j).saturating_sub(context).min(last);
        out.extend_from_slice(get(idx));
    }
}

/// Splices `2 * context + 1` neighbouring frames (edges replicated) and keeps
/// every `subsample`-th one. `T = ceil(F / subsample)`.
pub fn splice_subsample(mels: &Matrix, cfg: &FeatureConfig) -> FeatureSequence {
    let f = mels.rows();
    let t_out = f.div_ceil(cfg.subsample);
    let mut data = Vec::with_capacity(t_out * cfg.feature_dim());
    for t in 0..t_out {
        splice_frame(|i| mels.row(i), t * cfg.subsample, f - 1, cfg.context, &mut data);
    }
    FeatureSequence {
        data: Matrix::from_vec(t_out, mels.cols() * (2 * cfg.context + 1), data),
        frame_period: cfg.frame_period(),
        start_time: 0.0,
    }
}

/// Whole-signal convenience: `splice_subsample(logmel(pcm))`.
pub fn featurize(pcm: &[f32], cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let mels = logmel(pcm, cfg)?;
    Ok(splice_subsample(&mels, cfg))
}

/// Incremental featurizer. An output frame is released once all of its
/// right context has been computed; [`StreamingFeaturizer::flush`] releases
/// the rest with right-edge replication.
#[derive(Debug, Clone)]
pub struct StreamingFeaturizer {
    fe: MelFrontend,
    /// Samples not yet fully consumed; `samples[0]` is absolute index `sample_base`.
    samples: Vec<f32>,
    sample_base: usize,
    /// Recent mel frames; `mels[0]` is absolute index `mel_base`.
    mels: VecDeque<Vec<f32>>,
    mel_base: usize,
    mel_count: usize,
    next_out: usize,
    flushed: bool,
}

impl StreamingFeaturizer {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        Ok(Self {
            fe: MelFrontend::new(cfg)?,
            samples: Vec::new(),
            sample_base: 0,
            mels: VecDeque::new(),
            mel_base: 0,
            mel_count: 0,
            next_out: 0,
            flushed: false,
        })
    }

    /// Number of output frames released so far.
    pub fn frames_emitted(&self) -> usize {
        self.next_out
    }

    pub fn push(&mut self, pcm: &[f32]) -> Vec<Vec<f32>> {
        if self.flushed {
            return Vec::new();
        }
        self.samples.extend_from_slice(pcm);
        let cfg = self.fe.config().clone();
        let (w, h) = (cfg.window_samples(), cfg.hop_samples());
        loop {
            let start = self.mel_count * h - self.sample_base;
            if start + w > self.samples.len() {
                break;
            }
            let v = self.fe.frame(&self.samples[start..start + w]);
            self.mels.push_back(v);
            self.mel_count += 1;
        }
        let consumed = (self.mel_count * h).saturating_sub(self.sample_base).min(self.samples.len());
        if consumed > 0 {
            self.samples.drain(..consumed);
            self.sample_base += consumed;
        }
        self.release(false)
    }

    /// Releases the remaining frames. Later pushes are ignored.
    pub fn flush(&mut self) -> Vec<Vec<f32>> {
        if self.flushed {
            return Vec::new();
        }
        let out = self.release(true);
        self.flushed = true;
        out
    }

    fn release(&mut self, at_end: bool) -> Vec<Vec<f32>> {
        let cfg = self.fe.config();
        let (s, c) = (cfg.subsample, cfg.context);
        let mut out = Vec::new();
        while self.next_out * s < self.mel_count {
            let center = self.next_out * s;
            if !at_end && center + c >= self.mel_count {
                break;
            }
            let mut frame = Vec::with_capacity(cfg.feature_dim());
            let mels = &self.mels;
            let base = self.mel_base;
            splice_frame(
                |i| mels[i - base].as_slice(),
                center,
                self.mel_count - 1,
                c,
                &mut frame,
            );
            out.push(frame);
            self.next_out += 1;
        }
        // Keep only the left context of the next output frame.
        let keep_from = (self.next_out * s).saturating_sub(c).min(self.mel_count);
        while self.mel_base < keep_from {
            self.mels.pop_front();
            self.mel_base += 1;
        }
        out
    }
}
