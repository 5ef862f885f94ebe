//! Synthetic conversations: alternating turns of speaker-specific coloured
//! noise with controlled overlap and silence.
//!
//! Each speaker is white noise through a two-pole resonator at its own
//! centre frequency. Turn transitions are chosen by a controller that
//! tracks the overlap and silence accumulated so far against their targets,
//! so the measured fractions converge on long recordings. Overlap only
//! happens between consecutive turns and is always shorter than half of
//! either turn. Silence is exact zeros.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{Segment, SegmentList};

pub const SAMPLE_RATE: u32 = 8000;

/// Length of the linear fade at both ends of a turn.
const RAMP_SECONDS: f64 = 0.01;
const MAX_OVERLAP_SHARE: f64 = 0.45;
const TARGET_RMS: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_speakers: usize,
    /// Seconds.
    pub duration: f64,
    /// Mean turn length in seconds.
    pub mean_turn: f64,
    /// Target fraction of the recording with two speakers active.
    pub overlap_ratio: f64,
    /// Target fraction of the recording with nobody active.
    pub silence_ratio: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            duration: 60.0,
            mean_turn: 3.0,
            overlap_ratio: 0.1,
            silence_ratio: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::config("n_speakers must be at least 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration must be positive"));
        }
        if !(self.mean_turn >= 0.1 && self.mean_turn.is_finite()) {
            return Err(Error::config("mean_turn must be at least 0.1 s"));
        }
        for (name, r) in [("overlap_ratio", self.overlap_ratio), ("silence_ratio", self.silence_ratio)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        if self.overlap_ratio + self.silence_ratio >= 1.0 {
            return Err(Error::config("overlap_ratio + silence_ratio must be below 1"));
        }
        if self.overlap_ratio > 0.3 {
            return Err(Error::config("overlap_ratio above 0.3 is not reachable with pairwise turn overlap"));
        }
        if self.n_speakers == 1 && self.overlap_ratio > 0.0 {
            return Err(Error::config("a single speaker cannot overlap with itself"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    /// Speakers are named `spk0`, `spk1`, ...
    pub reference: SegmentList,
}

#[derive(Debug, Clone, Copy)]
struct Turn {
    speaker: usize,
    start: usize,
    end: usize,
}

fn centre_frequency(speaker: usize, n: usize) -> f64 {
    let lo = 250.0_f64;
    let hi = 3200.0_f64;
    if n == 1 {
        return 800.0;
    }
    lo * (hi / lo).powf(speaker as f64 / (n - 1) as f64)
}

fn plan_turns(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Turn> {
    let sr = SAMPLE_RATE as f64;
    let total = (cfg.duration * sr).round() as usize;
    let min_turn = (0.25 * sr) as usize;
    let mut turns: Vec<Turn> = Vec::new();

    let mut timeline_end = 0usize;
    let mut overlap = 0usize;
    let mut silence = 0usize;
    let mut prev: Option<Turn> = None;

    while timeline_end < total {
        let len = ((cfg.mean_turn * rng.random_range(0.5..1.5)) * sr).round() as usize;
        let len = len.max(min_turn);
        let speaker = match prev {
            None => rng.random_range(0..cfg.n_speakers),
            Some(_) if cfg.n_speakers == 1 => 0,
            Some(p) => {
                let k = rng.random_range(0..cfg.n_speakers - 1);
                if k >= p.speaker {
                    k + 1
                } else {
                    k
                }
            }
        };

        let horizon = timeline_end + len;
        let want_sil = cfg.silence_ratio * horizon as f64 - silence as f64;
        let want_ovl = cfg.overlap_ratio * horizon as f64 - overlap as f64;
        let start = match prev {
            Some(p) if want_ovl > 0.0 && want_ovl / cfg.overlap_ratio.max(1e-9) >= want_sil / cfg.silence_ratio.max(1e-9) => {
                let cap = (MAX_OVERLAP_SHARE * len.min(p.end - p.start) as f64) as usize;
                let o = ((want_ovl / (1.0 + cfg.overlap_ratio)) as usize).min(cap);
                overlap += o;
                p.end - o
            }
            _ if want_sil > 0.0 => {
                let cap = (3.0 * cfg.mean_turn * sr) as usize;
                let g = ((want_sil / (1.0 - cfg.silence_ratio)) as usize).min(cap);
                silence += g.min(total.saturating_sub(timeline_end));
                timeline_end + g
            }
            _ => timeline_end,
        };
        if start >= total {
            break;
        }
        let end = (start + len).min(total);
        let turn = Turn { speaker, start, end };
        turns.push(turn);
        timeline_end = end;
        prev = Some(turn);
    }
    turns
}

fn render_turn(turn: &Turn, cfg: &SimConfig, gains: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = turn.end - turn.start;
    let w = 2.0 * std::f64::consts::PI * centre_frequency(turn.speaker, cfg.n_speakers) / SAMPLE_RATE as f64;
    let r = 0.97f64;
    let (a1, a2) = (2.0 * r * w.cos(), -r * r);
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let y = x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        out.push(y as f32);
    }
    let energy: f64 = out.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n.max(1) as f64;
    let scale = TARGET_RMS * gains[turn.speaker] / (energy.sqrt() as f32).max(1e-12);
    let ramp = ((RAMP_SECONDS * SAMPLE_RATE as f64) as usize).min(n / 2).max(1);
    for (i, v) in out.iter_mut().enumerate() {
        let edge = i.min(n - 1 - i);
        let fade = if edge < ramp { (edge + 1) as f32 / (ramp + 1) as f32 } else { 1.0 };
        *v *= scale * fade;
    }
    out
}

/// Generates audio at [`SAMPLE_RATE`] and its reference segmentation.
/// Deterministic in `cfg.seed`.
pub fn simulate_conversation(cfg: &SimConfig) -> Result<Conversation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gains: Vec<f32> = (0..cfg.n_speakers).map(|_| rng.random_range(0.7..1.3)).collect();
    let turns = plan_turns(cfg, &mut rng);

    let total = (cfg.duration * SAMPLE_RATE as f64).round() as usize;
    let mut audio = vec![0.0f32; total];
    let sr = SAMPLE_RATE as f64;
    let mut segments = Vec::with_capacity(turns.len());
    for t in &turns {
        for (dst, v) in audio[t.start..t.end].iter_mut().zip(render_turn(t, cfg, &gains, &mut rng)) {
            *dst += v;
        }
        segments.push(Segment {
            speaker: format!("spk{}", t.speaker),
            start: t.start as f64 / sr,
            end: t.end as f64 / sr,
        });
    }
    Ok(Conversation {
        audio,
        sample_rate: SAMPLE_RATE,
        reference: SegmentList::new(segments).normalized(),
    })
}
