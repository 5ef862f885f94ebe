//! Diarization error rate with a reference-boundary collar, optimal speaker
//! mapping and clustering accuracy.
//!
//! DER is computed with exact interval arithmetic: the timeline is cut at
//! every segment and collar boundary and each elementary interval is scored
//! by its active speaker counts. Overlapped speech is scored.

use std::collections::BTreeMap;

use crate::cluster::Assignment;
use crate::error::{Error, Result};
use crate::lsap::linear_sum_assignment;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentList {
    pub segments: Vec<Segment>,
}

impl SegmentList {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Sorted, deduplicated speaker labels.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.segments.iter().map(|s| s.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Checks `end > start` and finite times for every segment.
    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.start.is_finite() && s.end.is_finite() && s.end > s.start) {
                return Err(Error::contract(format!(
                    "segment {} [{}, {}] is not a positive-length interval",
                    s.speaker, s.start, s.end
                )));
            }
        }
        Ok(())
    }

    /// Merges overlapping or touching segments of the same speaker. Output is
    /// sorted by speaker then start.
    pub fn normalized(&self) -> SegmentList {
        let mut by_speaker: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for s in &self.segments {
            by_speaker.entry(&s.speaker).or_default().push((s.start, s.end));
        }
        let mut segments = Vec::with_capacity(self.segments.len());
        for (spk, mut iv) in by_speaker {
            for (start, end) in merge_intervals(&mut iv) {
                segments.push(Segment { speaker: spk.to_string(), start, end });
            }
        }
        SegmentList { segments }
    }

    /// Total duration of the union over all speakers, overlaps counted once
    /// per speaker.
    pub fn total_speech(&self) -> f64 {
        self.normalized().segments.iter().map(|s| s.end - s.start).sum()
    }
}

fn merge_intervals(iv: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for &(s, e) in iv.iter() {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerBreakdown {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub scored_speech: f64,
    pub der: f64,
}

impl DerBreakdown {
    /// Sums component durations (e.g. across files) and recomputes `der`.
    pub fn accumulate(parts: &[DerBreakdown]) -> Result<DerBreakdown> {
        let mut out = DerBreakdown::default();
        for p in parts {
            out.miss += p.miss;
            out.false_alarm += p.false_alarm;
            out.confusion += p.confusion;
            out.scored_speech += p.scored_speech;
        }
        if out.scored_speech <= 0.0 {
            return Err(Error::EmptyReference);
        }
        out.der = (out.miss + out.false_alarm + out.confusion) / out.scored_speech;
        Ok(out)
    }
}

/// Per-speaker merged intervals with speaker labels in sorted order.
struct Tracks {
    names: Vec<String>,
    intervals: Vec<Vec<(f64, f64)>>,
}

impl Tracks {
    fn new(list: &SegmentList) -> Self {
        let norm = list.normalized();
        let mut names = Vec::new();
        let mut intervals: Vec<Vec<(f64, f64)>> = Vec::new();
        for s in norm.segments {
            if names.last() != Some(&s.speaker) {
                names.push(s.speaker.clone());
                intervals.push(Vec::new());
            }
            intervals.last_mut().unwrap().push((s.start, s.end));
        }
        Self { names, intervals }
    }
}

/// Elementary interval of the timeline with its active speakers.
struct Piece {
    dur: f64,
    refs: Vec<usize>,
    hyps: Vec<usize>,
}

/// Cuts the timeline at all boundaries and returns the scored pieces, i.e.
/// those not within `collar` of a reference boundary.
fn scored_pieces(reference: &Tracks, hyp: &Tracks, collar: f64) -> Vec<Piece> {
    let mut ref_bounds: Vec<f64> = reference
        .intervals
        .iter()
        .flatten()
        .flat_map(|&(s, e)| [s, e])
        .collect();
    ref_bounds.sort_by(f64::total_cmp);

    let mut cuts: Vec<f64> = ref_bounds.clone();
    cuts.extend(hyp.intervals.iter().flatten().flat_map(|&(s, e)| [s, e]));
    if collar > 0.0 {
        cuts.extend(ref_bounds.iter().flat_map(|&b| [b - collar, b + collar]));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let near_boundary = |m: f64| -> bool {
        if collar <= 0.0 {
            return false;
        }
        let i = ref_bounds.partition_point(|&b| b < m);
        let close = |j: usize| ref_bounds.get(j).is_some_and(|&b| (b - m).abs() < collar);
        close(i) || (i > 0 && close(i - 1))
    };

    let mut ref_cursor = vec![0usize; reference.intervals.len()];
    let mut hyp_cursor = vec![0usize; hyp.intervals.len()];
    let active = |tracks: &[Vec<(f64, f64)>], cursor: &mut [usize], m: f64| -> Vec<usize> {
        let mut on = Vec::new();
        for (k, iv) in tracks.iter().enumerate() {
            while cursor[k] < iv.len() && iv[cursor[k]].1 <= m {
                cursor[k] += 1;
            }
            if cursor[k] < iv.len() && iv[cursor[k]].0 <= m {
                on.push(k);
            }
        }
        on
    };

    let mut pieces = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dur = b - a;
        if dur <= 0.0 {
            continue;
        }
        let m = 0.5 * (a + b);
        let refs = active(&reference.intervals, &mut ref_cursor, m);
        let hyps = active(&hyp.intervals, &mut hyp_cursor, m);
        if near_boundary(m) || (refs.is_empty() && hyps.is_empty()) {
            continue;
        }
        pieces.push(Piece { dur, refs, hyps });
    }
    pieces
}

/// Maximum-overlap one-to-one mapping over the given pieces; pairs with zero
/// overlap are dropped. Returns `map[ref] = Some(hyp)`.
fn map_speakers(pieces: &[Piece], n_ref: usize, n_hyp: usize) -> Vec<Option<usize>> {
    if n_ref == 0 || n_hyp == 0 {
        return vec![None; n_ref];
    }
    let mut overlap = vec![0.0f64; n_ref * n_hyp];
    for p in pieces {
        for &r in &p.refs {
            for &h in &p.hyps {
                overlap[r * n_hyp + h] += p.dur;
            }
        }
    }
    let cost: Vec<f64> = overlap.iter().map(|&o| -o).collect();
    linear_sum_assignment(&cost, n_ref, n_hyp)
        .into_iter()
        .enumerate()
        .map(|(r, h)| h.filter(|&h| overlap[r * n_hyp + h] > 0.0))
        .collect()
}

/// Optimal reference-to-hypothesis speaker mapping by total overlap, with no
/// collar. Speakers without a positive-overlap partner are left out.
pub fn optimal_speaker_mapping(reference: &SegmentList, hyp: &SegmentList) -> BTreeMap<String, String> {
    let (r, h) = (Tracks::new(reference), Tracks::new(hyp));
    let pieces = scored_pieces(&r, &h, 0.0);
    map_speakers(&pieces, r.names.len(), h.names.len())
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (r.names[i].clone(), h.names[j].clone())))
        .collect()
}

/// Diarization error rate. Regions within `collar` seconds of any reference
/// segment boundary are not scored. The speaker mapping maximizes overlap
/// inside the scored regions.
pub fn der(reference: &SegmentList, hyp: &SegmentList, collar: f64) -> Result<DerBreakdown> {
    if !(collar >= 0.0 && collar.is_finite()) {
        return Err(Error::config(format!("collar must be a finite non-negative number, got {collar}")));
    }
    reference.validate()?;
    hyp.validate()?;
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (r, h) = (Tracks::new(reference), Tracks::new(hyp));
    let pieces = scored_pieces(&r, &h, collar);
    let mapping = map_speakers(&pieces, r.names.len(), h.names.len());

    let mut out = DerBreakdown::default();
    for p in &pieces {
        let (nr, nh) = (p.refs.len(), p.hyps.len());
        let correct = p
            .refs
            .iter()
            .filter(|&&i| mapping[i].is_some_and(|j| p.hyps.contains(&j)))
            .count();
        out.scored_speech += p.dur * nr as f64;
        out.miss += p.dur * nr.saturating_sub(nh) as f64;
        out.false_alarm += p.dur * nh.saturating_sub(nr) as f64;
        out.confusion += p.dur * (nr.min(nh) - correct) as f64;
    }
    DerBreakdown::accumulate(&[out])
}

/// Fraction of attractors, over all chunks, whose predicted target equals
/// the reference target.
pub fn clustering_accuracy(predicted: &[Assignment], reference: &[Assignment]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::contract(format!(
            "{} predicted chunks, {} reference chunks",
            predicted.len(),
            reference.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (n, (p, r)) in predicted.iter().zip(reference).enumerate() {
        if p.len() != r.len() {
            return Err(Error::contract(format!(
                "chunk {n}: {} predicted attractors, {} reference attractors",
                p.len(),
                r.len()
            )));
        }
        correct += p.targets.iter().zip(&r.targets).filter(|(a, b)| a == b).count();
        total += p.len();
    }
    if total == 0 {
        return Err(Error::contract("no attractors to score"));
    }
    Ok(correct as f64 / total as f64)
}
