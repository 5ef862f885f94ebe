//! RTTM `SPEAKER` lines.
//!
//! Times are written with exactly three decimals, rounded half away from
//! zero, so `parse_rttm(write_rttm(x))` is a fixed point for records whose
//! times are already whole milliseconds.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{Segment, SegmentList};

#[derive(Debug, Clone, PartialEq)]
pub struct RttmRecord {
    pub file_id: String,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmRecord {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

fn parse_time(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Rttm {
        line,
        message: format!("{what} `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Rttm { line, message: format!("{what} `{field}` is not finite") });
    }
    Ok(v)
}

/// Parses `SPEAKER` lines. Blank lines, lines starting with `#` or `;` and
/// lines of other RTTM types are skipped. The trailing `<NA>` field may be
/// omitted, giving 9 fields.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() != 9 && fields.len() != 10 {
            return Err(Error::Rttm {
                line,
                message: format!("expected 10 fields, found {}", fields.len()),
            });
        }
        let onset = parse_time(fields[3], "onset", line)?;
        let duration = parse_time(fields[4], "duration", line)?;
        if onset < 0.0 {
            return Err(Error::Rttm { line, message: format!("negative onset {onset}") });
        }
        if duration <= 0.0 {
            return Err(Error::Rttm { line, message: format!("non-positive duration {duration}") });
        }
        out.push(RttmRecord {
            file_id: fields[1].to_string(),
            onset,
            duration,
            speaker: fields[7].to_string(),
        });
    }
    Ok(out)
}

fn millis(x: f64) -> i64 {
    (x * 1000.0).round() as i64
}

fn fmt_millis(out: &mut String, ms: i64) {
    let sign = if ms < 0 { "-" } else { "" };
    let a = ms.unsigned_abs();
    let _ = write!(out, "{sign}{}.{:03}", a / 1000, a % 1000);
}

/// One `SPEAKER` line per record, sorted by onset then speaker.
pub fn write_rttm(records: &[RttmRecord]) -> String {
    let mut keyed: Vec<(i64, i64, &RttmRecord)> =
        records.iter().map(|r| (millis(r.onset), millis(r.duration), r)).collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| a.2.speaker.cmp(&b.2.speaker))
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.file_id.cmp(&b.2.file_id))
    });
    let mut out = String::new();
    for (onset, dur, r) in keyed {
        let _ = write!(out, "SPEAKER {} 1 ", r.file_id);
        fmt_millis(&mut out, onset);
        out.push(' ');
        fmt_millis(&mut out, dur);
        let _ = writeln!(out, " <NA> <NA> {} <NA> <NA>", r.speaker);
    }
    out
}

/// Records of one file as a segment list.
pub fn records_to_segments<'a>(records: impl IntoIterator<Item = &'a RttmRecord>) -> SegmentList {
    SegmentList::new(
        records
            .into_iter()
            .map(|r| Segment { speaker: r.speaker.clone(), start: r.onset, end: r.end() })
            .collect(),
    )
}

/// Segment list as records for `file_id`, sorted like [`write_rttm`] output.
pub fn segments_to_records(list: &SegmentList, file_id: &str) -> Vec<RttmRecord> {
    let mut out: Vec<RttmRecord> = list
        .segments
        .iter()
        .map(|s| RttmRecord {
            file_id: file_id.to_string(),
            onset: s.start,
            duration: s.end - s.start,
            speaker: s.speaker.clone(),
        })
        .collect();
    out.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.speaker.cmp(&b.speaker))
    });
    out
}
