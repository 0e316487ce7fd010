//! Key estimation (Krumhansl–Schmuckler), windowed modulation tracking and
//! scale membership.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pitch::{pitch_histogram, Weighting};
use crate::score::{
    Key, MeasureSpan, Mode, Pitch, RationalDuration, Score, ScoreError, Spelling, Step,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("no notes in the selection")]
    EmptySelection,
    #[error("the score has {measures} measures, fewer than the window of {window}")]
    ScoreTooShort { measures: usize, window: usize },
    #[error("{0} must be at least 1")]
    InvalidParameter(&'static str),
}

/// Major and minor key profiles indexed by semitones above the tonic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyProfiles {
    #[serde(default = "default_profile_name")]
    pub name: String,
    pub major: [f64; 12],
    pub minor: [f64; 12],
}

fn default_profile_name() -> String {
    "custom".to_string()
}

impl KeyProfiles {
    /// Krumhansl & Kessler (1982) probe-tone ratings, as tabulated in
    /// Krumhansl, "Cognitive Foundations of Musical Pitch" (1990).
    pub fn krumhansl_kessler() -> Self {
        KeyProfiles {
            name: "krumhansl-kessler".to_string(),
            major: [
                6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
            ],
            minor: [
                6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
            ],
        }
    }

    /// Parses and validates a profile table. Each profile must be finite
    /// and not constant.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let profiles: KeyProfiles = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for (mode, values) in [("major", &profiles.major), ("minor", &profiles.minor)] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(format!("the {mode} profile contains a non-finite value"));
            }
            if values.iter().all(|v| *v == values[0]) {
                return Err(format!("the {mode} profile is constant"));
            }
        }
        Ok(profiles)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    fn profile(&self, mode: Mode) -> &[f64; 12] {
        match mode {
            Mode::Major => &self.major,
            Mode::Minor => &self.minor,
        }
    }
}

impl Default for KeyProfiles {
    fn default() -> Self {
        Self::krumhansl_kessler()
    }
}

/// Preferred tonic spelling: at most six accidentals, sharps on the
/// six-accidental ties (F♯ major, D♯ minor).
pub fn tonic_spelling(pitch_class: u8, mode: Mode) -> Spelling {
    use Step::*;
    let (step, alter) = match (mode, pitch_class % 12) {
        (Mode::Major, 0) => (C, 0),
        (Mode::Major, 1) => (D, -1),
        (Mode::Major, 2) => (D, 0),
        (Mode::Major, 3) => (E, -1),
        (Mode::Major, 4) => (E, 0),
        (Mode::Major, 5) => (F, 0),
        (Mode::Major, 6) => (F, 1),
        (Mode::Major, 7) => (G, 0),
        (Mode::Major, 8) => (A, -1),
        (Mode::Major, 9) => (A, 0),
        (Mode::Major, 10) => (B, -1),
        (Mode::Major, _) => (B, 0),
        (Mode::Minor, 0) => (C, 0),
        (Mode::Minor, 1) => (C, 1),
        (Mode::Minor, 2) => (D, 0),
        (Mode::Minor, 3) => (D, 1),
        (Mode::Minor, 4) => (E, 0),
        (Mode::Minor, 5) => (F, 0),
        (Mode::Minor, 6) => (F, 1),
        (Mode::Minor, 7) => (G, 0),
        (Mode::Minor, 8) => (G, 1),
        (Mode::Minor, 9) => (A, 0),
        (Mode::Minor, 10) => (B, -1),
        (Mode::Minor, _) => (B, 0),
    };
    Spelling::new(step, alter)
}

pub fn key_for(pitch_class: u8, mode: Mode) -> Key {
    Key::new(tonic_spelling(pitch_class, mode), mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedKey {
    pub key: Key,
    pub correlation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyEstimate {
    pub key: Key,
    pub correlation: f64,
    pub runner_up: Option<RankedKey>,
    /// The histogram had zero variance; the key is a fallback choice.
    pub degenerate: bool,
}

fn pearson(x: &[f64; 12], y: impl Fn(usize) -> f64) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = (0..12).map(&y).sum::<f64>() / 12.0;
    let (mut num, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, xi) in x.iter().enumerate() {
        let dx = xi - mx;
        let dy = y(i) - my;
        num += dx * dy;
        sx += dx * dx;
        sy += dy * dy;
    }
    num / (sx * sy).sqrt()
}

/// Correlations against all 24 rotated profiles, ordered by tonic pitch
/// class and then major before minor.
pub fn key_correlations(histogram: &[f64; 12], profiles: &KeyProfiles) -> Vec<RankedKey> {
    let mut out = Vec::with_capacity(24);
    for tonic in 0..12u8 {
        for mode in [Mode::Major, Mode::Minor] {
            let profile = profiles.profile(mode);
            let r = pearson(histogram, |pc| profile[(pc + 12 - tonic as usize) % 12]);
            out.push(RankedKey {
                key: key_for(tonic, mode),
                correlation: r,
            });
        }
    }
    out
}

/// Best-correlating key for a pitch-class histogram; `None` when the
/// histogram is empty.
pub fn estimate_from_histogram(
    histogram: &[f64; 12],
    profiles: &KeyProfiles,
) -> Option<KeyEstimate> {
    let total: f64 = histogram.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let flat = histogram.iter().all(|x| *x == histogram[0]);
    let sounding = histogram.iter().filter(|x| **x > 0.0).count();
    if flat || sounding == 1 {
        let pc = histogram.iter().position(|x| *x > 0.0)? as u8;
        return Some(KeyEstimate {
            key: key_for(pc, Mode::Major),
            correlation: 0.0,
            runner_up: None,
            degenerate: true,
        });
    }
    let ranked = key_correlations(histogram, profiles);
    let mut best: Option<RankedKey> = None;
    let mut second: Option<RankedKey> = None;
    for candidate in ranked {
        if best.is_none_or(|b| candidate.correlation > b.correlation) {
            second = best;
            best = Some(candidate);
        } else if second.is_none_or(|s| candidate.correlation > s.correlation) {
            second = Some(candidate);
        }
    }
    let best = best?;
    Some(KeyEstimate {
        key: best.key,
        correlation: best.correlation,
        runner_up: second,
        degenerate: false,
    })
}

fn histogram_f64(h: &[RationalDuration; 12]) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (o, v) in out.iter_mut().zip(h) {
        *o = v.to_f64();
    }
    out
}

pub fn estimate_key(s: &Score, span: MeasureSpan) -> Result<KeyEstimate, KeyError> {
    estimate_key_with(s, span, &KeyProfiles::default())
}

/// Duration-weighted Krumhansl–Schmuckler estimate over `span`.
pub fn estimate_key_with(
    s: &Score,
    span: MeasureSpan,
    profiles: &KeyProfiles,
) -> Result<KeyEstimate, KeyError> {
    let hist = pitch_histogram(s, span, Weighting::Duration)?;
    estimate_from_histogram(&histogram_f64(&hist), profiles).ok_or(KeyError::EmptySelection)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeySegment {
    pub start_measure: u32,
    pub end_measure: u32,
    pub key: KeyEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub start_measure: u32,
    pub end_measure: u32,
    pub estimate: Option<KeyEstimate>,
}

/// Hysteresis over a sequence of per-window keys. Returns the index of the
/// window that opens each segment. A segment opens once a key different from
/// the current one wins `persistence` consecutive windows; the segment starts
/// at the first window of that run.
pub fn hysteresis_runs(keys: &[Key], persistence: usize) -> Vec<usize> {
    let mut opens = Vec::new();
    let Some(first) = keys.first() else {
        return opens;
    };
    opens.push(0);
    let mut current = *first;
    let mut run: Option<(Key, usize, usize)> = None; // key, first window, length
    for (i, k) in keys.iter().enumerate().skip(1) {
        if *k == current {
            run = None;
            continue;
        }
        run = match run {
            Some((rk, start, len)) if rk == *k => Some((rk, start, len + 1)),
            _ => Some((*k, i, 1)),
        };
        if let Some((rk, start, len)) = run {
            if len >= persistence {
                opens.push(start);
                current = rk;
                run = None;
            }
        }
    }
    opens
}

/// Per-window estimates for windows of `window` measures, stride 1.
pub fn window_estimates(
    s: &Score,
    window: usize,
    profiles: &KeyProfiles,
) -> Result<Vec<WindowEstimate>, KeyError> {
    if window == 0 {
        return Err(KeyError::InvalidParameter("window"));
    }
    let indices = s.measure_indices();
    if indices.len() < window {
        return Err(KeyError::ScoreTooShort {
            measures: indices.len(),
            window,
        });
    }
    let spans: Vec<MeasureSpan> = indices
        .windows(window)
        .map(|w| MeasureSpan::new(w[0], w[window - 1]))
        .collect();
    spans
        .par_iter()
        .map(|span| {
            let estimate = match estimate_key_with(s, *span, profiles) {
                Ok(e) => Some(e),
                Err(KeyError::EmptySelection) => None,
                Err(e) => return Err(e),
            };
            Ok(WindowEstimate {
                start_measure: span.from,
                end_measure: span.to,
                estimate,
            })
        })
        .collect()
}

/// Key areas found by sliding a window over the score.
///
/// A segment boundary is placed at the middle measure of the first window
/// of a persistent run (`start + window / 2`), which is where the window's
/// content first tips toward the new key.
pub fn windowed_keys(
    s: &Score,
    window: usize,
    persistence: usize,
) -> Result<Vec<KeySegment>, KeyError> {
    windowed_keys_with(s, window, persistence, &KeyProfiles::default())
}

pub fn windowed_keys_with(
    s: &Score,
    window: usize,
    persistence: usize,
    profiles: &KeyProfiles,
) -> Result<Vec<KeySegment>, KeyError> {
    if persistence == 0 {
        return Err(KeyError::InvalidParameter("persistence"));
    }
    let windows = window_estimates(s, window, profiles)?;
    // empty windows inherit the previous estimate; leading ones the first
    let first_known = windows
        .iter()
        .find_map(|w| w.estimate)
        .ok_or(KeyError::EmptySelection)?;
    let mut filled = Vec::with_capacity(windows.len());
    let mut last = first_known;
    for w in &windows {
        if let Some(e) = w.estimate {
            last = e;
        }
        filled.push(last);
    }
    let keys: Vec<Key> = filled.iter().map(|e| e.key).collect();
    let opens = hysteresis_runs(&keys, persistence);

    let indices = s.measure_indices();
    let first_measure = indices[0];
    let last_measure = *indices.last().expect("non-empty");
    let mut segments: Vec<KeySegment> = Vec::with_capacity(opens.len());
    for (n, &w) in opens.iter().enumerate() {
        let start = if n == 0 {
            first_measure
        } else {
            let pos = (w + window / 2).min(indices.len() - 1);
            let prev = segments.last().expect("segment exists").start_measure;
            indices[pos].max(prev + 1).min(last_measure)
        };
        if let Some(prev) = segments.last_mut() {
            if start <= prev.start_measure {
                continue;
            }
            prev.end_measure = start - 1;
        }
        segments.push(KeySegment {
            start_measure: start,
            end_measure: last_measure,
            key: filled[w],
        });
    }
    Ok(segments)
}

/// Scale pitch classes: the major scale, or natural and harmonic minor
/// combined.
pub fn scale_pitch_classes(key: Key) -> BTreeSet<u8> {
    let steps: &[u8] = match key.mode {
        Mode::Major => &[0, 2, 4, 5, 7, 9, 11],
        Mode::Minor => &[0, 2, 3, 5, 7, 8, 10, 11],
    };
    let tonic = key.tonic.pitch_class();
    steps.iter().map(|s| (tonic + s) % 12).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedPitch {
    pub measure: u32,
    pub offset: RationalDuration,
    pub part: String,
    pub pitch: Pitch,
}

/// Sounding notes whose pitch class lies outside the key's scale.
pub fn non_diatonic_notes(
    s: &Score,
    key: Key,
    span: MeasureSpan,
) -> Result<Vec<LocatedPitch>, ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let scale = scale_pitch_classes(key);
    let mut out: Vec<LocatedPitch> = s
        .events_in(span)
        .filter(|(_, _, e)| e.is_onset())
        .flat_map(|(p, m, e)| {
            e.pitches
                .iter()
                .filter(|x| !scale.contains(&x.pitch_class()))
                .map(move |x| LocatedPitch {
                    measure: m.index,
                    offset: e.offset,
                    part: p.id.clone(),
                    pitch: *x,
                })
        })
        .collect();
    out.sort_by_key(|l| (l.measure, l.offset));
    Ok(out)
}
