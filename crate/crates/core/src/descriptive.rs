//! Structural statistics, rhythm and meter, and expression markings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{
    Key, Marker, MeasureSpan, Pitch, RationalDuration, Score, ScoreError, Spelling, TimeSignature,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DescriptiveError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("no time signature is active in {0}")]
    NoTimeSignature(MeasureSpan),
    #[error("the selection contains no notes")]
    EmptySelection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRange {
    pub part: String,
    pub lowest: Option<Pitch>,
    pub highest: Option<Pitch>,
}

/// A value that holds over a run of consecutive measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spanned<T> {
    pub value: T,
    pub span: MeasureSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOverview {
    pub part_count: usize,
    pub measure_count: usize,
    pub note_count: usize,
    pub rest_count: usize,
    pub chord_count: usize,
    pub ranges: Vec<PartRange>,
    pub time_signatures: Vec<Spanned<Option<TimeSignature>>>,
    pub key_signatures: Vec<Spanned<Vec<Spelling>>>,
    pub declared_key: Option<Key>,
}

/// Groups consecutive measures of the first part that share a value.
fn runs<T: PartialEq + Clone>(
    s: &Score,
    span: MeasureSpan,
    value: impl Fn(&crate::score::Measure) -> T,
) -> Vec<Spanned<T>> {
    let mut out: Vec<Spanned<T>> = Vec::new();
    let Some(part) = s.parts().first() else {
        return out;
    };
    for m in part.measures.iter().filter(|m| span.contains(m.index)) {
        let v = value(m);
        match out.last_mut() {
            Some(last) if last.value == v => last.span.to = m.index,
            _ => out.push(Spanned {
                value: v,
                span: MeasureSpan::new(m.index, m.index),
            }),
        }
    }
    out
}

/// Counts every event of every part. A chord counts once in `chord_count`
/// and once per member in `note_count`.
pub fn score_overview(s: &Score) -> ScoreOverview {
    let mut overview = ScoreOverview {
        part_count: s.parts().len(),
        measure_count: s.measure_count(),
        note_count: 0,
        rest_count: 0,
        chord_count: 0,
        ranges: Vec::new(),
        time_signatures: Vec::new(),
        key_signatures: Vec::new(),
        declared_key: s.declared_key(),
    };
    for part in s.parts() {
        let mut lowest: Option<Pitch> = None;
        let mut highest: Option<Pitch> = None;
        for (_, e) in part.events() {
            match e.kind {
                crate::score::EventKind::Rest => overview.rest_count += 1,
                crate::score::EventKind::Chord => overview.chord_count += 1,
                crate::score::EventKind::Note => {}
            }
            overview.note_count += e.pitches.len();
            for p in &e.pitches {
                if lowest.is_none_or(|l| (p.midi_number(), p.alter) < (l.midi_number(), l.alter)) {
                    lowest = Some(*p);
                }
                if highest.is_none_or(|h| (p.midi_number(), -p.alter) > (h.midi_number(), -h.alter))
                {
                    highest = Some(*p);
                }
            }
        }
        overview.ranges.push(PartRange {
            part: part.id.clone(),
            lowest,
            highest,
        });
    }
    if let Some(span) = s.full_span() {
        overview.time_signatures = runs(s, span, |m| m.time_signature);
        overview.key_signatures = runs(s, span, |m| m.key_signature.clone());
    }
    overview
}

/// Time signatures in force over `span`, grouped into runs.
pub fn time_signatures(
    s: &Score,
    span: MeasureSpan,
) -> Result<Vec<Spanned<Option<TimeSignature>>>, ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    Ok(runs(s, span, |m| m.time_signature))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhythmProfile {
    pub duration_histogram: BTreeMap<RationalDuration, u32>,
    pub onbeat_onsets: u32,
    pub offbeat_onsets: u32,
    pub syncopation_count: u32,
}

impl RhythmProfile {
    pub fn onset_count(&self) -> u32 {
        self.onbeat_onsets + self.offbeat_onsets
    }
}

/// Onset statistics for one part. Only measures with an active time
/// signature contribute. A pickup measure is aligned to the end of the bar.
pub fn rhythm_profile(
    s: &Score,
    part: &str,
    span: MeasureSpan,
) -> Result<RhythmProfile, DescriptiveError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let part = s.part(part)?;
    let measures: Vec<_> = part
        .measures
        .iter()
        .filter(|m| span.contains(m.index) && m.time_signature.is_some())
        .collect();
    if measures.is_empty() {
        return Err(DescriptiveError::NoTimeSignature(span));
    }
    let mut profile = RhythmProfile {
        duration_histogram: BTreeMap::new(),
        onbeat_onsets: 0,
        offbeat_onsets: 0,
        syncopation_count: 0,
    };
    let first_index = s.measure_indices().first().copied();
    for m in measures {
        let ts = m.time_signature.expect("filtered");
        let beat = ts.beat_length();
        let content = m.content_length();
        let shift = if Some(m.index) == first_index && content < ts.measure_length() {
            ts.measure_length() - content
        } else {
            RationalDuration::ZERO
        };
        for e in m.events.iter().filter(|e| e.is_onset()) {
            *profile.duration_histogram.entry(e.duration).or_insert(0) += 1;
            let position = e.offset + shift;
            if position.is_multiple_of(beat) {
                profile.onbeat_onsets += 1;
            } else {
                profile.offbeat_onsets += 1;
                if position + e.duration > position.next_multiple_of(beat) {
                    profile.syncopation_count += 1;
                }
            }
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionMarker {
    Fermata,
    Staccato,
    Accent,
    TieStart,
    TieEnd,
}

impl From<Marker> for ExpressionMarker {
    fn from(m: Marker) -> Self {
        match m {
            Marker::Fermata => ExpressionMarker::Fermata,
            Marker::Staccato => ExpressionMarker::Staccato,
            Marker::Accent => ExpressionMarker::Accent,
        }
    }
}

impl fmt::Display for ExpressionMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpressionMarker::Fermata => "fermata",
            ExpressionMarker::Staccato => "staccato",
            ExpressionMarker::Accent => "accent",
            ExpressionMarker::TieStart => "tie start",
            ExpressionMarker::TieEnd => "tie end",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerEntry {
    pub measure: u32,
    pub offset: RationalDuration,
    pub part: String,
    pub marker: ExpressionMarker,
}

/// Every marking in the span, ordered by measure, offset and part order.
pub fn expression_markers(s: &Score, span: MeasureSpan) -> Result<Vec<MarkerEntry>, ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let mut found: Vec<(u32, RationalDuration, usize, MarkerEntry)> = Vec::new();
    for (pi, part) in s.parts().iter().enumerate() {
        for m in part.measures.iter().filter(|m| span.contains(m.index)) {
            for e in &m.events {
                let mut markers: Vec<ExpressionMarker> =
                    e.markers.iter().map(|x| (*x).into()).collect();
                if e.tied_from {
                    markers.push(ExpressionMarker::TieEnd);
                }
                if e.tied_to {
                    markers.push(ExpressionMarker::TieStart);
                }
                for marker in markers {
                    found.push((
                        m.index,
                        e.offset,
                        pi,
                        MarkerEntry {
                            measure: m.index,
                            offset: e.offset,
                            part: part.id.clone(),
                            marker,
                        },
                    ));
                }
            }
        }
    }
    found.sort_by_key(|(m, o, p, _)| (*m, *o, *p));
    Ok(found.into_iter().map(|(_, _, _, e)| e).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub min: RationalDuration,
    pub max: RationalDuration,
    pub mean: RationalDuration,
    pub mode: RationalDuration,
}

/// Exact statistics over the durations of notes and chords (rests excluded).
pub fn duration_stats(s: &Score, part: Option<&str>) -> Result<DurationStats, DescriptiveError> {
    let parts = match part {
        Some(id) => vec![s.part(id)?],
        None => s.parts().iter().collect(),
    };
    let durations: Vec<RationalDuration> = parts
        .iter()
        .flat_map(|p| p.events())
        .filter(|(_, e)| !e.is_rest())
        .map(|(_, e)| e.duration)
        .collect();
    if durations.is_empty() {
        return Err(DescriptiveError::EmptySelection);
    }
    let mut counts: BTreeMap<RationalDuration, usize> = BTreeMap::new();
    for d in &durations {
        *counts.entry(*d).or_insert(0) += 1;
    }
    let mode = counts
        .iter()
        .fold((RationalDuration::ZERO, 0), |best, (d, c)| {
            if *c > best.1 {
                (*d, *c)
            } else {
                best
            }
        })
        .0;
    let total: RationalDuration = durations.iter().sum();
    Ok(DurationStats {
        count: durations.len(),
        min: *counts.keys().next().expect("non-empty"),
        max: *counts.keys().next_back().expect("non-empty"),
        mean: total.scale(1, durations.len() as u64),
        mode,
    })
}
