//! Vertical slicing, chord identification and roman numeral labels.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::key::{estimate_key, KeyError};
use crate::score::{Key, MeasureSpan, Mode, Pitch, RationalDuration, Score, ScoreError, Spelling};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarmonyError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("fewer than two distinct pitch classes")]
    TooFewPitches,
    #[error("the chord does not match a labelled quality")]
    UnlabeledQuality,
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("nothing sounds at measure {measure}, offset {offset}")]
    NothingSounding {
        measure: u32,
        offset: RationalDuration,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChordQuality {
    #[serde(rename = "maj")]
    Major,
    #[serde(rename = "min")]
    Minor,
    #[serde(rename = "dim")]
    Diminished,
    #[serde(rename = "aug")]
    Augmented,
    #[serde(rename = "dom7")]
    Dominant7,
    #[serde(rename = "maj7")]
    Major7,
    #[serde(rename = "min7")]
    Minor7,
    #[serde(rename = "halfdim7")]
    HalfDiminished7,
    #[serde(rename = "dim7")]
    Diminished7,
    #[serde(rename = "other")]
    Other,
}

impl ChordQuality {
    pub const LABELLED: [ChordQuality; 9] = [
        ChordQuality::Major,
        ChordQuality::Minor,
        ChordQuality::Diminished,
        ChordQuality::Augmented,
        ChordQuality::Dominant7,
        ChordQuality::Major7,
        ChordQuality::Minor7,
        ChordQuality::HalfDiminished7,
        ChordQuality::Diminished7,
    ];

    /// Semitones above the root, in stacked-third order.
    pub fn template(self) -> &'static [u8] {
        match self {
            ChordQuality::Major => &[0, 4, 7],
            ChordQuality::Minor => &[0, 3, 7],
            ChordQuality::Diminished => &[0, 3, 6],
            ChordQuality::Augmented => &[0, 4, 8],
            ChordQuality::Dominant7 => &[0, 4, 7, 10],
            ChordQuality::Major7 => &[0, 4, 7, 11],
            ChordQuality::Minor7 => &[0, 3, 7, 10],
            ChordQuality::HalfDiminished7 => &[0, 3, 6, 10],
            ChordQuality::Diminished7 => &[0, 3, 6, 9],
            ChordQuality::Other => &[],
        }
    }

    pub fn is_seventh(self) -> bool {
        self.template().len() == 4
    }

    /// Upper-case numerals for major-third qualities.
    pub fn is_upper_case(self) -> bool {
        matches!(
            self,
            ChordQuality::Major
                | ChordQuality::Augmented
                | ChordQuality::Dominant7
                | ChordQuality::Major7
        )
    }

    pub fn description(self) -> &'static str {
        match self {
            ChordQuality::Major => "major triad",
            ChordQuality::Minor => "minor triad",
            ChordQuality::Diminished => "diminished triad",
            ChordQuality::Augmented => "augmented triad",
            ChordQuality::Dominant7 => "dominant seventh",
            ChordQuality::Major7 => "major seventh",
            ChordQuality::Minor7 => "minor seventh",
            ChordQuality::HalfDiminished7 => "half-diminished seventh",
            ChordQuality::Diminished7 => "diminished seventh",
            ChordQuality::Other => "unclassified sonority",
        }
    }

    fn symbol_suffix(self) -> &'static str {
        match self {
            ChordQuality::Major => "",
            ChordQuality::Minor => "m",
            ChordQuality::Diminished => "dim",
            ChordQuality::Augmented => "aug",
            ChordQuality::Dominant7 => "7",
            ChordQuality::Major7 => "maj7",
            ChordQuality::Minor7 => "m7",
            ChordQuality::HalfDiminished7 => "ø7",
            ChordQuality::Diminished7 => "°7",
            ChordQuality::Other => "?",
        }
    }
}

/// Incomplete forms (fifth omitted) that still identify a quality.
const INCOMPLETE: [(ChordQuality, &[u8]); 5] = [
    (ChordQuality::Major, &[0, 4]),
    (ChordQuality::Minor, &[0, 3]),
    (ChordQuality::Dominant7, &[0, 4, 10]),
    (ChordQuality::Major7, &[0, 4, 11]),
    (ChordQuality::Minor7, &[0, 3, 10]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChordLabel {
    pub root: Option<Spelling>,
    pub quality: ChordQuality,
    pub bass: Spelling,
    pub inversion: u8,
    pub members: Vec<Spelling>,
    /// Matched a template with the fifth omitted.
    pub incomplete: bool,
    /// The pitch-class set fits several roots (augmented or diminished
    /// seventh); the root was chosen by spelling or bass.
    pub symmetric: bool,
}

impl ChordLabel {
    /// Lead-sheet style symbol, e.g. `G7`, `Bø7`, `F♯m/A`.
    pub fn symbol(&self) -> String {
        match self.root {
            None => "?".to_string(),
            Some(root) => {
                let mut s = format!("{}{}", root, self.quality.symbol_suffix());
                if self.inversion > 0 {
                    s.push('/');
                    s.push_str(&self.bass.name());
                }
                s
            }
        }
    }

    pub fn description(&self) -> String {
        match self.root {
            None => format!(
                "an unclassified sonority ({})",
                self.members
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            Some(root) => {
                let position = match self.inversion {
                    0 => "root position".to_string(),
                    1 => "first inversion".to_string(),
                    2 => "second inversion".to_string(),
                    _ => "third inversion".to_string(),
                };
                let mut s = format!("{} {} in {}", root, self.quality.description(), position);
                if self.incomplete {
                    s.push_str(", fifth omitted");
                }
                s
            }
        }
    }
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol())
    }
}

fn lowest(pitches: &[Pitch]) -> Option<Pitch> {
    pitches
        .iter()
        .copied()
        .min_by_key(|p| (p.midi_number(), p.alter))
}

/// Does every spelled member sit on the letter expected for its place in
/// the stack of thirds above `root`?
fn stacks_in_thirds(root: Spelling, members: &[Spelling], template: &[u8]) -> bool {
    members.iter().all(|m| {
        let rel = (m.pitch_class() + 12 - root.pitch_class()) % 12;
        match template.iter().position(|t| *t == rel) {
            Some(i) => (m.step.index() - root.step.index()).rem_euclid(7) == 2 * i as i32 % 7,
            None => false,
        }
    })
}

/// Labels a set of pitches by template matching on pitch classes.
pub fn identify_chord(pitches: &[Pitch]) -> Result<ChordLabel, HarmonyError> {
    let pcs: BTreeSet<u8> = pitches.iter().map(|p| p.pitch_class()).collect();
    if pcs.len() < 2 {
        return Err(HarmonyError::TooFewPitches);
    }
    let mut sorted = pitches.to_vec();
    sorted.sort_by_key(|p| (p.midi_number(), p.alter));
    let mut members: Vec<Spelling> = Vec::new();
    for p in &sorted {
        if !members.contains(&p.spelling()) {
            members.push(p.spelling());
        }
    }
    let bass_pitch = lowest(&sorted).expect("non-empty");
    let bass = bass_pitch.spelling();

    let matches_for =
        |templates: &[(ChordQuality, &[u8])]| -> Vec<(u8, ChordQuality, &'static [u8])> {
            let mut found = Vec::new();
            for &(quality, template) in templates {
                for &root in &pcs {
                    let rel: BTreeSet<u8> = pcs.iter().map(|pc| (pc + 12 - root) % 12).collect();
                    if rel.len() == template.len() && template.iter().all(|t| rel.contains(t)) {
                        found.push((root, quality, quality.template()));
                    }
                }
            }
            found
        };
    let complete: Vec<(ChordQuality, &[u8])> = ChordQuality::LABELLED
        .iter()
        .map(|q| (*q, q.template()))
        .collect();
    let mut candidates = matches_for(&complete);
    let mut incomplete = false;
    if candidates.is_empty() {
        candidates = matches_for(&INCOMPLETE);
        incomplete = !candidates.is_empty();
    }
    if candidates.is_empty() {
        return Ok(ChordLabel {
            root: None,
            quality: ChordQuality::Other,
            bass,
            inversion: 0,
            members,
            incomplete: false,
            symmetric: false,
        });
    }

    let spelled_root = |root_pc: u8, template: &[u8]| -> Spelling {
        let options: Vec<Spelling> = members
            .iter()
            .copied()
            .filter(|m| m.pitch_class() == root_pc)
            .collect();
        options
            .iter()
            .copied()
            .find(|r| stacks_in_thirds(*r, &members, template))
            .unwrap_or(options[0])
    };
    let symmetric = candidates.len() > 1;
    let chosen = if symmetric {
        let stacking: Vec<_> = candidates
            .iter()
            .filter(|(pc, _, t)| stacks_in_thirds(spelled_root(*pc, t), &members, t))
            .collect();
        if stacking.len() == 1 {
            *stacking[0]
        } else if let Some(c) = candidates
            .iter()
            .find(|(pc, _, _)| *pc == bass.pitch_class())
        {
            *c
        } else {
            // lowest-sounding candidate root
            *candidates
                .iter()
                .min_by_key(|(pc, _, _)| {
                    sorted
                        .iter()
                        .position(|p| p.pitch_class() == *pc)
                        .unwrap_or(usize::MAX)
                })
                .expect("non-empty")
        }
    } else {
        candidates[0]
    };
    let (root_pc, quality, template) = chosen;
    let root = spelled_root(root_pc, template);
    let bass_rel = (bass.pitch_class() + 12 - root_pc) % 12;
    let inversion = template.iter().position(|t| *t == bass_rel).unwrap_or(0) as u8;
    Ok(ChordLabel {
        root: Some(root),
        quality,
        bass,
        inversion,
        members,
        incomplete,
        symmetric,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RomanNumeral {
    pub degree: u8,
    pub figure: String,
    pub key: Key,
    pub chromatic_prefix: Option<String>,
}

impl fmt::Display for RomanNumeral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.figure)
    }
}

const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const NATURAL_MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];
const NUMERALS: [&str; 7] = ["I", "II", "III", "IV", "V", "VI", "VII"];

/// Roman numeral of `chord` in `key`.
///
/// Minor keys use natural minor as the diatonic reference, except that the
/// raised leading-tone triad and seventh (vii°, vii°7) take no prefix.
pub fn roman_numeral(chord: &ChordLabel, key: Key) -> Result<RomanNumeral, HarmonyError> {
    let root = match (chord.root, chord.quality) {
        (Some(r), q) if q != ChordQuality::Other => r,
        _ => return Err(HarmonyError::UnlabeledQuality),
    };
    let degree = (root.step.index() - key.tonic.step.index()).rem_euclid(7) as usize + 1;
    let scale = match key.mode {
        Mode::Major => MAJOR_SCALE,
        Mode::Minor => NATURAL_MINOR_SCALE,
    };
    let expected = (key.tonic.pitch_class() + scale[degree - 1]) % 12;
    let mut diff = (root.pitch_class() as i32 - expected as i32).rem_euclid(12);
    if diff > 6 {
        diff -= 12;
    }
    if key.mode == Mode::Minor
        && degree == 7
        && diff == 1
        && matches!(
            chord.quality,
            ChordQuality::Diminished | ChordQuality::Diminished7
        )
    {
        diff = 0;
    }
    let prefix = match diff {
        0 => None,
        d if d > 0 => Some("♯".repeat(d as usize)),
        d => Some("♭".repeat((-d) as usize)),
    };
    let mut numeral = NUMERALS[degree - 1].to_string();
    if !chord.quality.is_upper_case() {
        numeral = numeral.to_lowercase();
    }
    let symbol = match chord.quality {
        ChordQuality::Diminished | ChordQuality::Diminished7 => "°",
        ChordQuality::HalfDiminished7 => "ø",
        ChordQuality::Augmented => "+",
        _ => "",
    };
    let inversion = if chord.quality.is_seventh() {
        ["7", "65", "43", "42"][chord.inversion.min(3) as usize]
    } else {
        ["", "6", "64"][chord.inversion.min(2) as usize]
    };
    let figure = format!(
        "{}{}{}{}",
        prefix.as_deref().unwrap_or(""),
        numeral,
        symbol,
        inversion
    );
    Ok(RomanNumeral {
        degree: degree as u8,
        figure,
        key,
        chromatic_prefix: prefix,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalSlice {
    pub measure: u32,
    pub offset: RationalDuration,
    pub duration: RationalDuration,
    pub sounding: Vec<Pitch>,
}

impl VerticalSlice {
    pub fn pitch_class_set(&self) -> BTreeSet<u8> {
        self.sounding.iter().map(|p| p.pitch_class()).collect()
    }

    pub fn is_rest(&self) -> bool {
        self.sounding.is_empty()
    }
}

/// Collapses all parts into slices bounded by every onset and release.
pub fn chordify(s: &Score, span: MeasureSpan) -> Result<Vec<VerticalSlice>, ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let mut slices = Vec::new();
    for index in s
        .measure_indices()
        .into_iter()
        .filter(|i| span.contains(*i))
    {
        let length = s.measure_length(index);
        if length.is_zero() {
            continue;
        }
        let events: Vec<_> = s
            .parts()
            .iter()
            .filter_map(|p| p.measure(index))
            .flat_map(|m| m.events.iter())
            .collect();
        let mut bounds: BTreeSet<RationalDuration> = [RationalDuration::ZERO, length].into();
        for e in &events {
            bounds.insert(e.offset);
            bounds.insert(e.end());
        }
        let bounds: Vec<_> = bounds.into_iter().filter(|b| *b <= length).collect();
        for w in bounds.windows(2) {
            let (start, end) = (w[0], w[1]);
            let mut sounding: Vec<Pitch> = Vec::new();
            for e in &events {
                if e.offset <= start && e.end() >= end {
                    for p in &e.pitches {
                        if !sounding.contains(p) {
                            sounding.push(*p);
                        }
                    }
                }
            }
            sounding.sort_by_key(|p| (p.midi_number(), p.alter));
            slices.push(VerticalSlice {
                measure: index,
                offset: start,
                duration: end - start,
                sounding,
            });
        }
    }
    Ok(slices)
}

/// The slice sounding at `offset` within measure `measure`.
pub fn slice_at(
    s: &Score,
    measure: u32,
    offset: RationalDuration,
) -> Result<VerticalSlice, HarmonyError> {
    let slices = chordify(s, MeasureSpan::new(measure, measure))?;
    slices
        .into_iter()
        .find(|sl| sl.offset <= offset && offset < sl.offset + sl.duration)
        .filter(|sl| !sl.is_rest())
        .ok_or(HarmonyError::NothingSounding { measure, offset })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeySource {
    Provided,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressionEntry {
    pub slice: VerticalSlice,
    pub chord: Option<ChordLabel>,
    pub numeral: Option<RomanNumeral>,
}

impl ProgressionEntry {
    /// Numeral figure, or `?` for slices without a label.
    pub fn label(&self) -> String {
        self.numeral
            .as_ref()
            .map(|n| n.figure.clone())
            .unwrap_or_else(|| "?".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progression {
    pub key: Option<Key>,
    pub key_source: KeySource,
    pub entries: Vec<ProgressionEntry>,
}

/// Chordify, merge adjacent slices with the same pitch-class set (unless
/// `merge` is off), then label each slice against `key` or, when absent, the
/// estimated key of the span.
pub fn analyze_progression(
    s: &Score,
    span: MeasureSpan,
    key: Option<Key>,
    merge: bool,
) -> Result<Progression, HarmonyError> {
    let slices = chordify(s, span)?;
    let mut merged: Vec<VerticalSlice> = Vec::new();
    let mut previous_was_rest = true;
    for slice in slices {
        if slice.is_rest() {
            previous_was_rest = true;
            continue;
        }
        match merged.last_mut() {
            Some(last)
                if merge
                    && !previous_was_rest
                    && last.pitch_class_set() == slice.pitch_class_set() =>
            {
                last.duration = last.duration + slice.duration;
                for p in slice.sounding {
                    if !last.sounding.contains(&p) {
                        last.sounding.push(p);
                    }
                }
                last.sounding.sort_by_key(|p| (p.midi_number(), p.alter));
            }
            _ => merged.push(slice),
        }
        previous_was_rest = false;
    }
    if merged.is_empty() {
        return Ok(Progression {
            key,
            key_source: if key.is_some() {
                KeySource::Provided
            } else {
                KeySource::Estimated
            },
            entries: Vec::new(),
        });
    }
    let (key, key_source) = match key {
        Some(k) => (k, KeySource::Provided),
        None => (estimate_key(s, span)?.key, KeySource::Estimated),
    };
    let entries = merged
        .into_iter()
        .map(|slice| {
            let chord = identify_chord(&slice.sounding).ok();
            let numeral = chord.as_ref().and_then(|c| roman_numeral(c, key).ok());
            ProgressionEntry {
                slice,
                chord,
                numeral,
            }
        })
        .collect();
    Ok(Progression {
        key: Some(key),
        key_source,
        entries,
    })
}
