//! Pitch and interval operators.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{MeasureSpan, Pitch, RationalDuration, Score, ScoreError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PitchOpError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("no notes in the selection")]
    EmptySelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    #[serde(rename = "dd")]
    DoublyDiminished,
    #[serde(rename = "d")]
    Diminished,
    #[serde(rename = "m")]
    Minor,
    #[serde(rename = "M")]
    Major,
    #[serde(rename = "P")]
    Perfect,
    #[serde(rename = "A")]
    Augmented,
    #[serde(rename = "AA")]
    DoublyAugmented,
    /// Beyond doubly altered; carries the semitone deviation from the
    /// perfect or major reference.
    #[serde(rename = "other")]
    Other(i32),
}

impl Quality {
    pub fn abbreviation(&self) -> String {
        match self {
            Quality::DoublyDiminished => "dd".into(),
            Quality::Diminished => "d".into(),
            Quality::Minor => "m".into(),
            Quality::Major => "M".into(),
            Quality::Perfect => "P".into(),
            Quality::Augmented => "A".into(),
            Quality::DoublyAugmented => "AA".into(),
            Quality::Other(dev) => format!("other({dev:+})"),
        }
    }

    pub fn long_name(&self) -> &'static str {
        match self {
            Quality::DoublyDiminished => "doubly diminished",
            Quality::Diminished => "diminished",
            Quality::Minor => "minor",
            Quality::Major => "major",
            Quality::Perfect => "perfect",
            Quality::Augmented => "augmented",
            Quality::DoublyAugmented => "doubly augmented",
            Quality::Other(_) => "irregular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Same,
}

impl Direction {
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Same => Direction::Same,
        }
    }
}

/// A spelled interval. `generic` keeps compound numbers (a tenth is 10).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub generic: u32,
    pub quality: Quality,
    pub semitones: i32,
    pub direction: Direction,
}

/// True for unisons, fourths, fifths and their compounds.
pub fn is_perfect_type(generic: u32) -> bool {
    matches!((generic - 1) % 7 + 1, 1 | 4 | 5)
}

fn quality_from_deviation(generic: u32, deviation: i32) -> Quality {
    if is_perfect_type(generic) {
        match deviation {
            0 => Quality::Perfect,
            -1 => Quality::Diminished,
            -2 => Quality::DoublyDiminished,
            1 => Quality::Augmented,
            2 => Quality::DoublyAugmented,
            d => Quality::Other(d),
        }
    } else {
        match deviation {
            0 => Quality::Major,
            -1 => Quality::Minor,
            -2 => Quality::Diminished,
            -3 => Quality::DoublyDiminished,
            1 => Quality::Augmented,
            2 => Quality::DoublyAugmented,
            d => Quality::Other(d),
        }
    }
}

impl Interval {
    /// Simple form of the generic number (a tenth gives 3).
    pub fn simple_generic(&self) -> u32 {
        (self.generic - 1) % 7 + 1
    }

    pub fn is_compound(&self) -> bool {
        self.generic > 8
    }

    /// Short name such as `P5`, `m3`, `A4`.
    pub fn name(&self) -> String {
        format!("{}{}", self.quality.abbreviation(), self.generic)
    }

    pub fn long_name(&self) -> String {
        let number = ordinal(self.generic);
        let mut text = format!("{} {}", self.quality.long_name(), number);
        if self.is_compound() && self.simple_generic() == 1 {
            text.push_str(&format!(" ({} octaves)", (self.generic - 1) / 7));
        } else if self.is_compound() {
            text.push_str(&format!(" (compound {})", ordinal(self.simple_generic())));
        }
        text
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub(crate) fn ordinal(n: u32) -> String {
    match n {
        1 => "unison".into(),
        8 => "octave".into(),
        _ => {
            let suffix = match (n % 10, n % 100) {
                (1, r) if r != 11 => "st",
                (2, r) if r != 12 => "nd",
                (3, r) if r != 13 => "rd",
                _ => "th",
            };
            format!("{n}{suffix}")
        }
    }
}

/// Spelled interval from `a` to `b`.
///
/// Direction follows MIDI order; equal MIDI numbers fall back to letter
/// order, so C4 to B♯3 is a diminished second down.
pub fn interval_between(a: Pitch, b: Pitch) -> Interval {
    let diatonic = b.diatonic_number() - a.diatonic_number();
    let semitones = b.midi_number() - a.midi_number();
    let direction = match semitones.signum() {
        1 => Direction::Up,
        -1 => Direction::Down,
        _ => match diatonic.signum() {
            1 => Direction::Up,
            -1 => Direction::Down,
            _ => Direction::Same,
        },
    };
    // quality is measured on the ascending form; orientation follows the
    // letter distance, or the semitone sign for unisons
    let flip = diatonic < 0 || (diatonic == 0 && semitones < 0);
    let (steps, semis) = if flip {
        (-diatonic, -semitones)
    } else {
        (diatonic, semitones)
    };
    let generic = steps as u32 + 1;
    let simple = steps % 7;
    let reference = 12 * (steps / 7) + [0, 2, 4, 5, 7, 9, 11][simple as usize];
    Interval {
        generic,
        quality: quality_from_deviation(generic, semis - reference),
        semitones,
        direction,
    }
}

/// Melody of one part: top chord pitch, rests skipped, tied notes merged.
pub fn melody(s: &Score, part: &str, span: MeasureSpan) -> Result<Vec<Pitch>, ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let part = s.part(part)?;
    Ok(part
        .measures
        .iter()
        .filter(|m| span.contains(m.index))
        .flat_map(|m| m.events.iter())
        .filter(|e| e.is_onset())
        .filter_map(|e| e.top_pitch())
        .collect())
}

pub fn melodic_intervals(
    s: &Score,
    part: &str,
    span: MeasureSpan,
) -> Result<Vec<Interval>, ScoreError> {
    let notes = melody(s, part, span)?;
    Ok(notes
        .windows(2)
        .map(|w| interval_between(w[0], w[1]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Onset,
    Duration,
}

/// Pitch-class weights over all parts: quarter-note totals for duration
/// weighting, onset counts for onset weighting. Chord members each count.
pub fn pitch_histogram(
    s: &Score,
    span: MeasureSpan,
    weighting: Weighting,
) -> Result<[RationalDuration; 12], ScoreError> {
    let span = s.check_span(span.from as i64, span.to as i64)?;
    let mut hist = [RationalDuration::ZERO; 12];
    for (_, _, e) in s.events_in(span) {
        let weight = match weighting {
            Weighting::Duration => e.duration,
            Weighting::Onset if e.is_onset() => RationalDuration::from_integer(1),
            Weighting::Onset => continue,
        };
        for p in &e.pitches {
            let slot = &mut hist[p.pitch_class() as usize];
            *slot = *slot + weight;
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ambitus {
    pub lowest: Pitch,
    pub highest: Pitch,
    pub interval: Interval,
}

/// Lowest and highest pitch over one part or the whole score. Enharmonic
/// ties resolve to the flatter spelling.
pub fn ambitus(s: &Score, part: Option<&str>) -> Result<Ambitus, PitchOpError> {
    let parts = match part {
        Some(id) => vec![s.part(id)?],
        None => s.parts().iter().collect(),
    };
    let pitches = parts
        .iter()
        .flat_map(|p| p.events())
        .flat_map(|(_, e)| e.pitches.iter().copied());
    let mut lowest: Option<Pitch> = None;
    let mut highest: Option<Pitch> = None;
    for p in pitches {
        let key = (p.midi_number(), p.alter);
        if lowest.is_none_or(|l| key < (l.midi_number(), l.alter)) {
            lowest = Some(p);
        }
        if highest.is_none_or(|h| {
            p.midi_number() > h.midi_number()
                || (p.midi_number() == h.midi_number() && p.alter < h.alter)
        }) {
            highest = Some(p);
        }
    }
    let (lowest, highest) = lowest.zip(highest).ok_or(PitchOpError::EmptySelection)?;
    Ok(Ambitus {
        lowest,
        highest,
        interval: interval_between(lowest, highest),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kern::parse_kern;
    use crate::score::Step;

    fn p(s: &str) -> Pitch {
        s.parse().unwrap()
    }

    fn score(text: &str) -> Score {
        parse_kern(text).unwrap().0
    }

    fn all(s: &Score) -> MeasureSpan {
        s.full_span().unwrap()
    }

    #[test]
    fn interval_examples() {
        let i = interval_between(p("C4"), p("G4"));
        assert_eq!(
            (i.name(), i.semitones, i.direction),
            ("P5".into(), 7, Direction::Up)
        );
        let i = interval_between(p("C4"), p("C4"));
        assert_eq!(
            (i.name(), i.semitones, i.direction),
            ("P1".into(), 0, Direction::Same)
        );
        let i = interval_between(p("C4"), p("F#4"));
        assert_eq!(
            (i.name(), i.semitones, i.direction),
            ("A4".into(), 6, Direction::Up)
        );
        let i = interval_between(p("C4"), p("B#3"));
        assert_eq!(
            (i.name(), i.semitones, i.direction),
            ("d2".into(), 0, Direction::Down)
        );
    }

    #[test]
    fn compound_and_descending() {
        let i = interval_between(p("C4"), p("E5"));
        assert_eq!(i.name(), "M10");
        assert_eq!(i.simple_generic(), 3);
        assert!(i.long_name().contains("compound 3rd"));
        let i = interval_between(p("G4"), p("C4"));
        assert_eq!(
            (i.name(), i.direction, i.semitones),
            ("P5".into(), Direction::Down, -7)
        );
        assert_eq!(interval_between(p("C4"), p("C5")).name(), "P8");
        assert_eq!(interval_between(p("E4"), p("F4")).name(), "m2");
        assert_eq!(interval_between(p("F4"), p("B4")).name(), "A4");
        assert_eq!(interval_between(p("B3"), p("F4")).name(), "d5");
        assert_eq!(interval_between(p("C4"), p("Cb4")).name(), "A1");
        assert_eq!(
            interval_between(p("C4"), p("Cb4")).direction,
            Direction::Down
        );
        assert_eq!(interval_between(p("C#4"), p("Bb4")).name(), "d7");
        assert!(matches!(
            interval_between(p("Fbb3"), p("B##3")).quality,
            Quality::Other(5)
        ));
    }

    #[test]
    fn melodic_examples() {
        let s = score("**kern\n*M3/4\n=1\n4c\n4d\n4e\n==\n*-");
        let names: Vec<_> = melodic_intervals(&s, "P1", all(&s))
            .unwrap()
            .iter()
            .map(|i| (i.name(), i.direction))
            .collect();
        assert_eq!(
            names,
            vec![("M2".into(), Direction::Up), ("M2".into(), Direction::Up)]
        );

        let s = score("**kern\n=1\n4c\n==\n*-");
        assert!(melodic_intervals(&s, "P1", all(&s)).unwrap().is_empty());

        let s = score("**kern\n*M3/4\n=1\n4c\n4r\n4g\n==\n*-");
        let v = melodic_intervals(&s, "P1", all(&s)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].name(), "P5");
    }

    #[test]
    fn melody_merges_ties_and_takes_chord_tops() {
        let s = score("**kern\n*M4/4\n=1\n[2c\n2c]\n=2\n2e 2g\n2f\n==\n*-");
        let m = melody(&s, "P1", all(&s)).unwrap();
        assert_eq!(m, vec![p("C4"), p("G4"), p("F4")]);
        assert!(matches!(
            melodic_intervals(&s, "P9", all(&s)),
            Err(ScoreError::UnknownPart(_))
        ));
        assert!(matches!(
            melodic_intervals(&s, "P1", MeasureSpan::new(2, 5)),
            Err(ScoreError::RangeOutOfBounds { .. })
        ));
    }

    #[test]
    fn histogram_examples() {
        let s = score("**kern\n*M4/4\n=1\n4c\n4c\n4c\n4c\n=2\n1r\n==\n*-");
        let h = pitch_histogram(&s, all(&s), Weighting::Duration).unwrap();
        assert_eq!(h[0], RationalDuration::from_integer(4));
        assert!(h[1..].iter().all(|x| x.is_zero()));
        let rest_only = pitch_histogram(&s, MeasureSpan::new(2, 2), Weighting::Duration).unwrap();
        assert!(rest_only.iter().all(|x| x.is_zero()));

        let s = score("**kern\n*M4/4\n=1\n4c\n4d\n4e\n4f\n=2\n4g\n4a\n4b\n4cc\n==\n*-");
        let h = pitch_histogram(&s, all(&s), Weighting::Onset).unwrap();
        let one = RationalDuration::from_integer(1);
        for pc in [2, 4, 5, 7, 9, 11] {
            assert_eq!(h[pc], one);
        }
        assert_eq!(h[0], one * 2);
        assert!(h[1].is_zero() && h[3].is_zero());
    }

    #[test]
    fn onset_histogram_skips_tie_continuations() {
        let s = score("**kern\n*M4/4\n=1\n[2c\n2c]\n==\n*-");
        let h = pitch_histogram(&s, all(&s), Weighting::Onset).unwrap();
        assert_eq!(h[0], RationalDuration::from_integer(1));
        let h = pitch_histogram(&s, all(&s), Weighting::Duration).unwrap();
        assert_eq!(h[0], RationalDuration::from_integer(4));
    }

    #[test]
    fn ambitus_examples() {
        let s = score("**kern\n=1\n4c\n==\n*-");
        let a = ambitus(&s, None).unwrap();
        assert_eq!(
            (a.lowest, a.highest, a.interval.name()),
            (p("C4"), p("C4"), "P1".into())
        );

        let s = score("**kern\n*M4/4\n=1\n4c\n4d\n4e\n4f\n=2\n4g\n4a\n4b\n4cc\n==\n*-");
        let a = ambitus(&s, Some("P1")).unwrap();
        assert_eq!(
            (a.lowest, a.highest, a.interval.name()),
            (p("C4"), p("C5"), "P8".into())
        );

        let s = score("**kern\t**kern\n*M2/4\t*M2/4\n=1\t=1\n2GG 2D\t2b 2ddd\n==\t==\n*-\t*-");
        let a = ambitus(&s, None).unwrap();
        assert_eq!((a.lowest, a.highest), (p("G2"), p("D6")));
        let a = ambitus(&s, Some("P1")).unwrap();
        assert_eq!((a.lowest, a.highest), (p("G2"), p("D3")));

        let s = score("**kern\n=1\n4r\n==\n*-");
        assert_eq!(ambitus(&s, None), Err(PitchOpError::EmptySelection));
    }

    #[test]
    fn ambitus_prefers_flatter_spelling() {
        let s = score("**kern\n=1\n4b#\n4cc\n==\n*-");
        let a = ambitus(&s, None).unwrap();
        assert_eq!(a.lowest, Pitch::new(Step::C, 0, 5));
        assert_eq!(a.highest, Pitch::new(Step::C, 0, 5));
    }
}
