//! In-memory score model.
//!
//! A [`Score`] is an ordered list of parts, each an ordered list of measures
//! holding timed events. All durations and offsets are exact rationals in
//! quarter-note units. Values are immutable once constructed: every analysis
//! operator borrows a score and builds new values rather than editing it.

use std::collections::BTreeSet;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("unknown part `{0}`")]
    UnknownPart(String),
    #[error("measure range {from}-{to} is outside the score (measures {first}-{last})")]
    RangeOutOfBounds {
        from: i64,
        to: i64,
        first: u32,
        last: u32,
    },
    #[error("parts have unequal measure counts")]
    UnequalParts,
    #[error("measure indices must be strictly increasing within part `{0}`")]
    UnorderedMeasures(String),
}

/// Diatonic step letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    pub const ALL: [Step; 7] = [
        Step::C,
        Step::D,
        Step::E,
        Step::F,
        Step::G,
        Step::A,
        Step::B,
    ];

    /// Position in C D E F G A B.
    pub fn index(self) -> i32 {
        self as i32
    }

    pub fn from_index(index: i32) -> Step {
        Step::ALL[index.rem_euclid(7) as usize]
    }

    /// Semitones above C of the natural step.
    pub fn base_semitones(self) -> i32 {
        match self {
            Step::C => 0,
            Step::D => 2,
            Step::E => 4,
            Step::F => 5,
            Step::G => 7,
            Step::A => 9,
            Step::B => 11,
        }
    }

    pub fn from_char(c: char) -> Option<Step> {
        match c.to_ascii_uppercase() {
            'C' => Some(Step::C),
            'D' => Some(Step::D),
            'E' => Some(Step::E),
            'F' => Some(Step::F),
            'G' => Some(Step::G),
            'A' => Some(Step::A),
            'B' => Some(Step::B),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Step::C => 'C',
            Step::D => 'D',
            Step::E => 'E',
            Step::F => 'F',
            Step::G => 'G',
            Step::A => 'A',
            Step::B => 'B',
        }
    }
}

pub(crate) fn accidental_text(alter: i32) -> String {
    match alter {
        0 => String::new(),
        a if a > 0 => "♯".repeat(a as usize),
        a => "♭".repeat((-a) as usize),
    }
}

/// A pitch class together with its spelling, e.g. F♯ or G♭.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Spelling {
    pub step: Step,
    pub alter: i32,
}

impl Spelling {
    pub fn new(step: Step, alter: i32) -> Self {
        Spelling { step, alter }
    }

    pub fn pitch_class(self) -> u8 {
        (self.step.base_semitones() + self.alter).rem_euclid(12) as u8
    }

    pub fn name(self) -> String {
        format!("{}{}", self.step.letter(), accidental_text(self.alter))
    }

    /// Moves the spelling by a number of letter steps and semitones.
    pub fn transpose(self, steps: i32, semitones: i32) -> Spelling {
        let new_step = Step::from_index(self.step.index() + steps);
        let target = (self.pitch_class() as i32 + semitones).rem_euclid(12);
        let mut alter = (target - new_step.base_semitones()).rem_euclid(12);
        if alter > 6 {
            alter -= 12;
        }
        Spelling::new(new_step, alter)
    }
}

impl fmt::Display for Spelling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Spelling {
    type Err = String;

    /// Accepts `C`, `F#`, `Bb`, `B-`, `E♭`, `G##` and similar.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        let step = chars
            .next()
            .and_then(Step::from_char)
            .ok_or_else(|| format!("`{s}` does not start with a note letter"))?;
        let mut alter = 0;
        for c in chars {
            match c {
                '#' | '♯' => alter += 1,
                'b' | '-' | '♭' => alter -= 1,
                'x' | '𝄪' => alter += 2,
                _ => return Err(format!("`{s}` has an unexpected character `{c}`")),
            }
        }
        if !(-2..=2).contains(&alter) {
            return Err(format!("`{s}` has more than two accidentals"));
        }
        Ok(Spelling::new(step, alter))
    }
}

/// A spelled pitch in scientific octave numbering (middle C = C4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pitch {
    pub step: Step,
    pub alter: i32,
    pub octave: i32,
}

impl Pitch {
    pub fn new(step: Step, alter: i32, octave: i32) -> Self {
        Pitch {
            step,
            alter,
            octave,
        }
    }

    pub fn midi_number(&self) -> i32 {
        12 * (self.octave + 1) + self.step.base_semitones() + self.alter
    }

    pub fn pitch_class(&self) -> u8 {
        self.midi_number().rem_euclid(12) as u8
    }

    pub fn spelling(&self) -> Spelling {
        Spelling::new(self.step, self.alter)
    }

    /// Diatonic position counted in letter steps from C0.
    pub fn diatonic_number(&self) -> i32 {
        7 * self.octave + self.step.index()
    }

    /// Moves the pitch by letter steps and semitones, keeping the spelling
    /// consistent. Returns `None` when the result would need more than two
    /// accidentals.
    pub fn transpose(&self, steps: i32, semitones: i32) -> Option<Pitch> {
        let diatonic = self.diatonic_number() + steps;
        let step = Step::from_index(diatonic);
        let octave = diatonic.div_euclid(7);
        let midi = self.midi_number() + semitones;
        let alter = midi - (12 * (octave + 1) + step.base_semitones());
        (-2..=2)
            .contains(&alter)
            .then(|| Pitch::new(step, alter, octave))
    }

    pub fn name(&self) -> String {
        format!(
            "{}{}{}",
            self.step.letter(),
            accidental_text(self.alter),
            self.octave
        )
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Pitch {
    type Err = String;

    /// Parses scientific names such as `C4`, `F#3`, `Bb2`, `E♭5`, `C-1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s
            .char_indices()
            .skip(1)
            .find(|(_, c)| !matches!(c, '#' | '♯' | 'b' | '♭' | 'x' | '𝄪'))
            .map(|(i, _)| i)
            .ok_or_else(|| format!("`{s}` has no octave number"))?;
        let spelling: Spelling = s[..split].parse()?;
        let octave: i32 = s[split..]
            .parse()
            .map_err(|_| format!("`{s}` has an invalid octave number"))?;
        Ok(Pitch::new(spelling.step, spelling.alter, octave))
    }
}

/// Exact non-negative duration or offset measured in quarter notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RationalDuration(Ratio<u64>);

impl RationalDuration {
    pub const ZERO: RationalDuration = RationalDuration(Ratio::new_raw(0, 1));

    pub fn new(numerator: u64, denominator: u64) -> Self {
        assert!(denominator > 0, "zero denominator");
        RationalDuration(Ratio::new(numerator, denominator))
    }

    pub fn from_integer(n: u64) -> Self {
        RationalDuration(Ratio::from_integer(n))
    }

    pub fn numerator(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denominator(&self) -> u64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Multiplies by the non-negative rational `num/den`.
    pub fn scale(self, num: u64, den: u64) -> Self {
        RationalDuration(self.0 * Ratio::new(num, den))
    }

    /// `self / other` as an exact ratio; `None` when `other` is zero.
    pub fn ratio_to(self, other: RationalDuration) -> Option<Ratio<u64>> {
        (!other.is_zero()).then(|| self.0 / other.0)
    }

    pub fn checked_sub(self, other: RationalDuration) -> Option<Self> {
        (self >= other).then(|| RationalDuration(self.0 - other.0))
    }

    pub fn is_multiple_of(self, unit: RationalDuration) -> bool {
        match self.ratio_to(unit) {
            Some(r) => r.is_integer(),
            None => self.is_zero(),
        }
    }

    /// Smallest multiple of `unit` strictly greater than `self`.
    pub fn next_multiple_of(self, unit: RationalDuration) -> RationalDuration {
        let r = self.ratio_to(unit).expect("non-zero unit");
        let k = r.to_integer() + 1;
        RationalDuration(unit.0 * Ratio::from_integer(k))
    }
}

impl fmt::Display for RationalDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator(), self.denominator())
    }
}

impl FromStr for RationalDuration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n, d),
            None => (s, "1"),
        };
        let n: u64 = n
            .trim()
            .parse()
            .map_err(|_| format!("`{s}` is not a rational"))?;
        let d: u64 = d
            .trim()
            .parse()
            .map_err(|_| format!("`{s}` is not a rational"))?;
        if d == 0 {
            return Err(format!("`{s}` has a zero denominator"));
        }
        Ok(RationalDuration::new(n, d))
    }
}

impl Serialize for RationalDuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RationalDuration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

impl Add for RationalDuration {
    type Output = RationalDuration;
    fn add(self, rhs: Self) -> Self {
        RationalDuration(self.0 + rhs.0)
    }
}

impl Sub for RationalDuration {
    type Output = RationalDuration;
    /// Panics on a negative result; use [`RationalDuration::checked_sub`].
    fn sub(self, rhs: Self) -> Self {
        self.checked_sub(rhs).expect("negative duration")
    }
}

impl Mul<u64> for RationalDuration {
    type Output = RationalDuration;
    fn mul(self, rhs: u64) -> Self {
        RationalDuration(self.0 * Ratio::from_integer(rhs))
    }
}

impl Sum for RationalDuration {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(RationalDuration::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a RationalDuration> for RationalDuration {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Major => "major",
            Mode::Minor => "minor",
        })
    }
}

/// A key: spelled tonic plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: Spelling,
    pub mode: Mode,
}

impl Key {
    pub fn new(tonic: Spelling, mode: Mode) -> Self {
        Key { tonic, mode }
    }

    pub fn major(step: Step, alter: i32) -> Self {
        Key::new(Spelling::new(step, alter), Mode::Major)
    }

    pub fn minor(step: Step, alter: i32) -> Self {
        Key::new(Spelling::new(step, alter), Mode::Minor)
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.tonic, self.mode)
    }

    pub fn transpose(&self, steps: i32, semitones: i32) -> Key {
        Key::new(self.tonic.transpose(steps, semitones), self.mode)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Key {
    type Err = String;

    /// Accepts `G major`, `a minor`, `F# minor`, `Bb`, `g` (lowercase alone
    /// means minor), and kern designations like `*G:` / `f#:`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s
            .trim()
            .trim_start_matches('*')
            .trim_end_matches(':')
            .trim();
        let mut words = t.split_whitespace();
        let tonic_word = words.next().ok_or_else(|| "empty key name".to_string())?;
        let mode_word = words.next();
        if words.next().is_some() {
            return Err(format!("`{s}` is not a key name"));
        }
        let lowercase_letter = tonic_word.starts_with(|c: char| c.is_ascii_lowercase());
        let tonic: Spelling = tonic_word.parse()?;
        let mode = match mode_word.map(|m| m.to_ascii_lowercase()) {
            Some(m) if m == "major" || m == "maj" => Mode::Major,
            Some(m) if m == "minor" || m == "min" => Mode::Minor,
            Some(_) => return Err(format!("`{s}` has an unknown mode")),
            None if lowercase_letter => Mode::Minor,
            None => Mode::Major,
        };
        Ok(Key::new(tonic, mode))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Note,
    Chord,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Fermata,
    Staccato,
    Accent,
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Marker::Fermata => "fermata",
            Marker::Staccato => "staccato",
            Marker::Accent => "accent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub pitches: Vec<Pitch>,
    pub duration: RationalDuration,
    pub offset: RationalDuration,
    pub tied_from: bool,
    pub tied_to: bool,
    pub markers: BTreeSet<Marker>,
}

impl Event {
    pub fn rest(duration: RationalDuration) -> Self {
        Event {
            kind: EventKind::Rest,
            pitches: Vec::new(),
            duration,
            offset: RationalDuration::ZERO,
            tied_from: false,
            tied_to: false,
            markers: BTreeSet::new(),
        }
    }

    /// Builds a note or chord; duplicate pitches are dropped and members are
    /// ordered from low to high.
    pub fn sounding(mut pitches: Vec<Pitch>, duration: RationalDuration) -> Self {
        let mut seen = Vec::with_capacity(pitches.len());
        pitches.retain(|p| {
            if seen.contains(p) {
                false
            } else {
                seen.push(*p);
                true
            }
        });
        pitches.sort_by_key(|p| (p.midi_number(), p.alter));
        let kind = match pitches.len() {
            0 => EventKind::Rest,
            1 => EventKind::Note,
            _ => EventKind::Chord,
        };
        Event {
            kind,
            pitches,
            duration,
            offset: RationalDuration::ZERO,
            tied_from: false,
            tied_to: false,
            markers: BTreeSet::new(),
        }
    }

    pub fn is_rest(&self) -> bool {
        self.kind == EventKind::Rest
    }

    pub fn end(&self) -> RationalDuration {
        self.offset + self.duration
    }

    /// Highest sounding pitch (the melody note of a chord).
    pub fn top_pitch(&self) -> Option<Pitch> {
        self.pitches
            .iter()
            .copied()
            .max_by_key(|p| (p.midi_number(), -p.alter))
    }

    /// True when this event starts a new sounding note rather than
    /// continuing a tie.
    pub fn is_onset(&self) -> bool {
        !self.is_rest() && !self.tied_from
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSignature {
    pub beats: u32,
    pub beat_unit: u32,
}

impl TimeSignature {
    pub fn new(beats: u32, beat_unit: u32) -> Self {
        TimeSignature { beats, beat_unit }
    }

    /// Bar length in quarter notes.
    pub fn measure_length(&self) -> RationalDuration {
        RationalDuration::new(4 * self.beats as u64, self.beat_unit as u64)
    }

    pub fn is_compound(&self) -> bool {
        self.beat_unit == 8 && self.beats.is_multiple_of(3)
    }

    /// Beat length in quarter notes: a dotted quarter in compound meters,
    /// otherwise the written beat unit.
    pub fn beat_length(&self) -> RationalDuration {
        if self.is_compound() {
            RationalDuration::new(3, 2)
        } else {
            RationalDuration::new(4, self.beat_unit as u64)
        }
    }
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.beats, self.beat_unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarlineKind {
    Normal,
    Final,
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub index: u32,
    pub events: Vec<Event>,
    pub key_signature: Vec<Spelling>,
    pub time_signature: Option<TimeSignature>,
    pub barline: BarlineKind,
    pub clef: Option<String>,
}

impl Measure {
    /// Sum of the event durations.
    pub fn content_length(&self) -> RationalDuration {
        self.events.iter().map(|e| e.duration).sum()
    }

    /// Nominal length from the time signature, else the content length.
    pub fn nominal_length(&self) -> RationalDuration {
        self.time_signature
            .map(|ts| ts.measure_length())
            .unwrap_or_else(|| self.content_length())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub id: String,
    pub label: Option<String>,
    pub measures: Vec<Measure>,
}

impl Part {
    pub fn measure(&self, index: u32) -> Option<&Measure> {
        self.measures.iter().find(|m| m.index == index)
    }

    pub fn events(&self) -> impl Iterator<Item = (&Measure, &Event)> {
        self.measures
            .iter()
            .flat_map(|m| m.events.iter().map(move |e| (m, e)))
    }
}

/// Inclusive measure span `[from, to]` using measure indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSpan {
    pub from: u32,
    pub to: u32,
}

impl MeasureSpan {
    pub fn new(from: u32, to: u32) -> Self {
        MeasureSpan { from, to }
    }

    pub fn contains(&self, index: u32) -> bool {
        (self.from..=self.to).contains(&index)
    }

    pub fn len(&self) -> u32 {
        self.to + 1 - self.from
    }

    pub fn is_empty(&self) -> bool {
        self.to < self.from
    }
}

impl fmt::Display for MeasureSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.from == self.to {
            write!(f, "measure {}", self.from)
        } else {
            write!(f, "measures {}–{}", self.from, self.to)
        }
    }
}

/// A parsed score. Fields are private; a `Score` never changes after
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    source_name: String,
    declared_key: Option<Key>,
    parts: Vec<Part>,
}

impl Score {
    /// Builds a score. Parts must have equal measure counts and strictly
    /// increasing measure indices.
    pub fn new(
        source_name: impl Into<String>,
        parts: Vec<Part>,
        declared_key: Option<Key>,
    ) -> Result<Score, ScoreError> {
        if let Some(first) = parts.first() {
            if parts
                .iter()
                .any(|p| p.measures.len() != first.measures.len())
            {
                return Err(ScoreError::UnequalParts);
            }
        }
        for part in &parts {
            if part.measures.windows(2).any(|w| w[0].index >= w[1].index) {
                return Err(ScoreError::UnorderedMeasures(part.id.clone()));
            }
        }
        Ok(Score {
            source_name: source_name.into(),
            declared_key,
            parts,
        })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn declared_key(&self) -> Option<Key> {
        self.declared_key
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn part(&self, id: &str) -> Result<&Part, ScoreError> {
        self.parts
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| ScoreError::UnknownPart(id.to_string()))
    }

    pub fn measure_count(&self) -> usize {
        self.parts.first().map_or(0, |p| p.measures.len())
    }

    /// Measure indices in order (taken from the first part).
    pub fn measure_indices(&self) -> Vec<u32> {
        self.parts
            .first()
            .map(|p| p.measures.iter().map(|m| m.index).collect())
            .unwrap_or_default()
    }

    /// Span covering the whole score, or `None` when it has no measures.
    pub fn full_span(&self) -> Option<MeasureSpan> {
        let indices = self.measure_indices();
        Some(MeasureSpan::new(*indices.first()?, *indices.last()?))
    }

    /// Checks that `[from, to]` is a non-empty span inside the score.
    pub fn check_span(&self, from: i64, to: i64) -> Result<MeasureSpan, ScoreError> {
        let (first, last) = self.full_span().map(|s| (s.from, s.to)).unwrap_or((1, 0));
        if from > to || from < first as i64 || to > last as i64 {
            return Err(ScoreError::RangeOutOfBounds {
                from,
                to,
                first,
                last,
            });
        }
        Ok(MeasureSpan::new(from as u32, to as u32))
    }

    /// The given span, or the whole score when `None`.
    pub fn resolve_span(&self, span: Option<MeasureSpan>) -> Result<MeasureSpan, ScoreError> {
        match span {
            Some(s) => self.check_span(s.from as i64, s.to as i64),
            None => self.full_span().ok_or(ScoreError::RangeOutOfBounds {
                from: 1,
                to: 1,
                first: 1,
                last: 0,
            }),
        }
    }

    /// Length of the measure at `index`: the longest part's content, or the
    /// time signature length for a measure with no events.
    pub fn measure_length(&self, index: u32) -> RationalDuration {
        let measures: Vec<&Measure> = self.parts.iter().filter_map(|p| p.measure(index)).collect();
        let content = measures
            .iter()
            .map(|m| m.content_length())
            .max()
            .unwrap_or_default();
        if content.is_zero() {
            measures
                .iter()
                .find_map(|m| m.time_signature.map(|ts| ts.measure_length()))
                .unwrap_or_default()
        } else {
            content
        }
    }

    /// Total length in quarter notes, over one part or across all parts.
    pub fn total_duration(&self, part: Option<&str>) -> Result<RationalDuration, ScoreError> {
        match part {
            Some(id) => Ok(self
                .part(id)?
                .measures
                .iter()
                .map(|m| m.content_length())
                .sum()),
            None => Ok(self
                .measure_indices()
                .into_iter()
                .map(|i| self.measure_length(i))
                .sum()),
        }
    }

    /// A new score with only measures `from..=to` of every part. The key and
    /// time signatures active at `from` carry over with the measures.
    pub fn slice_measures(&self, from: i64, to: i64) -> Result<Score, ScoreError> {
        let span = self.check_span(from, to)?;
        let parts = self
            .parts
            .iter()
            .map(|p| Part {
                id: p.id.clone(),
                label: p.label.clone(),
                measures: p
                    .measures
                    .iter()
                    .filter(|m| span.contains(m.index))
                    .cloned()
                    .collect(),
            })
            .collect();
        Ok(Score {
            source_name: self.source_name.clone(),
            declared_key: self.declared_key,
            parts,
        })
    }

    /// Every pitch moved by the same spelled interval. Returns `None` when
    /// some pitch would need more than two accidentals.
    pub fn transpose(&self, steps: i32, semitones: i32) -> Option<Score> {
        let mut parts = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let mut measures = Vec::with_capacity(p.measures.len());
            for m in &p.measures {
                let mut events = Vec::with_capacity(m.events.len());
                for e in &m.events {
                    let pitches = e
                        .pitches
                        .iter()
                        .map(|x| x.transpose(steps, semitones))
                        .collect::<Option<Vec<_>>>()?;
                    events.push(Event {
                        pitches,
                        ..e.clone()
                    });
                }
                measures.push(Measure {
                    events,
                    key_signature: m
                        .key_signature
                        .iter()
                        .map(|s| s.transpose(steps, semitones))
                        .collect(),
                    ..m.clone()
                });
            }
            parts.push(Part {
                measures,
                ..p.clone()
            });
        }
        Some(Score {
            source_name: self.source_name.clone(),
            declared_key: self.declared_key.map(|k| k.transpose(steps, semitones)),
            parts,
        })
    }

    /// Canonical JSON: fixed field order, rationals as `"num/den"`.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score serializes")
    }

    /// Events of the span across all parts, tagged with part and measure.
    pub fn events_in(
        &self,
        span: MeasureSpan,
    ) -> impl Iterator<Item = (&Part, &Measure, &Event)> + '_ {
        self.parts.iter().flat_map(move |p| {
            p.measures
                .iter()
                .filter(move |m| span.contains(m.index))
                .flat_map(move |m| m.events.iter().map(move |e| (p, m, e)))
        })
    }
}
