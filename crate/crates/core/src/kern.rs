//! Humdrum `**kern` reader.
//!
//! Supported subset: pitches, accidentals, rests, durations with up to three
//! dots, chords, ties, barlines, `*M` time signatures, `*k[...]` key
//! signatures, `*X:` key designations, `*clef`, instrument labels and
//! comments. Beams, slurs, stem directions and common ornaments are stripped.
//! Spine manipulation (`*^`, `*v`, `*+`, `*x`) and grace notes are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::score::{
    BarlineKind, Event, Key, Marker, Measure, Mode, Part, Pitch, RationalDuration, Score, Spelling,
    Step, TimeSignature,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernError {
    #[error("input is empty")]
    Empty,
    #[error("line {line}: {message}")]
    FatalSyntax { line: usize, message: String },
    #[error("line {line}: unsupported feature: {feature}")]
    UnsupportedFeature { line: usize, feature: String },
    #[error("line {line}: malformed token `{token}`: {reason}")]
    MalformedToken {
        line: usize,
        token: String,
        reason: String,
    },
}

impl KernError {
    pub fn line(&self) -> usize {
        match self {
            KernError::Empty => 0,
            KernError::FatalSyntax { line, .. }
            | KernError::UnsupportedFeature { line, .. }
            | KernError::MalformedToken { line, .. } => *line,
        }
    }
}

/// Failure to read a single data token.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    ExclusiveInterp,
    TandemInterp,
    Barline,
    Data,
    Comment,
    Null,
}

impl TokenClass {
    /// Classifies a spine token by its leading characters.
    pub fn of(raw: &str) -> TokenClass {
        if raw.starts_with("**") {
            TokenClass::ExclusiveInterp
        } else if raw.starts_with('*') {
            TokenClass::TandemInterp
        } else if raw.starts_with('=') {
            TokenClass::Barline
        } else if raw.starts_with('!') {
            TokenClass::Comment
        } else if raw == "." {
            TokenClass::Null
        } else {
            TokenClass::Data
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernToken {
    pub raw: String,
    pub line: usize,
    pub spine: usize,
    pub classification: TokenClass,
}

/// Splits kern text into classified tokens, one vector per record. Global
/// comments and blank lines are dropped.
pub fn tokenize(text: &str) -> Vec<Vec<KernToken>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with("!!"))
        .map(|(i, l)| {
            l.split('\t')
                .enumerate()
                .map(|(spine, raw)| KernToken {
                    raw: raw.to_string(),
                    line: i + 1,
                    spine,
                    classification: TokenClass::of(raw),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseDiagnostics {
    pub warnings: Vec<Warning>,
    pub recovered_tokens: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Replace malformed tokens by rests instead of failing.
    pub recover: bool,
}

pub fn parse_kern(text: &str) -> Result<(Score, ParseDiagnostics), KernError> {
    parse_kern_with(text, "inline", ParseOptions::default())
}

pub fn parse_kern_with(
    text: &str,
    source_name: &str,
    options: ParseOptions,
) -> Result<(Score, ParseDiagnostics), KernError> {
    Parser::new(options).run(text, source_name)
}

/// Reads and parses a `.krn` file; the file stem becomes the source name.
pub fn parse_kern_file(
    path: &Path,
    options: ParseOptions,
) -> Result<(Score, ParseDiagnostics), KernFileError> {
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "score".to_string());
    Ok(parse_kern_with(&text, &name, options)?)
}

#[derive(Debug, Error)]
pub enum KernFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Kern(#[from] KernError),
}

/// One sub-token of a data token (a chord member, or the whole token).
struct SubToken {
    pitch: Option<Pitch>,
    duration: RationalDuration,
    tie_start: bool,
    tie_end: bool,
    markers: BTreeSet<Marker>,
}

fn recip_duration(digits: &str, dots: u32) -> Result<RationalDuration, TokenError> {
    let base = match digits {
        "0" => RationalDuration::from_integer(8),
        "00" => RationalDuration::from_integer(16),
        "000" => RationalDuration::from_integer(32),
        d if d.starts_with('0') => {
            return Err(TokenError::Malformed(format!("invalid duration `{d}`")))
        }
        d => {
            let n: u64 = d
                .parse()
                .map_err(|_| TokenError::Malformed(format!("invalid duration `{d}`")))?;
            RationalDuration::new(4, n)
        }
    };
    // each dot adds half of the previous value: base * (2 - 2^-dots)
    let pow = 1u64 << dots;
    Ok(base.scale(2 * pow - 1, pow))
}

fn parse_subtoken(raw: &str) -> Result<SubToken, TokenError> {
    let mut digits = String::new();
    let mut digit_runs = 0;
    let mut prev_digit = false;
    let mut dots = 0u32;
    let mut letter: Option<char> = None;
    let mut letter_count = 0i32;
    let mut rest = false;
    let (mut sharps, mut flats, mut naturals) = (0i32, 0i32, 0i32);
    let mut tie_start = false;
    let mut tie_end = false;
    let mut markers = BTreeSet::new();

    for c in raw.chars() {
        let is_digit = c.is_ascii_digit();
        if is_digit {
            if !prev_digit {
                digit_runs += 1;
            }
            digits.push(c);
        }
        prev_digit = is_digit;
        if is_digit {
            continue;
        }
        match c {
            '.' => dots += 1,
            'a'..='g' | 'A'..='G' => {
                match letter {
                    Some(l) if l != c => {
                        return Err(TokenError::Malformed(format!(
                            "contradictory pitch letters `{l}` and `{c}`"
                        )))
                    }
                    _ => letter = Some(c),
                }
                letter_count += 1;
            }
            'r' => rest = true,
            '#' => sharps += 1,
            '-' => flats += 1,
            'n' => naturals += 1,
            ';' => {
                markers.insert(Marker::Fermata);
            }
            '\'' => {
                markers.insert(Marker::Staccato);
            }
            '^' => {
                markers.insert(Marker::Accent);
            }
            '[' => tie_start = true,
            ']' => tie_end = true,
            '_' => {
                tie_start = true;
                tie_end = true;
            }
            'q' | 'Q' => return Err(TokenError::Unsupported("grace notes".to_string())),
            '%' => {
                return Err(TokenError::Malformed(
                    "rational durations are outside the supported subset".to_string(),
                ))
            }
            // beams, slurs, phrases, stems, editorial and ornament marks
            'L' | 'J' | 'K' | 'k' | '(' | ')' | '{' | '}' | '&' | '/' | '\\' | 'x' | 'X' | 'y'
            | 'Y' | '?' | '~' | '`' | 'z' | 'v' | 'u' | 't' | 'T' | 'M' | 'm' | 'W' | 'w' | 'S'
            | '$' | 'O' | 'R' | ',' | ':' | 'o' | 'P' | 'p' | '<' | '>' | '|' | 'H' | 'h' | 'I'
            | 'i' => {}
            _ => return Err(TokenError::Malformed(format!("unexpected character `{c}`"))),
        }
    }

    if digit_runs == 0 {
        return Err(TokenError::Malformed("no duration digits".to_string()));
    }
    if digit_runs > 1 {
        return Err(TokenError::Malformed("more than one duration".to_string()));
    }
    if dots > 3 {
        return Err(TokenError::Malformed(format!("{dots} dots (at most 3)")));
    }
    if rest && letter.is_some() {
        return Err(TokenError::Malformed("both a pitch and a rest".to_string()));
    }
    if !rest && letter.is_none() {
        return Err(TokenError::Malformed("no pitch or rest".to_string()));
    }
    let mixed = [sharps > 0, flats > 0, naturals > 0]
        .iter()
        .filter(|b| **b)
        .count();
    if mixed > 1 || sharps > 2 || flats > 2 || naturals > 1 {
        return Err(TokenError::Malformed(
            "contradictory accidentals".to_string(),
        ));
    }
    let duration = recip_duration(&digits, dots)?;
    let pitch = letter.map(|l| {
        let step = Step::from_char(l).expect("letter checked above");
        let octave = if l.is_ascii_lowercase() {
            3 + letter_count
        } else {
            4 - letter_count
        };
        Pitch::new(step, sharps - flats, octave)
    });
    Ok(SubToken {
        pitch,
        duration,
        tie_start,
        tie_end,
        markers,
    })
}

/// Parses one data token into an event with zero offset. Space-separated
/// sub-tokens form a chord; the chord takes the first member's duration.
pub fn parse_kern_token(raw: &str) -> Result<Event, TokenError> {
    let subs = raw
        .split_whitespace()
        .map(parse_subtoken)
        .collect::<Result<Vec<_>, _>>()?;
    let first = subs
        .first()
        .ok_or_else(|| TokenError::Malformed("empty token".to_string()))?;
    let pitches: Vec<Pitch> = subs.iter().filter_map(|s| s.pitch).collect();
    let mut event = Event::sounding(pitches, first.duration);
    if !event.is_rest() {
        let sounding = subs.iter().filter(|s| s.pitch.is_some());
        for s in sounding {
            event.tied_to |= s.tie_start;
            event.tied_from |= s.tie_end;
        }
    }
    event.markers = subs
        .iter()
        .flat_map(|s| s.markers.iter().copied())
        .collect();
    Ok(event)
}

#[derive(Default)]
struct SpineState {
    column: usize,
    is_kern: bool,
    kind: String,
    label: Option<String>,
    measures: Vec<Measure>,
    events: Vec<Event>,
    offset: RationalDuration,
    key_signature: Vec<Spelling>,
    time_signature: Option<TimeSignature>,
    clef: Option<String>,
    // signatures captured when the current measure got its first event
    measure_context: Option<(Vec<Spelling>, Option<TimeSignature>, Option<String>)>,
    opened: bool,
    last_duration: Option<RationalDuration>,
}

impl SpineState {
    fn new(kind: &str, column: usize) -> Self {
        SpineState {
            column,
            is_kern: kind == "**kern",
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    fn push_event(&mut self, mut event: Event) {
        if self.measure_context.is_none() {
            self.measure_context = Some((
                self.key_signature.clone(),
                self.time_signature,
                self.clef.clone(),
            ));
        }
        event.offset = self.offset;
        self.offset = self.offset + event.duration;
        self.last_duration = Some(event.duration);
        self.events.push(event);
    }

    /// Closes the measure in progress. Returns the new measure's index, if
    /// a measure was emitted.
    fn close_measure(&mut self, barline: BarlineKind) -> Option<u32> {
        let emitted = if self.events.is_empty() && !self.opened {
            None
        } else {
            let (key_signature, time_signature, clef) =
                self.measure_context.take().unwrap_or_else(|| {
                    (
                        self.key_signature.clone(),
                        self.time_signature,
                        self.clef.clone(),
                    )
                });
            let index = match self.measures.last() {
                Some(m) => m.index + 1,
                None => {
                    let content: RationalDuration = self.events.iter().map(|e| e.duration).sum();
                    let short = time_signature.is_some_and(|ts| content < ts.measure_length());
                    if !self.opened && short {
                        0
                    } else {
                        1
                    }
                }
            };
            self.measures.push(Measure {
                index,
                events: std::mem::take(&mut self.events),
                key_signature,
                time_signature,
                barline,
                clef,
            });
            Some(index)
        };
        self.offset = RationalDuration::ZERO;
        self.measure_context = None;
        self.opened = true;
        emitted
    }
}

struct Parser {
    options: ParseOptions,
    diagnostics: ParseDiagnostics,
    spines: Vec<SpineState>,
    finished: Vec<SpineState>,
    declared_key: Option<Key>,
    ignored_kinds: BTreeSet<String>,
}

fn fatal(line: usize, message: impl Into<String>) -> KernError {
    KernError::FatalSyntax {
        line,
        message: message.into(),
    }
}

fn parse_key_signature(body: &str) -> Option<Vec<Spelling>> {
    let mut out = Vec::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        let step = Step::from_char(c).filter(|_| c.is_ascii_lowercase())?;
        let mut alter = 0;
        while let Some(&a) = chars.peek() {
            match a {
                '#' => alter += 1,
                '-' => alter -= 1,
                'n' => {}
                _ => break,
            }
            chars.next();
        }
        out.push(Spelling::new(step, alter));
    }
    Some(out)
}

fn parse_key_designation(token: &str) -> Option<Key> {
    let body = token.strip_prefix('*')?.strip_suffix(':')?;
    let first = body.chars().next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    let tonic: Spelling = body.parse().ok()?;
    let mode = if first.is_ascii_lowercase() {
        Mode::Minor
    } else {
        Mode::Major
    };
    Some(Key::new(tonic, mode))
}

fn parse_time_signature(token: &str) -> Option<TimeSignature> {
    let body = token.strip_prefix("*M")?;
    let (beats, unit) = body.split_once('/')?;
    let beats: u32 = beats.parse().ok()?;
    let unit: u32 = unit.parse().ok()?;
    (beats > 0 && unit > 0).then(|| TimeSignature::new(beats, unit))
}

fn barline_kind(token: &str) -> BarlineKind {
    if token.starts_with("==") {
        BarlineKind::Final
    } else if token.contains(':') {
        BarlineKind::Repeat
    } else {
        BarlineKind::Normal
    }
}

impl Parser {
    fn new(options: ParseOptions) -> Self {
        Parser {
            options,
            diagnostics: ParseDiagnostics::default(),
            spines: Vec::new(),
            finished: Vec::new(),
            declared_key: None,
            ignored_kinds: BTreeSet::new(),
        }
    }

    fn warn(&mut self, line: usize, message: impl Into<String>) {
        self.diagnostics.warnings.push(Warning {
            line,
            message: message.into(),
        });
    }

    fn run(
        mut self,
        text: &str,
        source_name: &str,
    ) -> Result<(Score, ParseDiagnostics), KernError> {
        if text.trim().is_empty() {
            return Err(KernError::Empty);
        }
        let records = tokenize(text);
        let mut records = records.into_iter();

        let header = records
            .next()
            .ok_or_else(|| fatal(1, "no exclusive interpretation record"))?;
        let header_line = header[0].line;
        if header
            .iter()
            .any(|t| t.classification != TokenClass::ExclusiveInterp)
        {
            return Err(fatal(
                header_line,
                "the first record must be exclusive interpretations such as **kern",
            ));
        }
        self.spines = header
            .iter()
            .enumerate()
            .map(|(i, t)| SpineState::new(&t.raw, i))
            .collect();
        if !self.spines.iter().any(|s| s.is_kern) {
            return Err(fatal(header_line, "no **kern spine"));
        }

        for record in records {
            let line = record[0].line;
            if self.spines.is_empty() {
                if record[0].classification == TokenClass::Comment {
                    continue;
                }
                return Err(fatal(line, "record after all spines were terminated"));
            }
            if record.len() != self.spines.len() {
                return Err(fatal(
                    line,
                    format!(
                        "record has {} fields but {} spines are active",
                        record.len(),
                        self.spines.len()
                    ),
                ));
            }
            let class = record[0].classification;
            let consistent = record.iter().all(|t| match class {
                TokenClass::ExclusiveInterp | TokenClass::TandemInterp => matches!(
                    t.classification,
                    TokenClass::ExclusiveInterp | TokenClass::TandemInterp
                ),
                TokenClass::Data | TokenClass::Null => {
                    matches!(t.classification, TokenClass::Data | TokenClass::Null)
                }
                other => t.classification == other,
            });
            if !consistent {
                return Err(fatal(line, "record mixes token types across spines"));
            }
            match class {
                TokenClass::Comment => {}
                TokenClass::ExclusiveInterp | TokenClass::TandemInterp => {
                    self.interpretation_record(&record)?
                }
                TokenClass::Barline => self.barline_record(&record),
                TokenClass::Data | TokenClass::Null => self.data_record(&record)?,
            }
        }

        if !self.spines.is_empty() {
            self.warn(0, "file ends without spine terminators (*-)");
            for mut spine in std::mem::take(&mut self.spines) {
                if !spine.events.is_empty() {
                    spine.close_measure(BarlineKind::Normal);
                }
                self.finished.push(spine);
            }
        }
        self.finish(source_name)
    }

    fn interpretation_record(&mut self, record: &[KernToken]) -> Result<(), KernError> {
        let mut terminated = vec![false; self.spines.len()];
        for (i, tok) in record.iter().enumerate() {
            let raw = tok.raw.as_str();
            let line = tok.line;
            match raw {
                "*-" => terminated[i] = true,
                "*^" => return Err(unsupported(line, "spine split (*^)")),
                "*v" => return Err(unsupported(line, "spine join (*v)")),
                "*+" => return Err(unsupported(line, "spine addition (*+)")),
                "*x" => return Err(unsupported(line, "spine exchange (*x)")),
                "*" => {}
                _ if raw.starts_with("**") => {
                    return Err(unsupported(
                        line,
                        "exclusive interpretation inside the body",
                    ))
                }
                _ => {
                    let spine = &mut self.spines[i];
                    if !spine.is_kern {
                        continue;
                    }
                    if let Some(ts) = parse_time_signature(raw) {
                        spine.time_signature = Some(ts);
                    } else if let Some(body) =
                        raw.strip_prefix("*k[").and_then(|r| r.strip_suffix(']'))
                    {
                        match parse_key_signature(body) {
                            Some(sig) => spine.key_signature = sig,
                            None => {
                                return Err(fatal(line, format!("invalid key signature `{raw}`")))
                            }
                        }
                    } else if let Some(key) = parse_key_designation(raw) {
                        if self.declared_key.is_none() {
                            self.declared_key = Some(key);
                        }
                    } else if let Some(clef) = raw.strip_prefix("*clef") {
                        spine.clef = Some(clef.to_string());
                    } else if let Some(name) = raw.strip_prefix("*I\"") {
                        spine.label = Some(name.to_string());
                    } else if let Some(class) = raw.strip_prefix("*I") {
                        if spine.label.is_none() && !class.is_empty() {
                            spine.label = Some(class.to_string());
                        }
                    }
                    // other tandem interpretations (tempo, staff, section labels) are ignored
                }
            }
        }
        if terminated.iter().any(|t| *t) {
            let spines = std::mem::take(&mut self.spines);
            for (mut spine, done) in spines.into_iter().zip(terminated) {
                if done {
                    if !spine.events.is_empty() {
                        spine.close_measure(BarlineKind::Normal);
                    }
                    self.finished.push(spine);
                } else {
                    self.spines.push(spine);
                }
            }
        }
        Ok(())
    }

    fn barline_record(&mut self, record: &[KernToken]) {
        for (spine, tok) in self.spines.iter_mut().zip(record) {
            if spine.is_kern {
                spine.close_measure(barline_kind(&tok.raw));
            }
        }
    }

    fn data_record(&mut self, record: &[KernToken]) -> Result<(), KernError> {
        for (i, tok) in record.iter().enumerate() {
            if tok.classification == TokenClass::Null {
                continue;
            }
            if !self.spines[i].is_kern {
                let kind = self.spines[i].kind.clone();
                if self.ignored_kinds.insert(kind.clone()) {
                    self.warn(tok.line, format!("ignoring non-kern spine {kind}"));
                }
                continue;
            }
            let event = match parse_kern_token(&tok.raw) {
                Ok(e) => e,
                Err(TokenError::Unsupported(feature)) => {
                    return Err(unsupported(tok.line, &feature))
                }
                Err(TokenError::Malformed(reason)) if self.options.recover => {
                    let duration = self.spines[i]
                        .last_duration
                        .unwrap_or(RationalDuration::from_integer(1));
                    self.diagnostics.recovered_tokens += 1;
                    self.warn(
                        tok.line,
                        format!(
                            "replaced malformed token `{}` by a rest ({reason})",
                            tok.raw
                        ),
                    );
                    Event::rest(duration)
                }
                Err(TokenError::Malformed(reason)) => {
                    return Err(KernError::MalformedToken {
                        line: tok.line,
                        token: tok.raw.clone(),
                        reason,
                    })
                }
            };
            self.spines[i].push_event(event);
        }
        Ok(())
    }

    fn finish(mut self, source_name: &str) -> Result<(Score, ParseDiagnostics), KernError> {
        let mut kern_spines: Vec<SpineState> = std::mem::take(&mut self.finished)
            .into_iter()
            .filter(|s| s.is_kern)
            .collect();
        kern_spines.sort_by_key(|s| s.column);
        let mut parts: Vec<Part> = kern_spines
            .into_iter()
            .enumerate()
            .map(|(i, s)| Part {
                id: format!("P{}", i + 1),
                label: s.label,
                measures: s.measures,
            })
            .collect();

        for part in &parts {
            for m in &part.measures {
                let Some(ts) = m.time_signature else { continue };
                let content = m.content_length();
                if m.index == 0 {
                    self.warn(
                        0,
                        format!(
                            "part {}: pickup measure of {} quarter notes indexed 0",
                            part.id, content
                        ),
                    );
                } else if content != ts.measure_length() {
                    self.warn(
                        0,
                        format!(
                            "part {}, measure {}: events last {} quarter notes but {} requires {}",
                            part.id,
                            m.index,
                            content,
                            ts,
                            ts.measure_length()
                        ),
                    );
                }
            }
        }

        let longest = parts.iter().map(|p| p.measures.len()).max().unwrap_or(0);
        if parts.iter().any(|p| p.measures.len() != longest) {
            let template = parts
                .iter()
                .find(|p| p.measures.len() == longest)
                .map(|p| p.measures.clone())
                .unwrap_or_default();
            for part in &mut parts {
                let have = part.measures.len();
                if have == longest {
                    continue;
                }
                for m in &template[have..] {
                    let mut rest = Event::rest(m.nominal_length());
                    rest.offset = RationalDuration::ZERO;
                    part.measures.push(Measure {
                        index: m.index,
                        events: vec![rest],
                        key_signature: part
                            .measures
                            .last()
                            .map(|l| l.key_signature.clone())
                            .unwrap_or_default(),
                        time_signature: m.time_signature,
                        barline: m.barline,
                        clef: None,
                    });
                }
                self.diagnostics.warnings.push(Warning {
                    line: 0,
                    message: format!(
                        "part {} had {} measures; padded to {} with rests",
                        part.id, have, longest
                    ),
                });
            }
        }

        // pickup detection is per spine; align indices to the first part
        if let Some(first) = parts
            .first()
            .map(|p| p.measures.iter().map(|m| m.index).collect::<Vec<_>>())
        {
            for part in parts.iter_mut().skip(1) {
                for (m, idx) in part.measures.iter_mut().zip(&first) {
                    m.index = *idx;
                }
            }
        }

        let score = Score::new(source_name, parts, self.declared_key)
            .map_err(|e| fatal(0, e.to_string()))?;
        Ok((score, self.diagnostics))
    }
}

fn unsupported(line: usize, feature: &str) -> KernError {
    KernError::UnsupportedFeature {
        line,
        feature: feature.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FileStatus {
    Ok {
        warnings: usize,
        recovered_tokens: usize,
    },
    Fatal {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileReport {
    pub path: PathBuf,
    #[serde(flatten)]
    pub status: FileStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusReport {
    pub files: Vec<FileReport>,
    pub total_warnings: usize,
    pub fatal_count: usize,
}

impl CorpusReport {
    pub fn is_success(&self) -> bool {
        self.fatal_count == 0
    }
}

/// Parses every `.krn` file directly inside `dir`, in name order.
pub fn validate_corpus(dir: &Path) -> io::Result<CorpusReport> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "krn"))
        .collect();
    paths.sort();
    let mut report = CorpusReport::default();
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let status = match parse_kern(&text) {
            Ok((_, diag)) => {
                report.total_warnings += diag.warnings.len();
                FileStatus::Ok {
                    warnings: diag.warnings.len(),
                    recovered_tokens: diag.recovered_tokens,
                }
            }
            Err(e) => {
                report.fatal_count += 1;
                FileStatus::Fatal {
                    message: e.to_string(),
                }
            }
        };
        report.files.push(FileReport { path, status });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::EventKind;

    fn q(n: u64, d: u64) -> RationalDuration {
        RationalDuration::new(n, d)
    }

    fn pitch(s: &str) -> Pitch {
        s.parse().unwrap()
    }

    #[test]
    fn four_quarters() {
        let (score, diag) = parse_kern("**kern\n*M4/4\n=1\n4c\n4d\n4e\n4f\n==\n*-").unwrap();
        assert!(diag.warnings.is_empty(), "{:?}", diag.warnings);
        assert_eq!(score.parts().len(), 1);
        let m = &score.parts()[0].measures;
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].index, 1);
        assert_eq!(m[0].barline, BarlineKind::Final);
        let pitches: Vec<_> = m[0].events.iter().map(|e| e.pitches[0]).collect();
        assert_eq!(pitches, ["C4", "D4", "E4", "F4"].map(pitch));
        let offsets: Vec<_> = m[0].events.iter().map(|e| e.offset).collect();
        assert_eq!(offsets, [q(0, 1), q(1, 1), q(2, 1), q(3, 1)]);
    }

    #[test]
    fn dotted_rest() {
        let e = parse_kern_token("8.r").unwrap();
        assert_eq!(e.kind, EventKind::Rest);
        // 4/8 * (2 - 1/2)
        assert_eq!(e.duration, q(3, 4));
    }

    #[test]
    fn token_examples() {
        let e = parse_kern_token("4c#").unwrap();
        assert_eq!(e.pitches, vec![pitch("C#4")]);
        assert_eq!(e.duration, q(1, 1));

        let e = parse_kern_token("2.GG").unwrap();
        assert_eq!(e.pitches, vec![pitch("G2")]);
        assert_eq!(e.duration, q(3, 1));

        let e = parse_kern_token("8e 8g 8cc").unwrap();
        assert_eq!(e.kind, EventKind::Chord);
        assert_eq!(e.pitches, ["E4", "G4", "C5"].map(pitch));
        assert_eq!(e.duration, q(1, 2));
    }

    #[test]
    fn octave_and_accidentals() {
        assert_eq!(parse_kern_token("4cc").unwrap().pitches[0], pitch("C5"));
        assert_eq!(parse_kern_token("4C").unwrap().pitches[0], pitch("C3"));
        assert_eq!(parse_kern_token("4CC").unwrap().pitches[0], pitch("C2"));
        assert_eq!(parse_kern_token("4b--").unwrap().pitches[0], pitch("Bbb4"));
        assert_eq!(parse_kern_token("4f##").unwrap().pitches[0], pitch("F##4"));
        assert_eq!(parse_kern_token("4en").unwrap().pitches[0], pitch("E4"));
    }

    #[test]
    fn durations() {
        assert_eq!(parse_kern_token("0c").unwrap().duration, q(8, 1));
        assert_eq!(parse_kern_token("00c").unwrap().duration, q(16, 1));
        assert_eq!(parse_kern_token("12c").unwrap().duration, q(1, 3));
        assert_eq!(parse_kern_token("4..c").unwrap().duration, q(7, 4));
        assert_eq!(parse_kern_token("2...c").unwrap().duration, q(15, 4));
        assert!(parse_kern_token("4....c").is_err());
    }

    #[test]
    fn markers_and_ties() {
        let e = parse_kern_token("4c;").unwrap();
        assert!(e.markers.contains(&Marker::Fermata));
        let e = parse_kern_token("8d'^").unwrap();
        assert_eq!(e.markers.len(), 2);
        let e = parse_kern_token("[4c").unwrap();
        assert!(e.tied_to && !e.tied_from);
        let e = parse_kern_token("4c]").unwrap();
        assert!(e.tied_from && !e.tied_to);
        let e = parse_kern_token("4c_").unwrap();
        assert!(e.tied_from && e.tied_to);
    }

    #[test]
    fn beams_and_slurs_are_stripped() {
        let e = parse_kern_token("(8cL").unwrap();
        assert_eq!(e.pitches, vec![pitch("C4")]);
        let e = parse_kern_token("8dJ)").unwrap();
        assert_eq!(e.pitches, vec![pitch("D4")]);
    }

    #[test]
    fn malformed_tokens() {
        assert!(matches!(
            parse_kern_token("c"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4cd"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4cC"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4c#-"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4cr"),
            Err(TokenError::Malformed(_))
        ));
        assert!(matches!(
            parse_kern_token("4qc"),
            Err(TokenError::Unsupported(_))
        ));
    }

    #[test]
    fn spine_split_is_unsupported() {
        let text = "**kern\n*M4/4\n*^\n4c\t4e\n*v\t*v\n*-";
        match parse_kern(text) {
            Err(KernError::UnsupportedFeature { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grace_note_is_unsupported() {
        let text = "**kern\n=1\n8qc\n4d\n*-";
        assert!(matches!(
            parse_kern(text),
            Err(KernError::UnsupportedFeature { line: 3, .. })
        ));
    }

    #[test]
    fn fatal_errors() {
        assert_eq!(parse_kern(""), Err(KernError::Empty));
        assert!(matches!(
            parse_kern("**text\nhello\n*-"),
            Err(KernError::FatalSyntax { .. })
        ));
        assert!(matches!(
            parse_kern("4c\n4d"),
            Err(KernError::FatalSyntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_kern("**kern\t**kern\n4c\n*-\t*-"),
            Err(KernError::FatalSyntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_kern("**kern\n4c\tzz\n*-"),
            Err(KernError::FatalSyntax { .. })
        ));
    }

    #[test]
    fn malformed_token_is_fatal_without_recovery() {
        let text = "**kern\n*M2/4\n=1\n4c\n4h\n==\n*-";
        assert!(matches!(
            parse_kern(text),
            Err(KernError::MalformedToken { line: 5, .. })
        ));
        let (score, diag) = parse_kern_with(text, "x", ParseOptions { recover: true }).unwrap();
        assert_eq!(diag.recovered_tokens, 1);
        let events = &score.parts()[0].measures[0].events;
        assert!(events[1].is_rest());
        assert_eq!(events[1].duration, q(1, 1));
    }

    #[test]
    fn pickup_measure_indexed_zero() {
        let text = "**kern\n*M3/4\n4g\n=1\n4c\n4e\n4g\n=2\n2.c\n==\n*-";
        let (score, diag) = parse_kern(text).unwrap();
        let idx: Vec<_> = score.parts()[0].measures.iter().map(|m| m.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(diag.warnings.iter().any(|w| w.message.contains("pickup")));
    }

    #[test]
    fn measures_without_leading_barline() {
        let text = "**kern\n*M2/4\n4c\n4d\n=2\n4e\n4f\n==\n*-";
        let (score, diag) = parse_kern(text).unwrap();
        assert!(diag.warnings.is_empty());
        let idx: Vec<_> = score.parts()[0].measures.iter().map(|m| m.index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn interpretations_threaded_into_measures() {
        let text =
            "**kern\n*clefG2\n*k[f#]\n*G:\n*M3/4\n=1\n4g\n4a\n4b\n=2\n*M2/4\n*k[]\n4c\n4c\n==\n*-";
        let (score, _) = parse_kern(text).unwrap();
        assert_eq!(score.declared_key(), Some(Key::major(Step::G, 0)));
        let m = &score.parts()[0].measures;
        assert_eq!(m[0].key_signature, vec![Spelling::new(Step::F, 1)]);
        assert_eq!(m[0].time_signature, Some(TimeSignature::new(3, 4)));
        assert_eq!(m[0].clef.as_deref(), Some("G2"));
        assert_eq!(m[1].time_signature, Some(TimeSignature::new(2, 4)));
        assert!(m[1].key_signature.is_empty());
    }

    #[test]
    fn two_spines_with_nulls() {
        let text = "**kern\t**kern\n*M2/4\t*M2/4\n=1\t=1\n2C\t4e\n.\t4f\n==\t==\n*-\t*-";
        let (score, _) = parse_kern(text).unwrap();
        assert_eq!(score.parts().len(), 2);
        assert_eq!(score.parts()[0].measures[0].events.len(), 1);
        assert_eq!(score.parts()[1].measures[0].events.len(), 2);
        assert_eq!(score.parts()[1].measures[0].events[1].offset, q(1, 1));
    }

    #[test]
    fn non_kern_spines_ignored() {
        let text = "**kern\t**dynam\n=1\t=1\n4c\tp\n4d\t.\n==\t==\n*-\t*-";
        let (score, diag) = parse_kern(text).unwrap();
        assert_eq!(score.parts().len(), 1);
        assert!(diag.warnings.iter().any(|w| w.message.contains("**dynam")));
    }

    #[test]
    fn comments_and_repeat_barlines() {
        let text =
            "!!!COM: Anon\n**kern\n!! global\n*M1/4\n=1\n! local\n4c\n=:|!\n4d\n==\n*-\n!!! end";
        let (score, _) = parse_kern(text).unwrap();
        let m = &score.parts()[0].measures;
        assert_eq!(m[0].barline, BarlineKind::Repeat);
        assert_eq!(m[1].barline, BarlineKind::Final);
    }

    #[test]
    fn record_after_termination_is_fatal() {
        assert!(matches!(
            parse_kern("**kern\n4c\n*-\n4d"),
            Err(KernError::FatalSyntax { line: 4, .. })
        ));
    }

    #[test]
    fn classification() {
        assert_eq!(TokenClass::of("**kern"), TokenClass::ExclusiveInterp);
        assert_eq!(TokenClass::of("*M4/4"), TokenClass::TandemInterp);
        assert_eq!(TokenClass::of("=12"), TokenClass::Barline);
        assert_eq!(TokenClass::of("!x"), TokenClass::Comment);
        assert_eq!(TokenClass::of("."), TokenClass::Null);
        assert_eq!(TokenClass::of("4c"), TokenClass::Data);
        let toks = tokenize("**kern\t**kern\n4c\t.\n");
        assert_eq!(toks[1][1].classification, TokenClass::Null);
        assert_eq!(toks[1][1].spine, 1);
        assert_eq!(toks[1][1].line, 2);
    }

    #[test]
    fn overfull_measure_warns() {
        let text = "**kern\n*M2/4\n=1\n4c\n4d\n4e\n==\n*-";
        let (_, diag) = parse_kern(text).unwrap();
        assert_eq!(diag.warnings.len(), 1);
        assert!(diag.warnings[0].message.contains("measure 1"));
    }

    #[test]
    fn corpus_validation() {
        let dir = tempfile::tempdir().unwrap();
        let report = validate_corpus(dir.path()).unwrap();
        assert!(report.files.is_empty() && report.is_success());

        fs::write(dir.path().join("a.krn"), "**kern\n4c\n*-\n").unwrap();
        fs::write(dir.path().join("b.krn"), "**kern\n4cd\n*-\n").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let report = validate_corpus(dir.path()).unwrap();
        assert_eq!(report.files.len(), 2);
        assert_eq!(report.fatal_count, 1);
        assert!(!report.is_success());
        assert!(matches!(report.files[1].status, FileStatus::Fatal { .. }));
        assert!(validate_corpus(&dir.path().join("missing")).is_err());
    }
}
