//! The analysis tool registry.
//!
//! Every tool runs a deterministic operator over a parsed score and reports
//! back only a natural-language summary. The typed result is kept alongside
//! as a structured payload for logging and replay, but the summary is the
//! only thing a caller such as the agent is meant to read. Failures of any
//! kind become an unsuccessful [`Evidence`] with a one-sentence diagnosis.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::descriptive::{
    duration_stats, expression_markers, rhythm_profile, score_overview, time_signatures,
    DescriptiveError, DurationStats, MarkerEntry, RhythmProfile, ScoreOverview, Spanned,
};
use crate::harmony::{
    analyze_progression, chordify, identify_chord, roman_numeral, slice_at, ChordLabel,
    HarmonyError, KeySource, Progression, RomanNumeral, VerticalSlice,
};
use crate::kern::parse_kern;
use crate::key::{
    estimate_key_with, non_diatonic_notes, windowed_keys_with, KeyError, KeyEstimate, KeyProfiles,
    KeySegment, LocatedPitch,
};
use crate::pitch::{
    ambitus, interval_between, melodic_intervals, melody, pitch_histogram, Ambitus, Interval,
    PitchOpError, Weighting,
};
use crate::score::{Key, MeasureSpan, Pitch, RationalDuration, Score, ScoreError, TimeSignature};

/// The six analysis dimensions a tool can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    PitchInterval,
    ChordHarmony,
    KeyScale,
    StructuralStatistics,
    RhythmMeter,
    PerformanceExpression,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::PitchInterval,
        Dimension::ChordHarmony,
        Dimension::KeyScale,
        Dimension::StructuralStatistics,
        Dimension::RhythmMeter,
        Dimension::PerformanceExpression,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::PitchInterval => "Pitch & Interval",
            Dimension::ChordHarmony => "Chord & Harmony",
            Dimension::KeyScale => "Key & Scale",
            Dimension::StructuralStatistics => "Score Structural Statistics",
            Dimension::RhythmMeter => "Rhythm & Meter",
            Dimension::PerformanceExpression => "Performance & Expression",
        }
    }

    /// Accepts the snake_case name, the label, or a short form such as
    /// `pitch`, `harmony`, `key`, `structure`, `rhythm`, `expression`.
    pub fn parse(text: &str) -> Option<Dimension> {
        let norm: String = text
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Some(match norm.as_str() {
            "pitchinterval" | "pi" | "pitch" | "interval" => Dimension::PitchInterval,
            "chordharmony" | "ch" | "chord" | "harmony" => Dimension::ChordHarmony,
            "keyscale" | "ks" | "key" | "scale" => Dimension::KeyScale,
            "scorestructuralstatistics"
            | "sss"
            | "structuralstatistics"
            | "structure"
            | "statistics" => Dimension::StructuralStatistics,
            "rhythmmeter" | "rm" | "rhythm" | "meter" => Dimension::RhythmMeter,
            "performanceexpression" | "pe" | "performance" | "expression" => {
                Dimension::PerformanceExpression
            }
            _ => return None,
        })
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    /// `[from, to]`, inclusive measure numbers.
    Span,
    Measure,
    /// Quarter notes from the start of the measure: a number or `"n/d"`.
    Offset,
    Pitch,
    Part,
    Key,
    PositiveInteger,
    Boolean,
    Weighting,
}

impl ArgKind {
    fn describe(self) -> &'static str {
        match self {
            ArgKind::Span => "measure span [from, to]",
            ArgKind::Measure => "measure number",
            ArgKind::Offset => "offset in quarter notes",
            ArgKind::Pitch => "pitch name such as C#4",
            ArgKind::Part => "part such as P1",
            ArgKind::Key => "key such as G major",
            ArgKind::PositiveInteger => "positive integer",
            ArgKind::Boolean => "true or false",
            ArgKind::Weighting => "duration or onset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    pub required: bool,
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub dimension: Option<Dimension>,
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub returns: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, args: Value) -> Self {
        let args = match args {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        ToolCall {
            tool: tool.into(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub call: ToolCall,
    pub summary: String,
    pub structured: Value,
    pub ok: bool,
    pub error_text: Option<String>,
}

impl Evidence {
    fn failure(call: ToolCall, diagnosis: String) -> Self {
        Evidence {
            call,
            summary: diagnosis.clone(),
            structured: Value::Null,
            ok: false,
            error_text: Some(diagnosis),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("no such tool: {0}")]
    UnknownTool(String),
    #[error("payload does not match the output of {tool}: {reason}")]
    MalformedPayload { tool: String, reason: String },
}

pub const META_TOOL: &str = "list_tools";

fn arg(name: &str, kind: ArgKind, required: bool, default: Option<Value>) -> ArgSpec {
    ArgSpec {
        name: name.to_string(),
        kind,
        required,
        default,
    }
}

fn tool(
    name: &str,
    dimension: Dimension,
    description: &str,
    args: Vec<ArgSpec>,
    returns: &str,
) -> ToolSchema {
    ToolSchema {
        name: name.to_string(),
        dimension: Some(dimension),
        description: description.to_string(),
        args,
        returns: returns.to_string(),
    }
}

fn span_arg() -> ArgSpec {
    arg("span", ArgKind::Span, false, None)
}

fn default_roster() -> Vec<ToolSchema> {
    use ArgKind as K;
    use Dimension as D;
    vec![
        tool(
            "get_interval",
            D::PitchInterval,
            "Names the interval between two pitches.",
            vec![arg("from", K::Pitch, true, None), arg("to", K::Pitch, true, None)],
            "quality, size, semitones and direction",
        ),
        tool(
            "get_melodic_intervals",
            D::PitchInterval,
            "Lists successive intervals of a part's melody (top note of chords, rests skipped, ties merged).",
            vec![arg("part", K::Part, false, None), span_arg()],
            "the melody notes and each interval between them",
        ),
        tool(
            "get_pitch_histogram",
            D::PitchInterval,
            "Totals each pitch class over the selected measures.",
            vec![span_arg(), arg("weighting", K::Weighting, false, Some(json!("duration")))],
            "weight per pitch class",
        ),
        tool(
            "get_ambitus",
            D::PitchInterval,
            "Finds the lowest and highest pitch of a part or of the whole score.",
            vec![arg("part", K::Part, false, None)],
            "lowest pitch, highest pitch and the interval between them",
        ),
        tool(
            "chordify_range",
            D::ChordHarmony,
            "Collapses all parts into vertical sonorities at every onset.",
            vec![span_arg()],
            "each sonority with its location and pitches",
        ),
        tool(
            "identify_chord_at",
            D::ChordHarmony,
            "Identifies the chord sounding at a measure and offset.",
            vec![
                arg("measure", K::Measure, true, None),
                arg("offset", K::Offset, false, Some(json!(0))),
            ],
            "root, quality, bass and inversion",
        ),
        tool(
            "roman_numeral_at",
            D::ChordHarmony,
            "Gives the roman numeral of the chord at a measure and offset, in a given key or the estimated key of the score.",
            vec![
                arg("measure", K::Measure, true, None),
                arg("offset", K::Offset, false, Some(json!(0))),
                arg("key", K::Key, false, None),
            ],
            "chord and roman numeral",
        ),
        tool(
            "analyze_progression",
            D::ChordHarmony,
            "Labels every chord in the selected measures with roman numerals.",
            vec![
                span_arg(),
                arg("key", K::Key, false, None),
                arg("merge", K::Boolean, false, Some(json!(true))),
            ],
            "the sequence of chords and numerals",
        ),
        tool(
            "estimate_key",
            D::KeyScale,
            "Estimates the key of the selected measures from their pitch content.",
            vec![span_arg()],
            "best key, its correlation and the runner-up",
        ),
        tool(
            "windowed_key_estimation",
            D::KeyScale,
            "Slides a window over the score to find key areas and modulations.",
            vec![
                arg("window", K::PositiveInteger, false, Some(json!(4))),
                arg("persistence", K::PositiveInteger, false, Some(json!(2))),
            ],
            "key segments with their measure ranges",
        ),
        tool(
            "find_non_diatonic_notes",
            D::KeyScale,
            "Lists notes outside the scale of a key (given, or estimated for the selected measures).",
            vec![span_arg(), arg("key", K::Key, false, None)],
            "each chromatic note with its location",
        ),
        tool(
            "score_overview",
            D::StructuralStatistics,
            "Summarizes parts, measures, note counts, ranges and signatures.",
            vec![],
            "counts, ranges, time and key signatures",
        ),
        tool(
            "duration_stats",
            D::StructuralStatistics,
            "Computes shortest, longest, mean and most common note durations.",
            vec![arg("part", K::Part, false, None)],
            "duration statistics in quarter notes",
        ),
        tool(
            "get_time_signatures",
            D::RhythmMeter,
            "Lists the time signatures in force and where they apply.",
            vec![span_arg()],
            "time signatures with measure ranges",
        ),
        tool(
            "rhythm_profile",
            D::RhythmMeter,
            "Counts on-beat, off-beat and syncopated onsets and the durations used.",
            vec![arg("part", K::Part, false, None), span_arg()],
            "onset counts and a duration histogram",
        ),
        tool(
            "list_expression_markers",
            D::PerformanceExpression,
            "Lists fermatas, staccatos, accents and ties with their locations.",
            vec![span_arg()],
            "each marking with its location",
        ),
    ]
}

/// An immutable set of tools bound to a key-profile table.
#[derive(Debug, Clone)]
pub struct Registry {
    tools: Vec<ToolSchema>,
    profiles: KeyProfiles,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::with_profiles(KeyProfiles::default())
    }
}

impl Registry {
    pub fn with_profiles(profiles: KeyProfiles) -> Self {
        Registry {
            tools: default_roster(),
            profiles,
        }
    }

    /// A registry with no analysis tools. `list_tools` still answers.
    pub fn empty() -> Self {
        Registry {
            tools: Vec::new(),
            profiles: KeyProfiles::default(),
        }
    }

    pub fn tools(&self) -> &[ToolSchema] {
        &self.tools
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn profiles(&self) -> &KeyProfiles {
        &self.profiles
    }

    /// Human-readable roster for prompts.
    pub fn roster_text(&self) -> String {
        render_roster(&self.tools)
    }

    /// Runs a call. Never fails: every problem becomes an unsuccessful
    /// [`Evidence`].
    pub fn execute(&self, score: &Score, call: &ToolCall) -> Evidence {
        if call.tool == META_TOOL {
            return self.finish(
                call,
                ListToolsPayload {
                    tools: self.tools.clone(),
                },
            );
        }
        let Some(schema) = self.schema(&call.tool) else {
            return Evidence::failure(
                call.clone(),
                format!(
                    "There is no such tool as '{}'; call list_tools to see the available tools.",
                    sanitize(&call.tool)
                ),
            );
        };
        let args = match validate(schema, &call.args) {
            Ok(a) => a,
            Err(msg) => return Evidence::failure(call.clone(), msg),
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| self.dispatch(score, &call.tool, &args)));
        match outcome {
            Ok(Ok(payload)) => match render_summary(&call.tool, &payload) {
                Ok(summary) => Evidence {
                    call: call.clone(),
                    summary,
                    structured: payload,
                    ok: true,
                    error_text: None,
                },
                Err(_) => Evidence::failure(
                    call.clone(),
                    "The tool produced a result that could not be described.".to_string(),
                ),
            },
            Ok(Err(diagnosis)) => Evidence::failure(call.clone(), diagnosis),
            Err(_) => Evidence::failure(
                call.clone(),
                "The tool failed unexpectedly while analysing the score.".to_string(),
            ),
        }
    }

    fn finish<T: Serialize>(&self, call: &ToolCall, payload: T) -> Evidence {
        let value = serde_json::to_value(payload).expect("payload serializes");
        let summary = render_summary(&call.tool, &value).expect("fresh payload renders");
        Evidence {
            call: call.clone(),
            summary,
            structured: value,
            ok: true,
            error_text: None,
        }
    }

    fn dispatch(&self, s: &Score, tool: &str, a: &Args) -> Result<Value, String> {
        fn out<T: Serialize>(v: T) -> Result<Value, String> {
            Ok(serde_json::to_value(v).expect("payload serializes"))
        }
        match tool {
            "get_interval" => {
                let (from, to) = (a.pitch("from"), a.pitch("to"));
                out(IntervalPayload {
                    from,
                    to,
                    interval: interval_between(from, to),
                })
            }
            "get_melodic_intervals" => {
                let part = a.part(s)?;
                let span = a.span(s)?;
                let notes = melody(s, &part, span).map_err(|e| diagnose_score(s, &e))?;
                let intervals =
                    melodic_intervals(s, &part, span).map_err(|e| diagnose_score(s, &e))?;
                out(MelodicPayload {
                    part,
                    span,
                    notes,
                    intervals,
                })
            }
            "get_pitch_histogram" => {
                let span = a.span(s)?;
                let weighting = a.weighting("weighting");
                let weights =
                    pitch_histogram(s, span, weighting).map_err(|e| diagnose_score(s, &e))?;
                out(HistogramPayload {
                    span,
                    weighting,
                    weights,
                })
            }
            "get_ambitus" => {
                let part = a.opt_part(s)?;
                let result = ambitus(s, part.as_deref()).map_err(|e| match e {
                    PitchOpError::Score(e) => diagnose_score(s, &e),
                    PitchOpError::EmptySelection => no_notes(),
                })?;
                out(AmbitusPayload {
                    part,
                    ambitus: result,
                })
            }
            "chordify_range" => {
                let span = a.span(s)?;
                let slices = chordify(s, span).map_err(|e| diagnose_score(s, &e))?;
                out(ChordifyPayload { span, slices })
            }
            "identify_chord_at" => {
                let (measure, offset) = a.location(s)?;
                let slice = slice_at(s, measure, offset).map_err(|e| diagnose_harmony(s, &e))?;
                let chord = identify_chord(&slice.sounding)
                    .map_err(|e| diagnose_at(s, &e, measure, offset))?;
                out(ChordAtPayload {
                    measure,
                    offset,
                    sounding: slice.sounding,
                    chord,
                })
            }
            "roman_numeral_at" => {
                let (measure, offset) = a.location(s)?;
                let slice = slice_at(s, measure, offset).map_err(|e| diagnose_harmony(s, &e))?;
                let chord = identify_chord(&slice.sounding)
                    .map_err(|e| diagnose_at(s, &e, measure, offset))?;
                let (key, key_source) = match a.key("key") {
                    Some(k) => (k, KeySource::Provided),
                    None => {
                        let span = s.resolve_span(None).map_err(|e| diagnose_score(s, &e))?;
                        let estimate = estimate_key_with(s, span, &self.profiles)
                            .map_err(|e| diagnose_key(s, &e))?;
                        (estimate.key, KeySource::Estimated)
                    }
                };
                let numeral =
                    roman_numeral(&chord, key).map_err(|e| diagnose_at(s, &e, measure, offset))?;
                out(NumeralAtPayload {
                    measure,
                    offset,
                    chord,
                    numeral,
                    key_source,
                })
            }
            "analyze_progression" => {
                let span = a.span(s)?;
                let key = match a.key("key") {
                    Some(k) => Some(k),
                    None => match estimate_key_with(s, span, &self.profiles) {
                        Ok(e) => Some(e.key),
                        Err(KeyError::EmptySelection) => None,
                        Err(e) => return Err(diagnose_key(s, &e)),
                    },
                };
                let mut progression = analyze_progression(s, span, key, a.boolean("merge"))
                    .map_err(|e| diagnose_harmony(s, &e))?;
                if a.key("key").is_none() {
                    progression.key_source = KeySource::Estimated;
                }
                out(ProgressionPayload { span, progression })
            }
            "estimate_key" => {
                let span = a.span(s)?;
                let estimate =
                    estimate_key_with(s, span, &self.profiles).map_err(|e| diagnose_key(s, &e))?;
                out(EstimateKeyPayload { span, estimate })
            }
            "windowed_key_estimation" => {
                let window = a.integer("window") as usize;
                let persistence = a.integer("persistence") as usize;
                let segments = windowed_keys_with(s, window, persistence, &self.profiles)
                    .map_err(|e| diagnose_key(s, &e))?;
                out(WindowedPayload {
                    window,
                    persistence,
                    segments,
                })
            }
            "find_non_diatonic_notes" => {
                let span = a.span(s)?;
                let (key, key_source) = match a.key("key") {
                    Some(k) => (k, KeySource::Provided),
                    None => (
                        estimate_key_with(s, span, &self.profiles)
                            .map_err(|e| diagnose_key(s, &e))?
                            .key,
                        KeySource::Estimated,
                    ),
                };
                let notes = non_diatonic_notes(s, key, span).map_err(|e| diagnose_score(s, &e))?;
                out(NonDiatonicPayload {
                    span,
                    key,
                    key_source,
                    notes,
                })
            }
            "score_overview" => out(score_overview(s)),
            "duration_stats" => {
                let part = a.opt_part(s)?;
                let stats =
                    duration_stats(s, part.as_deref()).map_err(|e| diagnose_descriptive(s, &e))?;
                out(DurationStatsPayload { part, stats })
            }
            "get_time_signatures" => {
                let span = a.span(s)?;
                let signatures = time_signatures(s, span).map_err(|e| diagnose_score(s, &e))?;
                out(TimeSignaturesPayload { span, signatures })
            }
            "rhythm_profile" => {
                let part = a.part(s)?;
                let span = a.span(s)?;
                let profile =
                    rhythm_profile(s, &part, span).map_err(|e| diagnose_descriptive(s, &e))?;
                out(RhythmPayload {
                    part,
                    span,
                    profile,
                })
            }
            "list_expression_markers" => {
                let span = a.span(s)?;
                let markers = expression_markers(s, span).map_err(|e| diagnose_score(s, &e))?;
                out(MarkersPayload { span, markers })
            }
            other => Err(format!(
                "There is no such tool as '{}'; call list_tools to see the available tools.",
                sanitize(other)
            )),
        }
    }
}

/// Keeps echoed user text short and free of structure characters.
fn sanitize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || matches!(c, '_' | ' ' | '#' | '♯' | '♭' | '-'))
        .take(40)
        .collect();
    if cleaned.is_empty() {
        "(unnamed)".to_string()
    } else {
        cleaned
    }
}

// Argument validation ---------------------------------------------------

#[derive(Debug, Clone)]
enum ArgValue {
    Span(i64, i64),
    Measure(i64),
    Offset(RationalDuration),
    Pitch(Pitch),
    Part(String),
    Key(Key),
    Integer(u64),
    Boolean(bool),
    Weighting(Weighting),
}

#[derive(Debug, Default)]
struct Args(BTreeMap<String, ArgValue>);

fn offset_from_number(x: f64) -> Option<RationalDuration> {
    if !x.is_finite() || !(0.0..=1e6).contains(&x) {
        return None;
    }
    let scaled = x * 960.0;
    if (scaled - scaled.round()).abs() > 1e-6 {
        return None;
    }
    Some(RationalDuration::new(scaled.round() as u64, 960))
}

fn parse_value(spec: &ArgSpec, value: &Value) -> Result<ArgValue, String> {
    let name = &spec.name;
    let wrong = || format!("Argument '{name}' must be a {}.", spec.kind.describe());
    match spec.kind {
        ArgKind::Span => {
            let items = value.as_array().ok_or_else(wrong)?;
            match items.as_slice() {
                [a, b] => Ok(ArgValue::Span(
                    a.as_i64().ok_or_else(wrong)?,
                    b.as_i64().ok_or_else(wrong)?,
                )),
                _ => Err(wrong()),
            }
        }
        ArgKind::Measure => value.as_i64().map(ArgValue::Measure).ok_or_else(wrong),
        ArgKind::Offset => {
            let parsed = match value {
                Value::Number(n) => n.as_f64().and_then(offset_from_number),
                Value::String(s) => s.trim().parse::<RationalDuration>().ok(),
                _ => None,
            };
            parsed.map(ArgValue::Offset).ok_or_else(wrong)
        }
        ArgKind::Pitch => value
            .as_str()
            .and_then(|s| s.trim().parse::<Pitch>().ok())
            .map(ArgValue::Pitch)
            .ok_or_else(wrong),
        ArgKind::Part => match value {
            Value::String(s) if !s.trim().is_empty() => Ok(ArgValue::Part(s.trim().to_string())),
            Value::Number(n) => n
                .as_u64()
                .filter(|n| *n >= 1)
                .map(|n| ArgValue::Part(format!("P{n}")))
                .ok_or_else(wrong),
            _ => Err(wrong()),
        },
        ArgKind::Key => value
            .as_str()
            .and_then(|s| s.trim().parse::<Key>().ok())
            .map(ArgValue::Key)
            .ok_or_else(wrong),
        ArgKind::PositiveInteger => value
            .as_u64()
            .filter(|n| *n >= 1 && *n <= 10_000)
            .map(ArgValue::Integer)
            .ok_or_else(wrong),
        ArgKind::Boolean => value.as_bool().map(ArgValue::Boolean).ok_or_else(wrong),
        ArgKind::Weighting => match value.as_str().map(|s| s.trim().to_lowercase()) {
            Some(w) if w == "duration" => Ok(ArgValue::Weighting(Weighting::Duration)),
            Some(w) if w == "onset" => Ok(ArgValue::Weighting(Weighting::Onset)),
            _ => Err(wrong()),
        },
    }
}

fn validate(schema: &ToolSchema, args: &Map<String, Value>) -> Result<Args, String> {
    for key in args.keys() {
        if !schema.args.iter().any(|a| &a.name == key) {
            let accepted: Vec<&str> = schema.args.iter().map(|a| a.name.as_str()).collect();
            return Err(if accepted.is_empty() {
                format!(
                    "The tool {} takes no arguments, but '{}' was given.",
                    schema.name,
                    sanitize(key)
                )
            } else {
                format!(
                    "The tool {} does not accept an argument named '{}'; it accepts {}.",
                    schema.name,
                    sanitize(key),
                    accepted.join(", ")
                )
            });
        }
    }
    let mut out = Args::default();
    for spec in &schema.args {
        let value = match args.get(&spec.name) {
            Some(Value::Null) | None => match &spec.default {
                Some(d) => d.clone(),
                None if spec.required => {
                    return Err(format!(
                        "The tool {} needs the argument '{}' ({}).",
                        schema.name,
                        spec.name,
                        spec.kind.describe()
                    ))
                }
                None => continue,
            },
            Some(v) => v.clone(),
        };
        out.0.insert(spec.name.clone(), parse_value(spec, &value)?);
    }
    Ok(out)
}

impl Args {
    fn pitch(&self, name: &str) -> Pitch {
        match self.0.get(name) {
            Some(ArgValue::Pitch(p)) => *p,
            _ => unreachable!("validated pitch argument"),
        }
    }

    fn key(&self, name: &str) -> Option<Key> {
        match self.0.get(name) {
            Some(ArgValue::Key(k)) => Some(*k),
            _ => None,
        }
    }

    fn integer(&self, name: &str) -> u64 {
        match self.0.get(name) {
            Some(ArgValue::Integer(n)) => *n,
            _ => unreachable!("validated integer argument"),
        }
    }

    fn boolean(&self, name: &str) -> bool {
        match self.0.get(name) {
            Some(ArgValue::Boolean(b)) => *b,
            _ => unreachable!("validated boolean argument"),
        }
    }

    fn weighting(&self, name: &str) -> Weighting {
        match self.0.get(name) {
            Some(ArgValue::Weighting(w)) => *w,
            _ => unreachable!("validated weighting argument"),
        }
    }

    fn span(&self, s: &Score) -> Result<MeasureSpan, String> {
        match self.0.get("span") {
            Some(ArgValue::Span(a, b)) => s.check_span(*a, *b).map_err(|e| diagnose_score(s, &e)),
            _ => s.resolve_span(None).map_err(|e| diagnose_score(s, &e)),
        }
    }

    fn opt_part(&self, s: &Score) -> Result<Option<String>, String> {
        match self.0.get("part") {
            Some(ArgValue::Part(id)) => {
                s.part(id).map_err(|e| diagnose_score(s, &e))?;
                Ok(Some(id.clone()))
            }
            _ => Ok(None),
        }
    }

    /// The named part, or the first part of the score.
    fn part(&self, s: &Score) -> Result<String, String> {
        match self.opt_part(s)? {
            Some(id) => Ok(id),
            None => s
                .parts()
                .first()
                .map(|p| p.id.clone())
                .ok_or_else(|| "The score has no parts.".to_string()),
        }
    }

    fn location(&self, s: &Score) -> Result<(u32, RationalDuration), String> {
        let measure = match self.0.get("measure") {
            Some(ArgValue::Measure(m)) => *m,
            _ => unreachable!("validated measure argument"),
        };
        let span = s
            .check_span(measure, measure)
            .map_err(|e| diagnose_score(s, &e))?;
        let offset = match self.0.get("offset") {
            Some(ArgValue::Offset(o)) => *o,
            _ => RationalDuration::ZERO,
        };
        Ok((span.from, offset))
    }
}

// Diagnoses ---------------------------------------------------------------

fn no_notes() -> String {
    "The selection contains no notes.".to_string()
}

fn diagnose_score(s: &Score, e: &ScoreError) -> String {
    match e {
        ScoreError::UnknownPart(id) => {
            let ids: Vec<&str> = s.parts().iter().map(|p| p.id.as_str()).collect();
            format!(
                "The score has no part named '{}'; its parts are {}.",
                sanitize(id),
                if ids.is_empty() {
                    "none".to_string()
                } else {
                    ids.join(", ")
                }
            )
        }
        ScoreError::RangeOutOfBounds {
            from,
            to,
            first,
            last,
        } => {
            let asked = if from == to {
                format!("Measure {from} is")
            } else {
                format!("Measures {from}–{to} are")
            };
            if first > last {
                format!("{asked} outside the score, which has no measures.")
            } else {
                format!("{asked} outside the score, which covers measures {first}–{last}.")
            }
        }
        ScoreError::UnequalParts | ScoreError::UnorderedMeasures(_) => {
            "The score's parts are inconsistent, so it cannot be analysed.".to_string()
        }
    }
}

fn diagnose_key(s: &Score, e: &KeyError) -> String {
    match e {
        KeyError::Score(e) => diagnose_score(s, e),
        KeyError::EmptySelection => {
            "The selected measures contain no notes, so no key can be estimated.".to_string()
        }
        KeyError::ScoreTooShort { measures, window } => format!(
            "The score has only {measures} measures, fewer than the window of {window} measures."
        ),
        KeyError::InvalidParameter(what) => format!("The {what} must be at least 1."),
    }
}

fn diagnose_harmony(s: &Score, e: &HarmonyError) -> String {
    match e {
        HarmonyError::Score(e) => diagnose_score(s, e),
        HarmonyError::Key(e) => diagnose_key(s, e),
        HarmonyError::TooFewPitches => {
            "Fewer than two distinct pitch classes sound there, so no chord can be identified."
                .to_string()
        }
        HarmonyError::UnlabeledQuality => {
            "The sonority is not a recognised chord type, so it has no roman numeral.".to_string()
        }
        HarmonyError::NothingSounding { measure, offset } => format!(
            "Nothing sounds in measure {measure} at offset {}.",
            num(offset.to_f64())
        ),
    }
}

fn diagnose_at(s: &Score, e: &HarmonyError, measure: u32, offset: RationalDuration) -> String {
    let place = format!("in measure {measure} at offset {}", num(offset.to_f64()));
    match e {
        HarmonyError::TooFewPitches => format!(
            "Fewer than two distinct pitch classes sound {place}, so no chord can be identified."
        ),
        HarmonyError::UnlabeledQuality => format!(
            "The sonority {place} is not a recognised chord type, so it has no roman numeral."
        ),
        other => diagnose_harmony(s, other),
    }
}

fn diagnose_descriptive(s: &Score, e: &DescriptiveError) -> String {
    match e {
        DescriptiveError::Score(e) => diagnose_score(s, e),
        DescriptiveError::NoTimeSignature(span) => {
            format!("No time signature is in force in {span}, so beats cannot be located.")
        }
        DescriptiveError::EmptySelection => no_notes(),
    }
}

// Payloads ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListToolsPayload {
    pub tools: Vec<ToolSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPayload {
    pub from: Pitch,
    pub to: Pitch,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodicPayload {
    pub part: String,
    pub span: MeasureSpan,
    pub notes: Vec<Pitch>,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPayload {
    pub span: MeasureSpan,
    pub weighting: Weighting,
    pub weights: [RationalDuration; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbitusPayload {
    pub part: Option<String>,
    pub ambitus: Ambitus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordifyPayload {
    pub span: MeasureSpan,
    pub slices: Vec<VerticalSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordAtPayload {
    pub measure: u32,
    pub offset: RationalDuration,
    pub sounding: Vec<Pitch>,
    pub chord: ChordLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeralAtPayload {
    pub measure: u32,
    pub offset: RationalDuration,
    pub chord: ChordLabel,
    pub numeral: RomanNumeral,
    pub key_source: KeySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionPayload {
    pub span: MeasureSpan,
    pub progression: Progression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateKeyPayload {
    pub span: MeasureSpan,
    pub estimate: KeyEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedPayload {
    pub window: usize,
    pub persistence: usize,
    pub segments: Vec<KeySegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonDiatonicPayload {
    pub span: MeasureSpan,
    pub key: Key,
    pub key_source: KeySource,
    pub notes: Vec<LocatedPitch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStatsPayload {
    pub part: Option<String>,
    pub stats: DurationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignaturesPayload {
    pub span: MeasureSpan,
    pub signatures: Vec<Spanned<Option<TimeSignature>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmPayload {
    pub part: String,
    pub span: MeasureSpan,
    pub profile: RhythmProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkersPayload {
    pub span: MeasureSpan,
    pub markers: Vec<MarkerEntry>,
}

// Summaries ---------------------------------------------------------------

/// Two decimals, with negative zero printed as zero.
fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn dur(d: RationalDuration) -> String {
    num(d.to_f64())
}

fn capitalized_span(span: MeasureSpan) -> String {
    let text = span.to_string();
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => text,
    }
}

fn join_list(items: &[String]) -> String {
    items.join(", ")
}

fn plural(n: usize, one: &str, many: &str) -> String {
    if n == 1 {
        format!("1 {one}")
    } else {
        format!("{n} {many}")
    }
}

const PITCH_CLASS_NAMES: [&str; 12] = [
    "C", "C♯", "D", "E♭", "E", "F", "F♯", "G", "A♭", "A", "B♭", "B",
];

fn interval_phrase(i: &Interval) -> String {
    let direction = match i.direction {
        crate::pitch::Direction::Up => " up",
        crate::pitch::Direction::Down => " down",
        crate::pitch::Direction::Same => "",
    };
    format!(
        "{} ({}), {} semitones{}",
        i.long_name(),
        i.name(),
        i.semitones.abs(),
        direction
    )
}

fn key_phrase(source: KeySource) -> &'static str {
    match source {
        KeySource::Provided => "given",
        KeySource::Estimated => "estimated",
    }
}

fn chord_sentence(c: &ChordLabel) -> String {
    let mut s = c.description();
    if c.root.is_some() {
        s.push_str(&format!(" (symbol {})", c.symbol()));
    }
    if c.symmetric {
        s.push_str("; the chord is symmetric, so the root was chosen from its spelling and bass");
    }
    s
}

fn decode<T: DeserializeOwned>(tool: &str, payload: &Value) -> Result<T, ToolError> {
    T::deserialize(payload).map_err(|e| ToolError::MalformedPayload {
        tool: tool.to_string(),
        reason: e.to_string(),
    })
}

pub fn render_roster(tools: &[ToolSchema]) -> String {
    if tools.is_empty() {
        return "No analysis tools are available.".to_string();
    }
    let mut lines = Vec::new();
    for t in tools {
        let args: Vec<String> = t
            .args
            .iter()
            .map(|a| {
                let mut s = format!("{} ({}", a.name, a.kind.describe());
                if a.required {
                    s.push_str(", required");
                } else if let Some(d) = &a.default {
                    s.push_str(&format!(", default {d}"));
                } else {
                    s.push_str(", optional");
                }
                s.push(')');
                s
            })
            .collect();
        let dimension = t.dimension.map(|d| d.label()).unwrap_or("meta");
        lines.push(format!(
            "- {} [{}]: {} Arguments: {}.",
            t.name,
            dimension,
            t.description,
            if args.is_empty() {
                "none".to_string()
            } else {
                args.join("; ")
            }
        ));
    }
    lines.join("\n")
}

/// Renders the evidence text for a structured payload. Pure: the same
/// payload always yields the same text.
pub fn render_summary(tool: &str, payload: &Value) -> Result<String, ToolError> {
    Ok(match tool {
        META_TOOL => {
            let p: ListToolsPayload = decode(tool, payload)?;
            if p.tools.is_empty() {
                "No analysis tools are available; answer from the question and options alone."
                    .to_string()
            } else {
                format!(
                    "{} analysis tools are available:\n{}",
                    p.tools.len(),
                    render_roster(&p.tools)
                )
            }
        }
        "get_interval" => {
            let p: IntervalPayload = decode(tool, payload)?;
            format!(
                "From {} to {} is a {}.",
                p.from,
                p.to,
                interval_phrase(&p.interval)
            )
        }
        "get_melodic_intervals" => {
            let p: MelodicPayload = decode(tool, payload)?;
            let head = format!("Part {}, {}", p.part, p.span);
            if p.intervals.is_empty() {
                format!(
                    "{head}: the melody has {}, so there are no melodic intervals.",
                    plural(p.notes.len(), "note", "notes")
                )
            } else {
                let names: Vec<String> = p
                    .intervals
                    .iter()
                    .map(|i| {
                        let d = match i.direction {
                            crate::pitch::Direction::Up => " up",
                            crate::pitch::Direction::Down => " down",
                            crate::pitch::Direction::Same => "",
                        };
                        format!("{}{}", i.name(), d)
                    })
                    .collect();
                let notes: Vec<String> = p.notes.iter().map(|n| n.to_string()).collect();
                format!(
                    "{head}: melody {} gives {}: {}.",
                    notes.join(" "),
                    plural(names.len(), "interval", "intervals"),
                    join_list(&names)
                )
            }
        }
        "get_pitch_histogram" => {
            let p: HistogramPayload = decode(tool, payload)?;
            let label = match p.weighting {
                Weighting::Duration => "duration-weighted pitch-class totals in quarter notes",
                Weighting::Onset => "pitch-class onset counts",
            };
            let items: Vec<String> = p
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .map(|(i, w)| format!("{} {}", PITCH_CLASS_NAMES[i], dur(*w)))
                .collect();
            if items.is_empty() {
                format!("{}: no pitches sound.", capitalized_span(p.span))
            } else {
                format!(
                    "{}, {label}: {}.",
                    capitalized_span(p.span),
                    join_list(&items)
                )
            }
        }
        "get_ambitus" => {
            let p: AmbitusPayload = decode(tool, payload)?;
            let scope = match &p.part {
                Some(id) => format!("Part {id}"),
                None => "The whole score".to_string(),
            };
            format!(
                "{scope} spans from {} to {}, a {}.",
                p.ambitus.lowest,
                p.ambitus.highest,
                interval_phrase(&p.ambitus.interval)
            )
        }
        "chordify_range" => {
            let p: ChordifyPayload = decode(tool, payload)?;
            let items: Vec<String> = p
                .slices
                .iter()
                .map(|sl| {
                    let content = if sl.sounding.is_empty() {
                        "rest".to_string()
                    } else {
                        sl.sounding
                            .iter()
                            .map(|x| x.to_string())
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    format!(
                        "m.{} offset {} ({} long): {}",
                        sl.measure,
                        dur(sl.offset),
                        dur(sl.duration),
                        content
                    )
                })
                .collect();
            if items.is_empty() {
                format!("{} contain no sonorities.", capitalized_span(p.span))
            } else {
                format!(
                    "{} contain {}: {}.",
                    capitalized_span(p.span),
                    plural(items.len(), "sonority", "sonorities"),
                    items.join("; ")
                )
            }
        }
        "identify_chord_at" => {
            let p: ChordAtPayload = decode(tool, payload)?;
            let pitches: Vec<String> = p.sounding.iter().map(|x| x.to_string()).collect();
            format!(
                "Measure {}, offset {}: the sounding pitches {} form a chord: {}.",
                p.measure,
                dur(p.offset),
                pitches.join(" "),
                chord_sentence(&p.chord)
            )
        }
        "roman_numeral_at" => {
            let p: NumeralAtPayload = decode(tool, payload)?;
            format!(
                "Measure {}, offset {}: {} is {} in {} ({} key).",
                p.measure,
                dur(p.offset),
                chord_sentence(&p.chord),
                p.numeral.figure,
                p.numeral.key,
                key_phrase(p.key_source)
            )
        }
        "analyze_progression" => {
            let p: ProgressionPayload = decode(tool, payload)?;
            if p.progression.entries.is_empty() {
                "No chords found in the selected range.".to_string()
            } else {
                let key = p
                    .progression
                    .key
                    .map(|k| format!("{k} ({} key)", key_phrase(p.progression.key_source)))
                    .unwrap_or_else(|| "no key".to_string());
                let items: Vec<String> = p
                    .progression
                    .entries
                    .iter()
                    .map(|e| {
                        let symbol = e
                            .chord
                            .as_ref()
                            .map(|c| c.symbol())
                            .unwrap_or_else(|| "?".to_string());
                        format!(
                            "m.{} offset {}: {} ({})",
                            e.slice.measure,
                            dur(e.slice.offset),
                            e.label(),
                            symbol
                        )
                    })
                    .collect();
                format!(
                    "{} in {key}: {}.",
                    capitalized_span(p.span),
                    items.join("; ")
                )
            }
        }
        "estimate_key" => {
            let p: EstimateKeyPayload = decode(tool, payload)?;
            let e = &p.estimate;
            let span = format!("Measures {}–{}", p.span.from, p.span.to);
            if e.degenerate {
                format!(
                    "{span}: estimated key is {} {} (correlation {}; only one pitch class or an even spread sounds, so this is a fallback guess).",
                    e.key.tonic,
                    e.key.mode,
                    num(e.correlation)
                )
            } else {
                let runner = e
                    .runner_up
                    .map(|r| r.key.to_string())
                    .unwrap_or_else(|| "none".to_string());
                format!(
                    "{span}: estimated key is {} {} (correlation {}; runner-up {}).",
                    e.key.tonic,
                    e.key.mode,
                    num(e.correlation),
                    runner
                )
            }
        }
        "windowed_key_estimation" => {
            let p: WindowedPayload = decode(tool, payload)?;
            let items: Vec<String> = p
                .segments
                .iter()
                .map(|seg| {
                    format!(
                        "{} in {} (correlation {})",
                        MeasureSpan::new(seg.start_measure, seg.end_measure),
                        seg.key.key,
                        num(seg.key.correlation)
                    )
                })
                .collect();
            let mut text = format!(
                "Windowed key estimation (window {}, persistence {}) finds {}: {}.",
                p.window,
                p.persistence,
                plural(items.len(), "key segment", "key segments"),
                items.join(", then ")
            );
            let changes: Vec<String> = p
                .segments
                .windows(2)
                .map(|w| {
                    format!(
                        "from {} to {} at measure {}",
                        w[0].key.key, w[1].key.key, w[1].start_measure
                    )
                })
                .collect();
            if changes.is_empty() {
                text.push_str(" No modulation is detected.");
            } else {
                text.push_str(&format!(" The key changes {}.", join_list(&changes)));
            }
            text
        }
        "find_non_diatonic_notes" => {
            let p: NonDiatonicPayload = decode(tool, payload)?;
            let head = format!(
                "{}, against {} ({} key)",
                capitalized_span(p.span),
                p.key,
                key_phrase(p.key_source)
            );
            if p.notes.is_empty() {
                format!("{head}: every note belongs to the scale.")
            } else {
                let items: Vec<String> = p
                    .notes
                    .iter()
                    .map(|n| {
                        format!(
                            "{} (m.{} offset {}, part {})",
                            n.pitch,
                            n.measure,
                            dur(n.offset),
                            n.part
                        )
                    })
                    .collect();
                format!(
                    "{head}: {} outside the scale: {}.",
                    plural(items.len(), "note lies", "notes lie"),
                    join_list(&items)
                )
            }
        }
        "score_overview" => {
            let o: ScoreOverview = decode(tool, payload)?;
            render_overview(&o)
        }
        "duration_stats" => {
            let p: DurationStatsPayload = decode(tool, payload)?;
            let scope = match &p.part {
                Some(id) => format!("part {id}"),
                None => "all parts".to_string(),
            };
            let st = &p.stats;
            format!(
                "Durations of {} in {scope}, in quarter notes: shortest {}, longest {}, mean {}, most common {}.",
                plural(st.count, "note or chord", "notes and chords"),
                dur(st.min),
                dur(st.max),
                dur(st.mean),
                dur(st.mode)
            )
        }
        "get_time_signatures" => {
            let p: TimeSignaturesPayload = decode(tool, payload)?;
            let items: Vec<String> = p
                .signatures
                .iter()
                .map(|r| match r.value {
                    Some(ts) => format!("{ts} in {}", r.span),
                    None => format!("no time signature in {}", r.span),
                })
                .collect();
            format!("{}: {}.", capitalized_span(p.span), join_list(&items))
        }
        "rhythm_profile" => {
            let p: RhythmPayload = decode(tool, payload)?;
            let r = &p.profile;
            let hist: Vec<String> = r
                .duration_histogram
                .iter()
                .map(|(d, c)| format!("{c} of {}", dur(*d)))
                .collect();
            format!(
                "Part {}, {}: {} ({} on the beat, {} off the beat, {} syncopated); durations in quarter notes: {}.",
                p.part,
                p.span,
                plural(r.onset_count() as usize, "onset", "onsets"),
                r.onbeat_onsets,
                r.offbeat_onsets,
                r.syncopation_count,
                if hist.is_empty() { "none".to_string() } else { join_list(&hist) }
            )
        }
        "list_expression_markers" => {
            let p: MarkersPayload = decode(tool, payload)?;
            let tail = "Dynamics are not notated in this score format.";
            if p.markers.is_empty() {
                format!(
                    "{}: no expression markings. {tail}",
                    capitalized_span(p.span)
                )
            } else {
                let items: Vec<String> = p
                    .markers
                    .iter()
                    .map(|m| {
                        format!(
                            "{} (m.{} offset {}, part {})",
                            m.marker,
                            m.measure,
                            dur(m.offset),
                            m.part
                        )
                    })
                    .collect();
                format!(
                    "{}: {}: {}. {tail}",
                    capitalized_span(p.span),
                    plural(items.len(), "marking", "markings"),
                    join_list(&items)
                )
            }
        }
        other => return Err(ToolError::UnknownTool(other.to_string())),
    })
}

fn key_signature_text(sig: &[crate::score::Spelling]) -> String {
    if sig.is_empty() {
        return "no sharps or flats".to_string();
    }
    let names: Vec<String> = sig.iter().map(|s| s.name()).collect();
    let kind = if sig[0].alter > 0 { "sharp" } else { "flat" };
    format!(
        "{} ({})",
        plural(sig.len(), kind, &format!("{kind}s")),
        names.join(" ")
    )
}

fn render_overview(o: &ScoreOverview) -> String {
    let mut text = format!(
        "The score has {} and {}, with {}, {} and {}.",
        plural(o.part_count, "part", "parts"),
        plural(o.measure_count, "measure", "measures"),
        plural(o.note_count, "note", "notes"),
        plural(o.chord_count, "chord", "chords"),
        plural(o.rest_count, "rest", "rests"),
    );
    if !o.time_signatures.is_empty() {
        let items: Vec<String> = o
            .time_signatures
            .iter()
            .map(|r| match r.value {
                Some(ts) => format!("{ts} in {}", r.span),
                None => format!("none in {}", r.span),
            })
            .collect();
        text.push_str(&format!(" Time signatures: {}.", join_list(&items)));
    }
    if !o.key_signatures.is_empty() {
        let items: Vec<String> = o
            .key_signatures
            .iter()
            .map(|r| format!("{} in {}", key_signature_text(&r.value), r.span))
            .collect();
        text.push_str(&format!(" Key signatures: {}.", join_list(&items)));
    }
    if let Some(k) = o.declared_key {
        text.push_str(&format!(" The declared key is {k}."));
    }
    let ranges: Vec<String> = o
        .ranges
        .iter()
        .map(|r| match (r.lowest, r.highest) {
            (Some(l), Some(h)) => format!("{} {l} to {h}", r.part),
            _ => format!("{} no notes", r.part),
        })
        .collect();
    if !ranges.is_empty() {
        text.push_str(&format!(" Ranges: {}.", join_list(&ranges)));
    }
    text
}

// Wire mode -----------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
struct WireRequest {
    tool: String,
    #[serde(default)]
    args: Map<String, Value>,
    #[serde(default)]
    kern: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub ok: bool,
    pub summary: String,
}

/// Answers one request line.
pub fn answer_request(registry: &Registry, score: Option<&Score>, line: &str) -> WireResponse {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(_) => {
            return WireResponse {
                ok: false,
                summary: "The request is not a valid tool call; send an object with a tool name and arguments.".to_string(),
            }
        }
    };
    let inline;
    let score = match (&request.kern, score) {
        (Some(text), _) => match parse_kern(text) {
            Ok((s, _)) => {
                inline = s;
                &inline
            }
            Err(e) => {
                return WireResponse {
                    ok: false,
                    summary: format!(
                        "The inline score could not be parsed (problem on line {}).",
                        e.line()
                    ),
                }
            }
        },
        (None, Some(s)) => s,
        (None, None) => {
            return WireResponse {
                ok: false,
                summary: "No score is loaded; include a kern field in the request or start the server with a score.".to_string(),
            }
        }
    };
    let evidence = registry.execute(
        score,
        &ToolCall {
            tool: request.tool,
            args: request.args,
        },
    );
    WireResponse {
        ok: evidence.ok,
        summary: evidence.summary,
    }
}

/// Newline-delimited JSON loop: one request per line, one response per line.
pub fn serve<R: BufRead, W: Write>(
    registry: &Registry,
    score: Option<&Score>,
    input: R,
    mut output: W,
) -> std::io::Result<usize> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = answer_request(registry, score, &line);
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
        handled += 1;
    }
    Ok(handled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Step;

    const CADENCE: &str = "**kern\t**kern\n*M4/4\t*M4/4\n=1\t=1\n2C\t2e 2g 2cc\n2F\t2f 2a 2cc\n=2\t=2\n2G\t2d 2g 2b\n2C\t2e 2g 2cc;\n==\t==\n*-\t*-";

    fn score() -> Score {
        parse_kern(CADENCE).unwrap().0
    }

    fn run(tool: &str, args: Value) -> Evidence {
        Registry::default().execute(&score(), &ToolCall::new(tool, args))
    }

    #[test]
    fn roster_shape() {
        let r = Registry::default();
        assert_eq!(r.tools().len(), 16);
        let mut names: Vec<_> = r.tools().iter().map(|t| t.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 16);
        for d in Dimension::ALL {
            assert!(r.tools().iter().any(|t| t.dimension == Some(d)), "{d}");
        }
        assert!(r.tools().iter().all(|t| !t.description.is_empty()));
        assert!(r.schema(META_TOOL).is_none());
    }

    #[test]
    fn estimate_key_summary() {
        let e = run("estimate_key", json!({}));
        assert!(e.ok, "{}", e.summary);
        assert!(e
            .summary
            .starts_with("Measures 1–2: estimated key is C major (correlation "));
        assert!(e.summary.contains("runner-up"));
    }

    #[test]
    fn unknown_tool() {
        let e = run("transpose_everything", json!({}));
        assert!(!e.ok);
        assert!(e.summary.contains("no such tool"));
        assert_eq!(e.error_text.as_deref(), Some(e.summary.as_str()));
    }

    #[test]
    fn out_of_range_measure() {
        let e = run("roman_numeral_at", json!({"measure": 9}));
        assert!(!e.ok);
        assert_eq!(
            e.summary,
            "Measure 9 is outside the score, which covers measures 1–2."
        );
    }

    #[test]
    fn argument_validation() {
        let e = run("estimate_key", json!({"spam": 1}));
        assert!(!e.ok);
        assert!(e
            .summary
            .contains("does not accept an argument named 'spam'"));
        let e = run("identify_chord_at", json!({}));
        assert!(e.summary.contains("needs the argument 'measure'"));
        let e = run("get_interval", json!({"from": "C4", "to": 7}));
        assert_eq!(e.summary, "Argument 'to' must be a pitch name such as C#4.");
        let e = run("estimate_key", json!({"span": [2, 1]}));
        assert!(!e.ok);
    }

    #[test]
    fn summaries_per_tool() {
        let cases = [
            ("get_interval", json!({"from": "C4", "to": "G4"}), "From C4 to G4 is a perfect 5th (P5), 7 semitones up."),
            ("identify_chord_at", json!({"measure": 2}), "Measure 2, offset 0.00: the sounding pitches G3 D4 G4 B4 form a chord: G major triad in root position (symbol G)."),
            ("roman_numeral_at", json!({"measure": 2, "key": "G major"}), "Measure 2, offset 0.00: G major triad in root position (symbol G) is I in G major (given key)."),
            ("get_ambitus", json!({}), "The whole score spans from C3 to C5, a perfect 15th (2 octaves) (P15), 24 semitones up."),
        ];
        for (tool, args, expected) in cases {
            let e = run(tool, args);
            assert!(e.ok, "{tool}: {}", e.summary);
            assert_eq!(e.summary, expected);
        }
    }

    #[test]
    fn progression_summary() {
        let e = run("analyze_progression", json!({"key": "C major"}));
        assert!(e.ok);
        assert!(e.summary.contains("m.1 offset 0.00: I (C)"));
        assert!(e.summary.contains("m.2 offset 0.00: V (G)"));
        let empty = ProgressionPayload {
            span: MeasureSpan::new(1, 1),
            progression: Progression {
                key: None,
                key_source: KeySource::Estimated,
                entries: Vec::new(),
            },
        };
        let value = serde_json::to_value(empty).unwrap();
        assert_eq!(
            render_summary("analyze_progression", &value).unwrap(),
            "No chords found in the selected range."
        );
    }

    #[test]
    fn render_is_deterministic_and_checked() {
        let e = run("rhythm_profile", json!({"part": 2}));
        assert!(e.ok, "{}", e.summary);
        let again = render_summary("rhythm_profile", &e.structured).unwrap();
        assert_eq!(again, e.summary);
        assert!(matches!(
            render_summary("estimate_key", &json!({"span": 3})),
            Err(ToolError::MalformedPayload { .. })
        ));
        assert!(matches!(
            render_summary("nope", &json!({})),
            Err(ToolError::UnknownTool(_))
        ));
    }

    #[test]
    fn markers_mention_dynamics() {
        let e = run("list_expression_markers", json!({}));
        assert!(e.summary.contains("fermata (m.2 offset 2.00, part P2)"));
        assert!(e
            .summary
            .ends_with("Dynamics are not notated in this score format."));
    }

    #[test]
    fn empty_registry() {
        let r = Registry::empty();
        let e = r.execute(&score(), &ToolCall::new("list_tools", json!({})));
        assert!(e.ok);
        assert!(e.summary.starts_with("No analysis tools are available"));
        let e = r.execute(&score(), &ToolCall::new("estimate_key", json!({})));
        assert!(!e.ok);
    }

    #[test]
    fn list_tools_names_everything() {
        let e = run("list_tools", json!({}));
        for t in Registry::default().tools() {
            assert!(e.summary.contains(&t.name));
        }
    }

    #[test]
    fn offsets_accept_fractions() {
        let e = run("identify_chord_at", json!({"measure": 1, "offset": "5/2"}));
        assert!(e.summary.contains("F major triad"), "{}", e.summary);
        let e = run("identify_chord_at", json!({"measure": 1, "offset": 2.5}));
        assert!(e.summary.contains("F major triad"));
        let e = run("identify_chord_at", json!({"measure": 1, "offset": -1}));
        assert!(!e.ok);
    }

    #[test]
    fn wire_loop() {
        let input = "{\"tool\": \"estimate_key\", \"args\": {}}\nnot json\n\n{\"tool\": \"score_overview\"}\n";
        let mut out = Vec::new();
        let s = score();
        let n = serve(&Registry::default(), Some(&s), input.as_bytes(), &mut out).unwrap();
        assert_eq!(n, 3);
        let lines: Vec<WireResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert!(lines[0].ok && lines[0].summary.contains("C major"));
        assert!(!lines[1].ok);
        assert!(lines[2].ok);

        let r = answer_request(&Registry::default(), None, "{\"tool\": \"estimate_key\"}");
        assert!(!r.ok);
        let inline =
            json!({"tool": "get_ambitus", "kern": "**kern\n=1\n4c\n4e\n==\n*-"}).to_string();
        let r = answer_request(&Registry::default(), None, &inline);
        assert!(r.ok, "{}", r.summary);
        assert!(r.summary.contains("C4 to E4"));
    }

    #[test]
    fn dimension_names() {
        assert_eq!(Dimension::parse("Key & Scale"), Some(Dimension::KeyScale));
        assert_eq!(Dimension::parse("rhythm"), Some(Dimension::RhythmMeter));
        assert_eq!(Dimension::parse("tempo"), None);
        let k = Key::major(Step::C, 0);
        assert_eq!(k.to_string(), "C major");
    }
}
