//! Symbolic music analysis over Humdrum `**kern` scores.
//!
//! The crate is layered bottom-up:
//!
//! * [`score`] and [`kern`] hold the score model and its parser.
//! * [`pitch`], [`harmony`], [`key`] and [`descriptive`] are deterministic
//!   analysis operators over a [`Score`].
//! * [`tools`] wraps the operators as a typed registry that returns
//!   natural-language evidence summaries.
//! * [`agent`] runs a plan-then-act tool loop against a language model
//!   backend, and [`harness`] evaluates answer strategies on
//!   multiple-choice items.

pub mod agent;
pub mod descriptive;
pub mod harmony;
pub mod harness;
pub mod kern;
pub mod key;
pub mod pitch;
pub mod score;
pub mod tools;

pub use kern::{parse_kern, parse_kern_with, KernError, ParseDiagnostics, ParseOptions};
pub use score::{
    Event, EventKind, Key, Measure, MeasureSpan, Mode, Part, Pitch, RationalDuration, Score,
    ScoreError, Spelling, Step, TimeSignature,
};
