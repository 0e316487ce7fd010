//! Shared inputs for the criterion benchmarks.

use std::path::PathBuf;

pub use kernlens::Score;

/// Directory holding the shipped `.krn` fixtures.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/kern")
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(format!("{name}.krn"))).expect("fixture exists")
}

pub fn fixture_score(name: &str) -> Score {
    kernlens::parse_kern(&fixture_text(name))
        .expect("fixture parses")
        .0
}
