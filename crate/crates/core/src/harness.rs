//! Multiple-choice benchmark items, the six evaluation methods and
//! per-category accuracy reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{
    extract_letter, fill, format_options, run_agent, AgentConfig, BackendError, EvidenceTrace,
    LlmBackend, Message, PromptProfile, ScriptedBackend,
};
use crate::kern::{parse_kern_with, ParseOptions};
use crate::key::KeyProfiles;
use crate::score::Score;
use crate::tools::{Dimension, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Exam,
    Reddit,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Exam => "Exam",
            Source::Reddit => "Reddit",
        })
    }
}

/// Query intent categories, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    TonalHarmonic,
    EditingRewriting,
    EffectPerceptual,
    CompositionCreative,
    StructuralTextural,
    GenreMusician,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::TonalHarmonic,
        Category::EditingRewriting,
        Category::EffectPerceptual,
        Category::CompositionCreative,
        Category::StructuralTextural,
        Category::GenreMusician,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::TonalHarmonic => "Complex Tonal-Harmonic Analysis",
            Category::EditingRewriting => "Editing/Rewriting",
            Category::EffectPerceptual => "Effect/Perceptual Explanation",
            Category::CompositionCreative => "Composition & Creative Guidance",
            Category::StructuralTextural => "Complex Structural-Textural Analysis",
            Category::GenreMusician => "Genre/Musician Judgment",
        }
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Category::TonalHarmonic => "CTH",
            Category::EditingRewriting => "ER",
            Category::EffectPerceptual => "EP",
            Category::CompositionCreative => "CC",
            Category::StructuralTextural => "CST",
            Category::GenreMusician => "GM",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    /// Accepts the full name (spacing, case and punctuation ignored) or the
    /// abbreviation, with or without a trailing "Analysis".
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .to_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let norm = norm.strip_suffix("analysis").unwrap_or(&norm).to_string();
        Category::ALL
            .into_iter()
            .find(|c| {
                let full: String = c
                    .name()
                    .to_lowercase()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect();
                let full = full.strip_suffix("analysis").unwrap_or(&full).to_string();
                full == norm || c.abbreviation().to_lowercase() == norm
            })
            .ok_or_else(|| format!("unknown intent category `{s}`"))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub source: Source,
    pub question: String,
    pub options: BTreeMap<char, String>,
    pub answer: char,
    #[serde(rename = "intent_category")]
    pub category: Category,
    #[serde(rename = "dimension_tags")]
    pub dimensions: Vec<Dimension>,
    pub kern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub item: BenchmarkItem,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<LoadedItem>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: item `{id}`: field `{field}`: {reason}")]
    SchemaViolation {
        file: String,
        line: usize,
        id: String,
        field: String,
        reason: String,
    },
}

fn violation(
    file: &Path,
    line: usize,
    id: &str,
    field: &str,
    reason: impl Into<String>,
) -> DatasetError {
    DatasetError::SchemaViolation {
        file: file.display().to_string(),
        line,
        id: id.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn parse_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

/// Validates one JSON-lines record. `kern_file` paths are relative to the
/// dataset file.
fn parse_item(value: &Value, file: &Path, line: usize) -> Result<BenchmarkItem, DatasetError> {
    let obj = value
        .as_object()
        .ok_or_else(|| violation(file, line, "?", "(record)", "expected a JSON object"))?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(violation(file, line, "?", "id", "missing or empty")),
    };
    let v = |field: &str, reason: &str| violation(file, line, &id, field, reason);
    let text = |field: &str| -> Result<String, DatasetError> {
        match obj.get(field) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            Some(_) => Err(v(field, "must be a non-empty string")),
            None => Err(v(field, "missing")),
        }
    };
    let source = match text("source")?.to_lowercase().as_str() {
        "exam" => Source::Exam,
        "reddit" => Source::Reddit,
        _ => return Err(v("source", "must be exam or reddit")),
    };
    let question = text("question")?;
    let options_value = obj.get("options").ok_or_else(|| v("options", "missing"))?;
    let options_obj = options_value
        .as_object()
        .ok_or_else(|| v("options", "must be an object mapping letters to text"))?;
    let mut options = BTreeMap::new();
    for (k, val) in options_obj {
        let letter = parse_letter(k).ok_or_else(|| v("options", "keys must be single letters"))?;
        let text = val
            .as_str()
            .ok_or_else(|| v("options", "option texts must be strings"))?;
        options.insert(letter, text.to_string());
    }
    if options.len() < 2 {
        return Err(v("options", "needs at least two options"));
    }
    let answer =
        parse_letter(&text("answer")?).ok_or_else(|| v("answer", "must be a single letter"))?;
    if !options.contains_key(&answer) {
        return Err(v("answer", "is not one of the option letters"));
    }
    let category: Category = text("intent_category")?
        .parse()
        .map_err(|e: String| v("intent_category", &e))?;
    let tags = obj
        .get("dimension_tags")
        .ok_or_else(|| v("dimension_tags", "missing"))?
        .as_array()
        .ok_or_else(|| v("dimension_tags", "must be a list"))?;
    let mut dimensions = BTreeSet::new();
    for t in tags {
        let d = t
            .as_str()
            .and_then(Dimension::parse)
            .ok_or_else(|| v("dimension_tags", "contains an unknown dimension"))?;
        dimensions.insert(d);
    }
    if dimensions.is_empty() {
        return Err(v("dimension_tags", "must not be empty"));
    }
    let kern = match (obj.get("kern"), obj.get("kern_file")) {
        (Some(Value::String(k)), None) if !k.trim().is_empty() => k.clone(),
        (None, Some(Value::String(f))) => {
            let path = file.parent().unwrap_or(Path::new(".")).join(f);
            std::fs::read_to_string(&path).map_err(|e| DatasetError::Io { path, source: e })?
        }
        (Some(_), Some(_)) => return Err(v("kern", "give either kern or kern_file, not both")),
        _ => return Err(v("kern", "missing inline kern or kern_file")),
    };
    let solution = match obj.get("solution") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(v("solution", "must be a string")),
    };
    Ok(BenchmarkItem {
        id,
        source,
        question,
        options,
        answer,
        category,
        dimensions: dimensions.into_iter().collect(),
        kern,
        solution,
    })
}

fn load_file(
    path: &Path,
    dataset: &mut Dataset,
    seen: &mut BTreeSet<String>,
) -> Result<(), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| violation(path, line, "?", "(record)", format!("invalid JSON: {e}")))?;
        let item = parse_item(&value, path, line)?;
        if !seen.insert(item.id.clone()) {
            return Err(violation(path, line, &item.id, "id", "duplicate id"));
        }
        match parse_kern_with(&item.kern, &item.id, ParseOptions::default()) {
            Ok((score, _)) => dataset.items.push(LoadedItem { item, score }),
            Err(e) => {
                log::warn!("excluding item {}: {e}", item.id);
                dataset.exclusions.push(Exclusion {
                    id: item.id.clone(),
                    file: path.display().to_string(),
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Loads a JSON-lines file, or every `*.jsonl` file in a directory in name
/// order. Items whose kern fails to parse are excluded and listed.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mut dataset = Dataset::default();
    let mut seen = BTreeSet::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| DatasetError::Io {
                path: path.to_path_buf(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for f in files {
            load_file(&f, &mut dataset, &mut seen)?;
        }
    } else {
        load_file(path, &mut dataset, &mut seen)?;
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    DirectFs,
    Cot,
    CotFs,
    React,
    ToolReact,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Direct,
        Method::DirectFs,
        Method::Cot,
        Method::CotFs,
        Method::React,
        Method::ToolReact,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::DirectFs => "direct_fs",
            Method::Cot => "cot",
            Method::CotFs => "cot_fs",
            Method::React => "react",
            Method::ToolReact => "tool_react",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Direct => "Direct",
            Method::DirectFs => "Direct-FS",
            Method::Cot => "CoT",
            Method::CotFs => "CoT-FS",
            Method::React => "ReAct",
            Method::ToolReact => "Tool-ReAct",
        }
    }

    pub fn is_agent(self) -> bool {
        matches!(self, Method::React | Method::ToolReact)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.id() == norm)
            .ok_or_else(|| {
                format!(
                    "unknown method `{s}`; expected one of {}",
                    Method::ALL.map(|m| m.id()).join(", ")
                )
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Supplies a backend for each item.
pub trait BackendProvider: Send + Sync {
    fn backend_for(&self, item: &BenchmarkItem) -> Arc<dyn LlmBackend>;
    fn describe(&self) -> String;
}

/// One backend shared by every item.
pub struct SharedBackend(pub Arc<dyn LlmBackend>);

impl BackendProvider for SharedBackend {
    fn backend_for(&self, _: &BenchmarkItem) -> Arc<dyn LlmBackend> {
        self.0.clone()
    }

    fn describe(&self) -> String {
        self.0.describe()
    }
}

impl<F> BackendProvider for F
where
    F: Fn(&BenchmarkItem) -> Arc<dyn LlmBackend> + Send + Sync,
{
    fn backend_for(&self, item: &BenchmarkItem) -> Arc<dyn LlmBackend> {
        self(item)
    }

    fn describe(&self) -> String {
        "per-item function".to_string()
    }
}

/// Scripted responses: one list replayed for every item, or lists keyed by
/// item id with `*` as the fallback. Each item gets a fresh backend that
/// repeats its last response once the list runs out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptFile {
    Sequence(Vec<String>),
    PerItem(BTreeMap<String, Vec<String>>),
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn responses_for(&self, id: &str) -> Vec<String> {
        match self {
            ScriptFile::Sequence(s) => s.clone(),
            ScriptFile::PerItem(map) => map
                .get(id)
                .or_else(|| map.get("*"))
                .cloned()
                .unwrap_or_default(),
        }
    }
}

impl BackendProvider for ScriptFile {
    fn backend_for(&self, item: &BenchmarkItem) -> Arc<dyn LlmBackend> {
        Arc::new(ScriptedBackend::repeating(self.responses_for(&item.id)))
    }

    fn describe(&self) -> String {
        "scripted".to_string()
    }
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub agent: AgentConfig,
    pub parallelism: usize,
    pub seed: Option<u64>,
    pub profiles: KeyProfiles,
    pub exemplar_count: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            agent: AgentConfig::default(),
            parallelism: 4,
            seed: None,
            profiles: KeyProfiles::default(),
            exemplar_count: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub source: Source,
    pub category: Category,
    pub gold: char,
    pub predicted: Option<char>,
    pub correct: bool,
    pub no_answer: bool,
    pub error: Option<String>,
    pub output: Option<String>,
    pub trace: Option<EvidenceTrace>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    /// Percentage, or `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, correct: bool) {
        self.total += 1;
        if correct {
            self.correct += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub backend: String,
    pub profile: String,
    pub seed: Option<u64>,
    pub per_category: BTreeMap<Category, Cell>,
    pub exam: Cell,
    pub reddit: Cell,
    pub overall: Cell,
    pub exclusions: Vec<Exclusion>,
    pub items: Vec<ItemRecord>,
}

impl RunReport {
    /// Aggregates item records; the result does not depend on their order.
    pub fn from_records(
        method: Method,
        backend: String,
        profile: String,
        seed: Option<u64>,
        mut items: Vec<ItemRecord>,
        exclusions: Vec<Exclusion>,
    ) -> Self {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut per_category: BTreeMap<Category, Cell> = Category::ALL
            .into_iter()
            .map(|c| (c, Cell::default()))
            .collect();
        let (mut exam, mut reddit, mut overall) =
            (Cell::default(), Cell::default(), Cell::default());
        for r in &items {
            per_category.entry(r.category).or_default().add(r.correct);
            match r.source {
                Source::Exam => exam.add(r.correct),
                Source::Reddit => reddit.add(r.correct),
            }
            overall.add(r.correct);
        }
        RunReport {
            method,
            backend,
            profile,
            seed,
            per_category,
            exam,
            reddit,
            overall,
            exclusions,
            items,
        }
    }

    /// The nine numeric cells of a report row, in column order.
    pub fn row(&self) -> Vec<Option<f64>> {
        let mut cells: Vec<Option<f64>> = Category::ALL
            .iter()
            .map(|c| self.per_category.get(c).and_then(Cell::accuracy))
            .collect();
        cells.extend([
            self.exam.accuracy(),
            self.reddit.accuracy(),
            self.overall.accuracy(),
        ]);
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

pub const EMPTY_CELL: &str = "—";

pub fn report_header() -> Vec<String> {
    let mut h = vec!["Method".to_string()];
    h.extend(Category::ALL.iter().map(|c| c.abbreviation().to_string()));
    h.extend(["Exam", "Reddit", "Avg"].map(String::from));
    h
}

fn cell_text(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}"))
        .unwrap_or_else(|| EMPTY_CELL.to_string())
}

/// Renders one row per report under the category and source columns.
pub fn render_report(reports: &[RunReport], format: ReportFormat) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.method.label().to_string()];
            row.extend(r.row().into_iter().map(cell_text));
            row
        })
        .collect();
    let header = report_header();
    match format {
        ReportFormat::Json => if reports.len() == 1 {
            serde_json::to_string_pretty(&reports[0])
        } else {
            serde_json::to_string_pretty(reports)
        }
        .expect("report serializes"),
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", header.join(" | "));
            out.push_str(&format!(
                "|{}|\n",
                header
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i == 0 { "---" } else { "---:" })
                    .collect::<Vec<_>>()
                    .join("|")
            ));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
        ReportFormat::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    rows.iter()
                        .map(|r| r[i].chars().count())
                        .chain([header[i].chars().count()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[String]| -> String {
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let pad = widths[i] - c.chars().count();
                        if i == 0 {
                            format!("{c}{}", " ".repeat(pad))
                        } else {
                            format!("{}{c}", " ".repeat(pad))
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let mut out = line(&header);
            out.push('\n');
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
            for row in rows {
                out.push_str(&line(&row));
                out.push('\n');
            }
            out
        }
    }
}

fn exemplar_block(profile: &PromptProfile, count: usize, with_rationale: bool) -> String {
    #[derive(Deserialize)]
    struct Exemplar {
        question: String,
        options: BTreeMap<char, String>,
        answer: char,
        rationale: String,
    }
    let exemplars: Vec<Exemplar> = profile
        .exemplars
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("shipped exemplars are valid"))
        .take(count)
        .collect();
    let mut out = String::new();
    for (i, e) in exemplars.iter().enumerate() {
        out.push_str(&format!(
            "Example {}:\nQuestion:\n{}\n\nOptions:\n{}\n\n",
            i + 1,
            e.question,
            format_options(&e.options)
        ));
        if with_rationale {
            out.push_str(&format!("Reasoning: {}\n", e.rationale));
        }
        out.push_str(&format!("Answer: {}\n\n", e.answer));
    }
    out
}

/// The single prompt used by the non-agent methods.
pub fn baseline_prompt(
    item: &BenchmarkItem,
    method: Method,
    profile: &PromptProfile,
    exemplars: usize,
) -> String {
    let (template, shots, rationale) = match method {
        Method::Direct => (profile.direct, 0, false),
        Method::DirectFs => (profile.direct, exemplars, false),
        Method::Cot => (profile.cot, 0, false),
        Method::CotFs => (profile.cot, exemplars, true),
        Method::React | Method::ToolReact => unreachable!("agent methods build their own prompts"),
    };
    fill(
        template,
        &[
            ("exemplars", &exemplar_block(profile, shots, rationale)),
            ("kern", item.kern.trim_end()),
            ("question", &item.question),
            ("options", &format_options(&item.options)),
        ],
    )
}

fn complete_once(
    backend: &dyn LlmBackend,
    messages: &[Message],
    config: &AgentConfig,
) -> Result<String, BackendError> {
    match backend.complete(messages, &config.decoding) {
        Err(BackendError::Transport(_)) => backend.complete(messages, &config.decoding),
        other => other,
    }
}

fn run_item(
    loaded: &LoadedItem,
    method: Method,
    provider: &dyn BackendProvider,
    config: &HarnessConfig,
    registry: &Registry,
) -> ItemRecord {
    let item = &loaded.item;
    let backend = provider.backend_for(item);
    let mut record = ItemRecord {
        id: item.id.clone(),
        source: item.source,
        category: item.category,
        gold: item.answer,
        predicted: None,
        correct: false,
        no_answer: false,
        error: None,
        output: None,
        trace: None,
    };
    if method.is_agent() {
        match run_agent(
            item,
            &loaded.score,
            registry,
            backend.as_ref(),
            &config.agent,
        ) {
            Ok(trace) => {
                record.predicted = trace.final_answer;
                record.error = trace.error.clone();
                record.trace = Some(trace);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
    } else {
        let profile =
            PromptProfile::get(&config.agent.profile).expect("profile checked by run_method");
        let prompt = baseline_prompt(item, method, &profile, config.exemplar_count);
        match complete_once(backend.as_ref(), &[Message::user(prompt)], &config.agent) {
            Ok(text) => {
                record.predicted = extract_letter(&text).filter(|l| item.options.contains_key(l));
                record.output = Some(text);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
    }
    record.no_answer = record.predicted.is_none();
    record.correct = record.predicted == Some(item.answer);
    record
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("unknown prompt profile `{0}`")]
    UnknownProfile(String),
    #[error("could not start worker threads: {0}")]
    Threads(String),
}

/// Evaluates every item with `method` and grades `predicted == answer`.
pub fn run_method(
    dataset: &Dataset,
    method: Method,
    provider: &dyn BackendProvider,
    config: &HarnessConfig,
) -> Result<RunReport, HarnessError> {
    if PromptProfile::get(&config.agent.profile).is_none() {
        return Err(HarnessError::UnknownProfile(config.agent.profile.clone()));
    }
    let registry = match method {
        Method::ToolReact => Registry::with_profiles(config.profiles.clone()),
        _ => Registry::empty(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Threads(e.to_string()))?;
    let records: Vec<ItemRecord> = pool.install(|| {
        dataset
            .items
            .par_iter()
            .map(|loaded| run_item(loaded, method, provider, config, &registry))
            .collect()
    });
    Ok(RunReport::from_records(
        method,
        provider.describe(),
        config.agent.profile.clone(),
        config.seed,
        records,
        dataset.exclusions.clone(),
    ))
}
