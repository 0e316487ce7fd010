use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use kernlens::agent::{run_agent, AgentConfig, LlmBackend, RemoteBackend};
use kernlens::harness::{
    load_dataset, render_report, run_method, BackendProvider, HarnessConfig, Method, ReportFormat,
    ScriptFile, SharedBackend,
};
use kernlens::kern::{parse_kern_file, validate_corpus, FileStatus, ParseOptions};
use kernlens::key::KeyProfiles;
use kernlens::tools::{serve, Registry, ToolCall};
use kernlens::Score;

/// Symbolic music analysis over Humdrum kern scores.
#[derive(Debug, Parser)]
#[command(name = "kernlens", version)]
struct Cli {
    /// JSON file with replacement key profiles ({"major": [...12], "minor": [...12]}).
    #[arg(long, global = true, value_name = "FILE")]
    profiles: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a kern file and print a summary or its canonical JSON.
    Parse {
        file: PathBuf,
        #[arg(long)]
        json: bool,
        /// Replace malformed tokens by rests instead of failing.
        #[arg(long)]
        recover: bool,
    },
    /// Run one analysis tool on a kern file.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        tool: String,
        #[arg(long, default_value = "{}")]
        args: String,
        /// Print the full evidence record instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Answer newline-delimited tool requests on stdin.
    Serve {
        /// Score that requests without an inline `kern` field refer to.
        #[arg(long)]
        score: Option<PathBuf>,
    },
    /// Run the tool agent on a single item and print its trace.
    Agent {
        item_file: PathBuf,
        /// Item id, when the file holds more than one item.
        #[arg(long)]
        id: Option<String>,
        /// `scripted:<file>` or `remote`.
        #[arg(long, env = "KERNLENS_BACKEND", default_value = "remote")]
        backend: String,
        #[arg(long, default_value_t = 12)]
        max_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate answer methods on a dataset and print an accuracy table.
    Bench {
        dataset: PathBuf,
        /// One of direct, direct_fs, cot, cot_fs, react, tool_react, or all.
        #[arg(long, required = true, num_args = 1..)]
        method: Vec<String>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recorded in the report for provenance.
        #[arg(long)]
        seed: Option<u64>,
        /// `scripted:<file>` or `remote`.
        #[arg(long, env = "KERNLENS_BACKEND", default_value = "remote")]
        backend: String,
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long, default_value_t = 12)]
        max_steps: usize,
    },
    /// Parse every kern file in a directory and report fatals.
    Validate { dir: PathBuf },
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(message.into()))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_profiles(path: Option<&Path>) -> Result<KeyProfiles> {
    match path {
        Some(p) => KeyProfiles::load(p).map_err(|e| anyhow!(e)),
        None => Ok(KeyProfiles::default()),
    }
}

fn load_score(path: &Path) -> Result<Score> {
    let (score, diagnostics) = parse_kern_file(path, ParseOptions::default())
        .with_context(|| format!("cannot parse {}", path.display()))?;
    for w in &diagnostics.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(score)
}

fn provider(spec: &str) -> Result<Box<dyn BackendProvider>> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let script = ScriptFile::load(Path::new(path)).map_err(|e| anyhow!(e))?;
        Ok(Box::new(script))
    } else if spec == "remote" {
        let backend: Arc<dyn LlmBackend> = Arc::new(RemoteBackend::from_env()?);
        Ok(Box::new(SharedBackend(backend)))
    } else {
        Err(usage(format!(
            "unknown backend `{spec}`; use scripted:<file> or remote"
        )))
    }
}

fn methods(names: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            out.extend(Method::ALL);
        } else {
            out.push(name.parse::<Method>().map_err(usage)?);
        }
    }
    out.dedup();
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let profiles = load_profiles(cli.profiles.as_deref())?;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Parse {
            file,
            json,
            recover,
        } => {
            let (score, diagnostics) = parse_kern_file(&file, ParseOptions { recover })
                .with_context(|| format!("cannot parse {}", file.display()))?;
            if json {
                writeln!(stdout, "{}", score.to_canonical_json())?;
            } else {
                writeln!(
                    stdout,
                    "{}: {} part(s), {} measure(s), {} warning(s)",
                    file.display(),
                    score.parts().len(),
                    score.measure_count(),
                    diagnostics.warnings.len()
                )?;
                for w in &diagnostics.warnings {
                    writeln!(stdout, "  warning: {w}")?;
                }
            }
        }
        Command::Analyze {
            file,
            tool,
            args,
            json,
        } => {
            let score = load_score(&file)?;
            let args: serde_json::Value = serde_json::from_str(&args)
                .map_err(|e| usage(format!("--args is not valid JSON: {e}")))?;
            let call = ToolCall::new(&tool, args);
            let evidence = Registry::with_profiles(profiles).execute(&score, &call);
            if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&evidence)?)?;
            } else {
                writeln!(stdout, "{}", evidence.summary)?;
            }
            if !evidence.ok {
                bail!("the tool call failed");
            }
        }
        Command::Serve { score } => {
            let score = score.as_deref().map(load_score).transpose()?;
            let registry = Registry::with_profiles(profiles);
            let stdin = io::stdin().lock();
            serve(
                &registry,
                score.as_ref(),
                BufReader::new(stdin),
                &mut stdout,
            )?;
        }
        Command::Agent {
            item_file,
            id,
            backend,
            max_steps,
            out,
        } => {
            let dataset = load_dataset(&item_file)?;
            if let Some(ex) = dataset.exclusions.first() {
                bail!("item {} has an unusable score: {}", ex.id, ex.reason);
            }
            let loaded = match &id {
                Some(id) => dataset
                    .items
                    .iter()
                    .find(|l| &l.item.id == id)
                    .ok_or_else(|| anyhow!("no item with id `{id}`"))?,
                None => match dataset.items.as_slice() {
                    [one] => one,
                    [] => bail!("{} holds no items", item_file.display()),
                    _ => return Err(usage("the file holds several items; choose one with --id")),
                },
            };
            let provider = provider(&backend)?;
            let config = AgentConfig {
                max_steps,
                ..AgentConfig::default()
            };
            let trace = run_agent(
                &loaded.item,
                &loaded.score,
                &Registry::with_profiles(profiles),
                provider.backend_for(&loaded.item).as_ref(),
                &config,
            )?;
            let text = trace.to_json();
            match out {
                Some(path) => std::fs::write(&path, format!("{text}\n"))
                    .with_context(|| format!("cannot write {}", path.display()))?,
                None => writeln!(stdout, "{text}")?,
            }
            match trace.final_answer {
                Some(letter) => log::info!("answer {letter} (gold {})", loaded.item.answer),
                None => log::warn!("no answer: {:?}", trace.error),
            }
        }
        Command::Bench {
            dataset,
            method,
            out,
            seed,
            backend,
            format,
            parallelism,
            max_steps,
        } => {
            let format: ReportFormat = format.parse().map_err(usage)?;
            let methods = methods(&method)?;
            let provider = provider(&backend)?;
            let data = load_dataset(&dataset)?;
            for ex in &data.exclusions {
                log::warn!(
                    "excluded {} ({}:{}): {}",
                    ex.id,
                    ex.file,
                    ex.line,
                    ex.reason
                );
            }
            let config = HarnessConfig {
                agent: AgentConfig {
                    max_steps,
                    ..AgentConfig::default()
                },
                parallelism,
                seed,
                profiles,
                ..HarnessConfig::default()
            };
            let mut reports = Vec::new();
            for m in methods {
                reports.push(run_method(&data, m, provider.as_ref(), &config)?);
            }
            if let Some(path) = out {
                std::fs::write(&path, render_report(&reports, ReportFormat::Json) + "\n")
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            write!(stdout, "{}", render_report(&reports, format))?;
        }
        Command::Validate { dir } => {
            let report =
                validate_corpus(&dir).with_context(|| format!("cannot read {}", dir.display()))?;
            for f in &report.files {
                match &f.status {
                    FileStatus::Ok { warnings, .. } => writeln!(
                        stdout,
                        "ok     {} ({warnings} warning(s))",
                        f.path.display()
                    )?,
                    FileStatus::Fatal { message } => {
                        writeln!(stdout, "FATAL  {}: {message}", f.path.display())?
                    }
                }
            }
            writeln!(
                stdout,
                "{} file(s), {} fatal, {} warning(s)",
                report.files.len(),
                report.fatal_count,
                report.total_warnings
            )?;
            if !report.is_success() {
                bail!("{} file(s) failed to parse", report.fatal_count);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("Run `kernlens --help` for usage.");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
