//! `periphemu`: validate models, resolve constants, run extraction, and
//! execute scenarios against a machine.
//!
//! Exit codes: 0 pass, 1 semantic failure, 2 input error, 3 bus fault.

mod live;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use periphemu_core::frontend::{
    run_pipeline, LlmClient, MockClient, PipelineConfig, PipelineError, PipelineOutput, Transcript,
};
use periphemu_core::jsonish;
use periphemu_core::primitives::{
    decode_device_instance, decode_model_instance, decode_platform, serialize_model_instance, FormatError,
    IntResolver, LiteralInts, ParseMode, Platform,
};
use periphemu_core::resolver::{build_symbol_table, resolve_value, HeaderSource, SymbolTable};
use periphemu_core::runtime::build_machine;
use periphemu_core::scenario::{load_scenario, run_scenario};
use periphemu_core::schema::{export_schemas, SchemaRegistry};
use periphemu_core::validator::{validate_all, validate_platform, Stage, ValidationReport};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "periphemu", version, about = "Primitive-based peripheral models: extraction, validation, emulation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Reject unknown keys in documents (default)
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Drop unknown keys with a warning
    #[arg(long, global = true)]
    lenient: bool,
    /// Queries per extraction stage
    #[arg(long, global = true, value_name = "N")]
    retries: Option<u32>,
}

impl Global {
    fn mode(&self) -> Option<ParseMode> {
        match (self.strict, self.lenient) {
            (true, _) => Some(ParseMode::Strict),
            (_, true) => Some(ParseMode::Lenient),
            _ => None,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a model, device or platform document for self-contradictions
    Validate {
        path: PathBuf,
        /// Driver headers for symbolic integers
        #[arg(long, num_args = 1..)]
        headers: Vec<PathBuf>,
    },
    /// Resolve a constant expression against driver headers
    Resolve {
        expr: String,
        #[arg(long, num_args = 1..)]
        headers: Vec<PathBuf>,
    },
    /// Run the staged extraction pipeline
    Extract {
        config: PathBuf,
        /// Replay a recorded transcript
        #[arg(long, value_name = "PATH", conflicts_with = "live", required_unless_present = "live")]
        mock: Option<PathBuf>,
        /// Query a live model endpoint
        #[arg(long)]
        live: bool,
        /// Output directory
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
    },
    /// Execute a scenario against a platform
    Run {
        platform: PathBuf,
        scenario: PathBuf,
        /// Write the execution trace here (JSON lines)
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        headers: Vec<PathBuf>,
    },
    /// Schema utilities
    Schemas {
        #[command(subcommand)]
        cmd: SchemasCmd,
    },
}

#[derive(Subcommand)]
enum SchemasCmd {
    /// Print every category schema as JSON
    Export {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// A command outcome other than success.
#[derive(Debug)]
enum Failure {
    Semantic(String),
    Input(String),
    BusFault(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Semantic(_) => 1,
            Failure::Input(_) => 2,
            Failure::BusFault(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Semantic(m) | Failure::Input(m) | Failure::BusFault(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_headers(paths: &[PathBuf]) -> Result<Vec<HeaderSource>, Failure> {
    paths
        .iter()
        .map(|p| Ok(HeaderSource::new(p.display().to_string(), read(p)?)))
        .collect()
}

fn symbols(paths: &[PathBuf]) -> Result<Option<SymbolTable>, Failure> {
    if paths.is_empty() {
        return Ok(None);
    }
    build_symbol_table(&load_headers(paths)?).map(Some).map_err(input)
}

fn warn_all(ws: &[String]) {
    for w in ws {
        log::warn!("{w}");
    }
}

/// Decoding errors that are about the model's content rather than its form.
fn format_finding(e: &FormatError) -> Option<ValidationReport> {
    let mut r = ValidationReport::pass();
    match e {
        FormatError::Invariant { path, .. } => r.push(Stage::Semantics, "invariant", vec![path.clone()], e.to_string()),
        FormatError::Dangling { path, target } => {
            r.push(Stage::Semantics, "dangling-reference", vec![path.clone(), target.clone()], e.to_string())
        }
        _ => return None,
    }
    Some(r)
}

fn cmd_validate(g: &Global, path: &Path, headers: &[PathBuf]) -> Outcome {
    let text = read(path)?;
    let doc = jsonish::parse_document(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let table = symbols(headers)?;
    let ints: &dyn IntResolver = match &table {
        Some(t) => t,
        None => &LiteralInts,
    };
    let registry = SchemaRegistry::builtin();
    let mode = g.mode().unwrap_or_default();
    let decode_err = |e: FormatError| match format_finding(&e) {
        Some(r) => Ok(r),
        None => Err(Failure::Input(format!("{}: {e}", path.display()))),
    };
    let obj = doc.as_object();
    let has = |k: &str| obj.is_some_and(|m| m.contains_key(k));
    let (kind, report) = if has("instances") {
        let report = match decode_platform(&doc, &registry, mode, ints) {
            Ok(p) => {
                warn_all(&p.warnings);
                let mut r = validate_platform(&p.value.instances);
                if r.passed() {
                    for d in &p.value.instances {
                        if let Err(e) = d.check() {
                            r.merge(decode_err(e)?);
                        }
                    }
                }
                r
            }
            Err(e) => decode_err(e)?,
        };
        ("platform", report)
    } else if has("base") {
        let report = match decode_device_instance(&doc, &registry, mode, ints) {
            Ok(d) => {
                warn_all(&d.warnings);
                let mut r = validate_all(&d.value.model, std::slice::from_ref(&d.value));
                if r.passed() {
                    if let Err(e) = d.value.check() {
                        r.merge(decode_err(e)?);
                    }
                }
                r
            }
            Err(e) => decode_err(e)?,
        };
        ("device", report)
    } else {
        let report = match decode_model_instance(&doc, &registry, mode, ints) {
            Ok(m) => {
                warn_all(&m.warnings);
                let mut r = validate_all(&m.value, &[]);
                if r.passed() {
                    if let Err(e) = m.value.check() {
                        r.merge(decode_err(e)?);
                    }
                }
                r
            }
            Err(e) => decode_err(e)?,
        };
        ("model", report)
    };
    println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("reports serialize"));
    for f in &report.findings {
        eprintln!("{f}");
    }
    if report.passed() {
        eprintln!("{}: {kind} passes", path.display());
        Ok(())
    } else {
        Err(Failure::Semantic(format!("{}: {kind} has {} finding(s)", path.display(), report.findings.len())))
    }
}

fn cmd_resolve(expr: &str, headers: &[PathBuf]) -> Outcome {
    let table = symbols(headers)?.unwrap_or_default();
    match resolve_value(expr, &table) {
        Ok(v) => {
            println!("{v} ({v:#x})");
            Ok(())
        }
        Err(e) => {
            print!("{}", e.render_trace());
            Err(Failure::Semantic(e.to_string()))
        }
    }
}

/// Extraction settings. Corpus paths are relative to the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractConfig {
    mcu: String,
    #[serde(default)]
    corpus: Vec<PathBuf>,
    retries: Option<u32>,
    mode: Option<String>,
    temperature: Option<f64>,
    /// Model name for `--live`.
    model: Option<String>,
    /// Base URL for `--live`.
    endpoint: Option<String>,
}

fn pipeline_config(g: &Global, path: &Path) -> Result<(PipelineConfig, ExtractConfig), Failure> {
    let raw: ExtractConfig =
        serde_json::from_str(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let corpus: Vec<PathBuf> = raw.corpus.iter().map(|p| dir.join(p)).collect();
    let mut cfg = PipelineConfig::new(raw.mcu.clone());
    cfg.corpus = load_headers(&corpus)?;
    cfg.temperature = raw.temperature;
    if let Some(r) = g.retries.or(raw.retries) {
        cfg.retries = r;
    }
    cfg.mode = match (g.mode(), raw.mode.as_deref()) {
        (Some(m), _) => m,
        (None, None | Some("strict")) => ParseMode::Strict,
        (None, Some("lenient")) => ParseMode::Lenient,
        (None, Some(other)) => return Err(Failure::Input(format!("unknown mode `{other}`"))),
    };
    Ok((cfg, raw))
}

fn write_outputs(out: &Path, o: &PipelineOutput) -> Outcome {
    let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json serializes") + "\n";
    write(&out.join("devices.json"), &pretty(&o.devices_json()))?;
    for m in &o.models {
        write(&out.join("models").join(format!("{}.json", m.category)), &serialize_model_instance(m))?;
    }
    write(&out.join("transcript.json"), &o.transcript.to_json())?;
    let stages = json!({ "stages": o.stages, "skipped": o.skipped, "warnings": o.warnings });
    write(&out.join("stages.json"), &pretty(&stages))
}

fn cmd_extract(g: &Global, config: &Path, mock: Option<&Path>, out: &Path) -> Outcome {
    let (cfg, raw) = pipeline_config(g, config)?;
    let mut client: Box<dyn LlmClient> = match mock {
        Some(p) => Box::new(MockClient::new(
            Transcript::from_json(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(live::LiveClient::from_env(raw.model.as_deref(), raw.endpoint.as_deref()).map_err(input)?),
    };
    let o = match run_pipeline(client.as_mut(), &cfg) {
        Ok(o) => o,
        Err(PipelineError::StageFailed(r)) => {
            for (i, rep) in r.rejected.iter().enumerate() {
                for f in &rep.findings {
                    eprintln!("attempt {}: {f}", i + 1);
                }
            }
            let t = Transcript { records: r.records.clone() };
            write(&out.join("transcript.json"), &t.to_json())?;
            return Err(Failure::Semantic(PipelineError::StageFailed(r).to_string()));
        }
        Err(e) => return Err(input(e)),
    };
    for s in &o.stages {
        let verdict = if s.payload.is_some() { "accepted" } else { "FAILED" };
        eprintln!("stage {} `{}`: {verdict} after {} attempt(s)", s.stage.number(), s.subject, s.attempts);
    }
    warn_all(&o.warnings);
    write_outputs(out, &o)?;
    println!("{} device instance(s) written to {}", o.devices.len(), out.join("devices.json").display());
    if o.succeeded() {
        Ok(())
    } else {
        let names: Vec<String> =
            o.skipped.iter().map(|s| format!("{} (stage {} `{}`)", s.category, s.failed_stage.number(), s.subject)).collect();
        Err(Failure::Semantic(format!("categories failed: {}", names.join(", "))))
    }
}

fn load_platform(g: &Global, path: &Path, headers: &[PathBuf]) -> Result<Platform, Failure> {
    let text = read(path)?;
    let doc = jsonish::parse_document(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let table = symbols(headers)?;
    let ints: &dyn IntResolver = match &table {
        Some(t) => t,
        None => &LiteralInts,
    };
    let p = decode_platform(&doc, &SchemaRegistry::builtin(), g.mode().unwrap_or_default(), ints)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    warn_all(&p.warnings);
    for d in &p.value.instances {
        d.check().map_err(|e| Failure::Input(format!("{}: device `{}`: {e}", path.display(), d.name)))?;
    }
    Ok(p.value)
}

fn cmd_run(g: &Global, platform: &Path, scenario: &Path, trace: Option<&Path>, headers: &[PathBuf]) -> Outcome {
    let p = load_platform(g, platform, headers)?;
    let mut m = build_machine(&p.instances, p.ram).map_err(|e| Failure::Input(format!("{}: {e}", platform.display())))?;
    let s = load_scenario(&read(scenario)?, &m).map_err(|e| Failure::Input(format!("{}: {e}", scenario.display())))?;
    let result = run_scenario(&mut m, &s);
    if let Some(t) = trace {
        write(t, &m.trace().to_json_lines())?;
    }
    match result {
        Ok(()) => {
            println!("PASS {} ({} steps)", scenario.display(), s.steps.len());
            Ok(())
        }
        Err(f) if f.is_bus_fault() => Err(Failure::BusFault(f.to_string())),
        Err(f) => Err(Failure::Semantic(f.to_string())),
    }
}

fn cmd_schemas_export(out: Option<&Path>) -> Outcome {
    let text = export_schemas(SchemaRegistry::builtin().iter()) + "\n";
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.cmd {
        Cmd::Validate { path, headers } => cmd_validate(g, path, headers),
        Cmd::Resolve { expr, headers } => cmd_resolve(expr, headers),
        Cmd::Extract { config, mock, live: _, out } => cmd_extract(g, config, mock.as_deref(), out),
        Cmd::Run { platform, scenario, trace, headers } => cmd_run(g, platform, scenario, trace.as_deref(), headers),
        Cmd::Schemas { cmd: SchemasCmd::Export { out } } => cmd_schemas_export(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
