//! Command-line pipeline: ingest, bootstrap, refilter, generate, eval, stats.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory, so stages can be rerun independently:
//!
//! ```text
//! <output_dir>/bundles/<source>.jsonl       ingest
//! <output_dir>/stats.json                   ingest
//! <output_dir>/expressions/<source>.jsonl   bootstrap, refilter
//! <output_dir>/bootstrap_report.json        bootstrap, refilter
//! <output_dir>/corpus.jsonl                 generate
//! <output_dir>/manifest.json                generate
//! <output_dir>/eval_results.json            eval
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembler::{self, MixEntry, MixSpec, Source};
use crate::bootstrap::{
    self, BootstrapConfig, BootstrapError, BootstrapReport, HttpTransport, ModelClient,
    PromptedClient, TranscriptTransport,
};
use crate::eval;
use crate::ingest::{self, CorpusStats};
use crate::model::{ImageBundle, ReferringExpression, Task};
use crate::templates::TemplateBank;

/// Environment variable holding the bearer token for the model endpoint.
pub const TOKEN_ENV: &str = "RC_INSTRUCT_API_TOKEN";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("model client failure: {0}")]
    Client(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Client(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SceneGraph,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub kind: SourceKind,
    /// Scene graphs: image records with their objects.
    #[serde(default)]
    pub objects: Option<PathBuf>,
    #[serde(default)]
    pub relations: Option<PathBuf>,
    #[serde(default)]
    pub regions: Option<PathBuf>,
    /// Detection corpora: one or more annotation documents.
    #[serde(default)]
    pub annotations: Vec<PathBuf>,
    /// Run description bootstrapping on this source. Defaults to true for
    /// detection sources.
    #[serde(default)]
    pub bootstrap: Option<bool>,
    /// Mixing weight. Defaults to 1.0 for scene graphs and 0.1 for detection
    /// sources.
    #[serde(default)]
    pub weight: Option<f64>,
}

impl SourceConfig {
    pub fn bootstraps(&self) -> bool {
        self.bootstrap.unwrap_or(self.kind == SourceKind::Detection)
    }

    pub fn mix_weight(&self) -> f64 {
        self.weight.unwrap_or(match self.kind {
            SourceKind::SceneGraph => 1.0,
            SourceKind::Detection => 0.1,
        })
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = [&self.objects, &self.relations, &self.regions]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        v.extend(self.annotations.iter().map(PathBuf::as_path));
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    /// HTTP endpoint accepting `{image_uri, prompt}` and returning `{text}`.
    pub endpoint: Option<String>,
    /// Recorded answers to replay instead of calling an endpoint.
    pub transcript: Option<PathBuf>,
    /// Send image bytes (base64) instead of the URI.
    pub inline_images: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub epoch_size: Option<usize>,
    /// Tasks to generate; all annotation tasks when absent.
    pub tasks: Option<Vec<Task>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Replacement template file.
    pub templates: Option<PathBuf>,
    pub workers: Option<usize>,
    pub log_level: Option<String>,
    pub sources: Vec<SourceConfig>,
    pub bootstrap: BootstrapConfig,
    pub client: ClientConfig,
    pub mix: MixConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            templates: None,
            workers: None,
            log_level: None,
            sources: Vec::new(),
            bootstrap: BootstrapConfig::default(),
            client: ClientConfig::default(),
            mix: MixConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse TOML text and apply `key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let mut root = toml::Value::Table(table);
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            set_path(&mut root, &path, parse_value(raw.trim()))
                .map_err(|e| CliError::Config(format!("override `{o}`: {e}")))?;
        }
        let cfg: PipelineConfig = root.try_into().map_err(|e| CliError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.templates.as_mut().map(fix);
        self.client.transcript.as_mut().map(fix);
        for s in &mut self.sources {
            s.objects.as_mut().map(fix);
            s.relations.as_mut().map(fix);
            s.regions.as_mut().map(fix);
            s.annotations.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bootstrap
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for s in &self.sources {
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::Config(format!("duplicate source `{}`", s.name)));
            }
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("bad source name `{}`", s.name)));
            }
            let ok = match s.kind {
                SourceKind::SceneGraph => s.objects.is_some() && s.annotations.is_empty(),
                SourceKind::Detection => {
                    !s.annotations.is_empty()
                        && s.objects.is_none()
                        && s.relations.is_none()
                        && s.regions.is_none()
                }
            };
            if !ok {
                return Err(CliError::Config(format!(
                    "source `{}`: scene_graph sources need `objects`, detection sources need `annotations`",
                    s.name
                )));
            }
            if !(s.mix_weight().is_finite() && s.mix_weight() > 0.0) {
                return Err(CliError::Config(format!("source `{}`: weight must be positive", s.name)));
            }
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    fn bundles_path(&self, source: &str) -> PathBuf {
        self.output_dir.join("bundles").join(format!("{source}.jsonl"))
    }

    fn expressions_path(&self, source: &str) -> PathBuf {
        self.output_dir.join("expressions").join(format!("{source}.jsonl"))
    }

    fn report_path(&self) -> PathBuf {
        self.output_dir.join("bootstrap_report.json")
    }

    fn bank(&self) -> Result<TemplateBank, CliError> {
        match &self.templates {
            Some(p) => TemplateBank::from_path(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(TemplateBank::builtin().clone()),
        }
    }

    fn tasks(&self) -> Vec<Task> {
        self.mix.tasks.clone().unwrap_or_else(|| {
            Task::ALL
                .into_iter()
                .filter(|t| *t != Task::MultichoiceVqa)
                .collect()
        })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(node: &mut toml::Value, path: &[&str], value: toml::Value) -> Result<(), String> {
    let (head, rest) = path.split_first().ok_or("empty key")?;
    match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value);
                return Ok(());
            }
            let child = t
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            set_path(child, rest, value)
        }
        toml::Value::Array(a) => {
            let i: usize = head.parse().map_err(|_| format!("`{head}` is not an index"))?;
            let slot = a.get_mut(i).ok_or_else(|| format!("index {i} out of range"))?;
            if rest.is_empty() {
                *slot = value;
                Ok(())
            } else {
                set_path(slot, rest, value)
            }
        }
        _ => Err(format!("`{head}` is below a non-table value")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "rc-instruct", version, about = "Build referential-comprehension instruction data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML pipeline config; relative paths in it are resolved against its directory.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set bootstrap.retry_limit=0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse source corpora into image bundles and write corpus statistics.
    Ingest,
    /// Describe and re-ground candidate objects with the model client.
    Bootstrap {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Re-apply the IoU filter to saved bootstrap records at a new threshold.
    Refilter {
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Mix sources and write the instruction corpus with its manifest.
    Generate {
        /// Leave a source out of the mix.
        #[arg(long = "exclude-source", value_name = "NAME")]
        exclude: Vec<String>,
        #[arg(long)]
        epoch_size: Option<usize>,
    },
    /// Score a JSON-lines file of predictions.
    Eval {
        predictions: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        /// Also write per-item scores to this file.
        #[arg(long)]
        per_item: Option<PathBuf>,
    },
    /// Print statistics of the stored bundles and stage outputs.
    Stats,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(cfg: &PipelineConfig, verbose: u8) {
    let level = match verbose {
        0 => cfg.log_level.clone().unwrap_or_else(|| "warn".into()),
        1 => "info".into(),
        2 => "debug".into(),
        _ => "trace".into(),
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

pub fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut cfg = PipelineConfig::from_toml(&text, &global.overrides)?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => PipelineConfig::from_toml("", &global.overrides)?,
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(d) = &global.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(w) = global.workers {
        cfg.workers = Some(w);
    }
    if let Some(t) = &global.templates {
        cfg.templates = Some(t.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.global)?;
    init_logging(&cfg, cli.global.verbose);
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = cfg.workers {
            b = b.num_threads(w);
        }
        b.build().map_err(|e| CliError::Config(e.to_string()))?
    };
    match cli.command {
        Command::Ingest => pool.install(|| cmd_ingest(&cfg)),
        Command::Bootstrap { lambda } => {
            if let Some(l) = lambda {
                cfg.bootstrap.lambda = l;
                cfg.validate()?;
            }
            cmd_bootstrap(&cfg)
        }
        Command::Refilter { lambda } => {
            if let Some(l) = lambda {
                cfg.bootstrap.lambda = l;
                cfg.validate()?;
            }
            cmd_refilter(&cfg)
        }
        Command::Generate { exclude, epoch_size } => {
            if epoch_size.is_some() {
                cfg.mix.epoch_size = epoch_size;
            }
            pool.install(|| cmd_generate(&cfg, &exclude))
        }
        Command::Eval {
            predictions,
            iou_threshold,
            per_item,
        } => pool.install(|| cmd_eval(&cfg, &predictions, iou_threshold, per_item.as_deref())),
        Command::Stats => cmd_stats(&cfg),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{}: no such file", path.display())))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Input(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub sources: BTreeMap<String, CorpusStats>,
    pub total: CorpusStats,
}

fn load_source(s: &SourceConfig) -> Result<(Vec<ImageBundle>, CorpusStats), CliError> {
    let ctx = |e: ingest::IngestError| CliError::Input(format!("source `{}`: {e}", s.name));
    match s.kind {
        SourceKind::SceneGraph => {
            let opt = |p: &Option<PathBuf>| -> Result<Box<dyn Read>, CliError> {
                match p {
                    Some(p) => Ok(Box::new(open(p)?)),
                    None => Ok(Box::new(io::empty())),
                }
            };
            ingest::load_scene_graph(opt(&s.objects)?, opt(&s.relations)?, opt(&s.regions)?).map_err(ctx)
        }
        SourceKind::Detection => {
            let mut bundles = Vec::new();
            let mut stats = CorpusStats::default();
            for p in &s.annotations {
                let (b, st) = ingest::load_detection(open(p)?).map_err(|e| {
                    CliError::Input(format!("source `{}`, {}: {e}", s.name, p.display()))
                })?;
                bundles.extend(b);
                stats.merge(&st);
            }
            Ok((bundles, stats))
        }
    }
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    if cfg.sources.is_empty() {
        return Err(CliError::Config("no sources configured".into()));
    }
    for s in &cfg.sources {
        for p in s.inputs() {
            require_file(p)?;
        }
    }
    let filter = cfg.bootstrap.filter();
    let mut doc = StatsDocument::default();
    for s in &cfg.sources {
        let (mut bundles, mut stats) = load_source(s)?;
        if s.bootstraps() {
            let (kept, f) = ingest::filter_for_bootstrap(bundles, &filter);
            stats.apply_filter(&f);
            bundles = kept;
        }
        log::info!("{}: {} images", s.name, bundles.len());
        write_jsonl(&cfg.bundles_path(&s.name), &bundles)?;
        doc.total.merge(&stats);
        doc.sources.insert(s.name.clone(), stats);
    }
    write_json(&cfg.output_dir.join("stats.json"), &doc)
}

fn bootstrap_sources(cfg: &PipelineConfig) -> Vec<&SourceConfig> {
    cfg.sources.iter().filter(|s| s.bootstraps()).collect()
}

fn build_client(cfg: &PipelineConfig) -> Result<Box<dyn ModelClient>, CliError> {
    let bank = cfg.bank()?;
    if let Some(t) = &cfg.client.transcript {
        require_file(t)?;
        let transport = TranscriptTransport::from_path(t).map_err(|e| CliError::Input(e.to_string()))?;
        return Ok(Box::new(PromptedClient::new(transport, &bank)));
    }
    if let Some(url) = &cfg.client.endpoint {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        let transport = HttpTransport::new(url.clone(), token, cfg.bootstrap.request_timeout)
            .inline_images(cfg.client.inline_images);
        return Ok(Box::new(PromptedClient::new(transport, &bank)));
    }
    Err(CliError::Config("client needs `endpoint` or `transcript`".into()))
}

pub fn cmd_bootstrap(cfg: &PipelineConfig) -> Result<(), CliError> {
    let sources = bootstrap_sources(cfg);
    if sources.is_empty() {
        return Err(CliError::Config("no source has bootstrapping enabled".into()));
    }
    for s in &sources {
        require_file(&cfg.bundles_path(&s.name))?;
    }
    let client = build_client(cfg)?;
    let mut reports = BTreeMap::new();
    let mut abort = None;
    for s in sources {
        let bundles: Vec<ImageBundle> = read_jsonl(&cfg.bundles_path(&s.name))?;
        match bootstrap::run_bootstrap(client.as_ref(), &bundles, &cfg.bootstrap) {
            Ok(out) => {
                write_jsonl(&cfg.expressions_path(&s.name), &out.expressions)?;
                reports.insert(s.name.clone(), out.report);
            }
            Err(BootstrapError::FailureRate {
                failures,
                candidates,
                report,
            }) => {
                reports.insert(s.name.clone(), report);
                abort = Some(format!(
                    "source `{}`: {failures} of {candidates} candidates failed",
                    s.name
                ));
                break;
            }
            Err(BootstrapError::Config(m)) => return Err(CliError::Config(m)),
        }
    }
    write_json(&cfg.report_path(), &reports)?;
    match abort {
        Some(m) => Err(CliError::Client(m)),
        None => Ok(()),
    }
}

pub fn cmd_refilter(cfg: &PipelineConfig) -> Result<(), CliError> {
    let old: BTreeMap<String, BootstrapReport> = if cfg.report_path().is_file() {
        read_json(&cfg.report_path())?
    } else {
        BTreeMap::new()
    };
    let mut reports = BTreeMap::new();
    for s in bootstrap_sources(cfg) {
        let path = cfg.expressions_path(&s.name);
        require_file(&path)?;
        let mut exprs: Vec<ReferringExpression> = read_jsonl(&path)?;
        let mut report = bootstrap::refilter(&mut exprs, cfg.bootstrap.lambda);
        report.request_failures = old.get(&s.name).map_or(0, |r| r.request_failures);
        write_jsonl(&path, &exprs)?;
        reports.insert(s.name.clone(), report);
    }
    write_json(&cfg.report_path(), &reports)
}

pub fn cmd_generate(cfg: &PipelineConfig, exclude: &[String]) -> Result<(), CliError> {
    for name in exclude {
        if !cfg.sources.iter().any(|s| &s.name == name) {
            return Err(CliError::Config(format!("unknown source `{name}`")));
        }
    }
    let chosen: Vec<&SourceConfig> = cfg.sources.iter().filter(|s| !exclude.contains(&s.name)).collect();
    if chosen.is_empty() {
        return Err(CliError::Config("no sources left to mix".into()));
    }
    for s in &chosen {
        require_file(&cfg.bundles_path(&s.name))?;
    }
    let bank = cfg.bank()?;
    let mut sources = Vec::with_capacity(chosen.len());
    for s in &chosen {
        let mut bundles: Vec<ImageBundle> = read_jsonl(&cfg.bundles_path(&s.name))?;
        let exprs_path = cfg.expressions_path(&s.name);
        if exprs_path.is_file() {
            let exprs: Vec<ReferringExpression> = read_jsonl(&exprs_path)?;
            bootstrap::attach_expressions(&mut bundles, &exprs);
        }
        sources.push(Source {
            name: s.name.clone(),
            bundles,
        });
    }
    let spec = MixSpec {
        entries: chosen
            .iter()
            .map(|s| MixEntry {
                source: s.name.clone(),
                weight: s.mix_weight(),
            })
            .collect(),
        epoch_size: cfg.mix.epoch_size,
        seed: cfg.seed,
    };
    let corpus = assembler::assemble(&sources, &spec, &cfg.tasks(), &bank).map_err(|e| match e {
        assembler::AssembleError::Io(e) => CliError::Input(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let out = cfg.output_dir.join("corpus.jsonl");
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let file = File::create(&out).map_err(io_err(&out))?;
    assembler::serialize(&corpus.samples, BufWriter::new(file)).map_err(|e| CliError::Input(e.to_string()))?;
    write_json(&cfg.output_dir.join("manifest.json"), &corpus.manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub iou_threshold: f64,
    pub results: Vec<eval::EvalResult>,
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    predictions: &Path,
    iou_threshold: f64,
    per_item: Option<&Path>,
) -> Result<(), CliError> {
    require_file(predictions)?;
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(CliError::Config(format!("iou threshold {iou_threshold} outside [0, 1]")));
    }
    let items = eval::read_items(open(predictions)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", predictions.display())))?;
    let results = eval::evaluate(&items, iou_threshold);
    if let Some(p) = per_item {
        let detail: BTreeMap<&str, &[eval::ItemScore]> = results
            .iter()
            .map(|r| (r.metric_name.as_str(), r.per_item.as_slice()))
            .collect();
        write_json(p, &detail)?;
    }
    for r in &results {
        println!("{}: {:.2} ({} items)", r.metric_name, r.value, r.item_count);
    }
    let summary = EvalDocument {
        iou_threshold,
        results: results
            .into_iter()
            .map(|mut r| {
                r.per_item.clear();
                r
            })
            .collect(),
    };
    write_json(&cfg.output_dir.join("eval_results.json"), &summary)
}

#[derive(Debug, Serialize)]
struct StatsReport {
    bundles: BTreeMap<String, CorpusStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BTreeMap<String, BootstrapReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<assembler::Manifest>,
}

pub fn cmd_stats(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut bundles = BTreeMap::new();
    for s in &cfg.sources {
        let path = cfg.bundles_path(&s.name);
        if path.is_file() {
            let b: Vec<ImageBundle> = read_jsonl(&path)?;
            bundles.insert(s.name.clone(), CorpusStats::of_bundles(&b));
        }
    }
    let report = StatsReport {
        bundles,
        bootstrap: if cfg.report_path().is_file() {
            Some(read_json(&cfg.report_path())?)
        } else {
            None
        },
        corpus: {
            let p = cfg.output_dir.join("manifest.json");
            if p.is_file() {
                Some(read_json(&p)?)
            } else {
                None
            }
        },
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{text}");
    Ok(())
}
