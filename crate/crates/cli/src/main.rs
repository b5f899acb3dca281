//! `intervene`: generate data, train and fine-tune models, run interventions,
//! curves and ablations, write reports and serve the HTTP API.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use thiserror::Error;

use intervene_core::data::{Mechanism, Split};
use intervene_core::harness::{
    emit_report, load_bundle, run_ablation, run_pipeline, save_bundle, write_registry_with, AblationAxis, ExperimentConfig, Family,
    ResultsBundle, SeedArtifacts,
};
use intervene_core::interventions::{DistanceKind, StrategyKind};
use intervene_core::models::ProbeLinearity;
use intervene_service::{AppState, ExplainRequest, InterveneRequest, Overrides, Preset};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] intervene_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(intervene_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

impl From<intervene_service::ApiError> for CliError {
    fn from(e: intervene_service::ApiError) -> Self {
        match e {
            intervene_service::ApiError::BadRequest(m) | intervene_service::ApiError::UnknownModel(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "intervene", version, about = "Concept interventions on black-box classifiers")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Experiment config: a TOML file or a preset, then flag overrides.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config used when no file is given: desk, desk-incomplete or full.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Comma-separated run seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Comma-separated model families.
    #[arg(long, global = true, value_delimiter = ',')]
    families: Option<Vec<String>>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    j: Option<usize>,
    /// bottleneck or incomplete.
    #[arg(long, global = true)]
    mechanism: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// euclidean or cosine.
    #[arg(long, global = true)]
    distance: Option<String>,
    /// random_subset or uncertainty.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// linear or nonlinear.
    #[arg(long, global = true)]
    probe: Option<String>,
    #[arg(long, global = true)]
    cbm_alpha: Option<f64>,
    /// Comma-separated curve grid.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Maximum inner steps of the representation edit.
    #[arg(long, global = true)]
    max_steps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and store the dataset of every seed.
    GenData,
    /// Train black boxes, CBMs and post hoc CBMs.
    Train,
    /// Train concept probes on black-box activations.
    Probe,
    /// Fine-tune black boxes for intervenability.
    Finetune {
        /// intervenability, multitask, append or all.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Explain or intervene on one instance of a trained model.
    Intervene {
        /// Model id from the registry, e.g. s0-black_box.
        #[arg(long)]
        model: String,
        /// Row of the chosen split.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Raw covariates, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Concept edit `j=value`; repeatable. Without edits the model is only explained.
        #[arg(long = "edit")]
        edits: Vec<String>,
        /// Set this many concepts to the ground truth with the configured strategy.
        #[arg(long)]
        preset_k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        preset_seed: u64,
    },
    /// Train whatever is missing and compute tables and intervention curves.
    Curve,
    /// Run one ablation sweep.
    Ablate {
        /// lambda, strategy, probe, distance, valsize or cbm_mode.
        #[arg(long)]
        axis: String,
    },
    /// Write CSV and JSON reports from stored result bundles.
    Report {
        /// Bundle files; defaults to every bundle of the run.
        #[arg(long)]
        bundle: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API over the run's registry.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Run directory holding registry.json; defaults to the config's.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| CliError::Config(format!("unknown {what} `{s}`")))
}

impl ConfigArgs {
    fn build(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => match self.preset.as_str() {
                "desk" => ExperimentConfig::desk(),
                "desk-incomplete" | "desk_incomplete" => ExperimentConfig::desk_incomplete(),
                "full" => ExperimentConfig::full(),
                other => return Err(CliError::Config(format!("unknown preset `{other}`"))),
            },
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(f) = &self.families {
            cfg.families = f
                .iter()
                .map(|name| Family::parse(name).ok_or_else(|| CliError::Config(format!("unknown family `{name}`"))))
                .collect::<CliResult<_>>()?;
        }
        let d = &mut cfg.dataset;
        d.n = self.n.unwrap_or(d.n);
        d.p = self.p.unwrap_or(d.p);
        d.k = self.k.unwrap_or(d.k);
        d.j = self.j.unwrap_or(d.j);
        if let Some(m) = &self.mechanism {
            d.mechanism = parse_enum::<Mechanism>("mechanism", m)?;
        }
        if let Some(l) = self.lambda {
            cfg.intervention.lambda = l;
        }
        if let Some(s) = self.max_steps {
            cfg.intervention.max_steps = s;
        }
        if let Some(s) = &self.distance {
            cfg.intervention.distance = parse_enum::<DistanceKind>("distance", s)?;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = parse_enum::<StrategyKind>("strategy", s)?;
        }
        if let Some(s) = &self.probe {
            cfg.probe = parse_enum::<ProbeLinearity>("probe", s)?;
        }
        if let Some(a) = self.cbm_alpha {
            cfg.cbm_alpha = a;
        }
        if let Some(ks) = &self.ks {
            cfg.ks = Some(ks.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn for_each_seed(cfg: &ExperimentConfig, f: impl Fn(&SeedArtifacts<'_>) -> intervene_core::Result<()>) -> CliResult {
    for &seed in &cfg.seeds {
        let art = SeedArtifacts::open(cfg, seed)?;
        f(&art)?;
        log::info!("seed {seed} done");
    }
    write_registry_with(cfg, None)?;
    Ok(())
}

fn results_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run_dir().join("results")
}

fn store_and_report(cfg: &ExperimentConfig, name: &str, bundle: &ResultsBundle) -> CliResult {
    save_bundle(bundle, &results_dir(cfg).join(format!("{name}.json")))?;
    let out = cfg.run_dir().join("report").join(name);
    let files = emit_report(bundle, &out)?;
    println!("{}", files.summary.display());
    if bundle.is_partial() {
        for f in &bundle.failures {
            eprintln!("seed {} stage {} failed: {}", f.seed, f.stage, f.message);
        }
        return Err(CliError::Runtime(format!("{} stage(s) failed; report is partial", bundle.failures.len())));
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) -> CliResult {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(e.to_string())),
        _ => Ok(()),
    }
}

fn parse_edit(s: &str) -> CliResult<(usize, f64)> {
    let bad = || CliError::Config(format!("edit `{s}` is not `index=value`"));
    let (j, v) = s.split_once('=').ok_or_else(bad)?;
    Ok((j.trim().parse().map_err(|_| bad())?, v.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> CliResult {
    let cfg = cli.config.build()?;
    match cli.command {
        Command::GenData => for_each_seed(&cfg, |_| Ok(())),
        Command::Train => for_each_seed(&cfg, |art| {
            for &f in &cfg.families {
                match f {
                    Family::BlackBox => drop(art.black_box()?),
                    Family::FinetunedIntervenability | Family::FinetunedMultitask | Family::FinetunedAppend => {}
                    _ => drop(art.family(f)?),
                }
            }
            Ok(())
        }),
        Command::Probe => for_each_seed(&cfg, |art| art.probe(cfg.probe).map(drop)),
        Command::Finetune { method } => {
            let methods: Vec<Family> = match method.as_str() {
                "intervenability" => vec![Family::FinetunedIntervenability],
                "multitask" => vec![Family::FinetunedMultitask],
                "append" => vec![Family::FinetunedAppend],
                "all" => vec![Family::FinetunedIntervenability, Family::FinetunedMultitask, Family::FinetunedAppend],
                other => return Err(CliError::Config(format!("unknown fine-tuning method `{other}`"))),
            };
            for_each_seed(&cfg, |art| {
                for &f in &methods {
                    art.family(f)?;
                }
                Ok(())
            })
        }
        Command::Intervene {
            model,
            index,
            split,
            x,
            edits,
            preset_k,
            preset_seed,
        } => {
            let split: Split = parse_enum("split", &split)?;
            let mut state = AppState::load(&cfg.run_dir())?;
            state.defaults = cfg.intervention;
            if edits.is_empty() && preset_k.is_none() {
                return print_json(&intervene_service::explain(&state, &model, &ExplainRequest { index, split, x })?);
            }
            let req = InterveneRequest {
                index,
                split,
                x,
                concept_edits: edits.iter().map(|e| parse_edit(e)).collect::<CliResult<_>>()?,
                overrides: Overrides::default(),
                preset: preset_k.map(|k| Preset {
                    kind: cfg.strategy,
                    k,
                    seed: preset_seed,
                }),
            };
            print_json(&intervene_service::intervene_on(&state, &model, &req)?)
        }
        Command::Curve => {
            let bundle = run_pipeline(&cfg)?;
            store_and_report(&cfg, "pipeline", &bundle)
        }
        Command::Ablate { axis } => {
            let axis = AblationAxis::parse(&axis).ok_or_else(|| CliError::Config(format!("unknown ablation axis `{axis}`")))?;
            let bundle = run_ablation(&cfg, axis)?;
            store_and_report(&cfg, &format!("ablation_{}", axis.name()), &bundle)
        }
        Command::Report { bundle, out } => {
            let paths = if bundle.is_empty() { stored_bundles(&results_dir(&cfg))? } else { bundle };
            if paths.is_empty() {
                return Err(CliError::Config(format!("no result bundles under {}", results_dir(&cfg).display())));
            }
            for path in paths {
                let b = load_bundle(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let dir = out.clone().unwrap_or_else(|| cfg.run_dir().join("report")).join(stem);
                println!("{}", emit_report(&b, &dir)?.summary.display());
            }
            Ok(())
        }
        Command::Serve { addr, run_dir } => {
            let dir = run_dir.unwrap_or_else(|| cfg.run_dir());
            let mut state = AppState::load(&intervene_core::harness::find_run_dir(&dir)?)?;
            state.defaults = cfg.intervention;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(intervene_service::serve(state.shared(), addr))
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

fn stored_bundles(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(intervene_core::Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
