use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hfrisk::density::DensityEncoding;
use hfrisk::encoders::FeatureSet;
use hfrisk::pipeline::{replay, run_all, run_stage, ModelKind, PipelineConfig, RunManifest, Stage, Workspace, MANIFEST_FILE};
use hfrisk::{Error, Result};

const CONFIG_HELP: &str = "\
CONFIGURATION
  --config takes a JSON object. Every key is optional; unknown keys are
  rejected. `hfrisk config` prints the full default configuration.

  seed               u64    split, initialisation, batching, explanations
  generator          object synthetic cohort:
    n_patients, case_fraction, signal_mode (BAG|TIMING|SYNONYM|NONE),
    n_synonym_codes, max_code_patients, frequency_threshold,
    synonym_location (DIAGNOSES|MEDICATIONS), synonym_token,
    carrier_rate_case, carrier_rate_noncase, min_visits, max_visits, seed,
    demographic_mix, universe
  gap_days           i64    days of history withheld before the index date
  min_patients       usize  grouped codes need this many training patients
  features           string main feature set: diag, diag_demo, diag_med,
                            med, med_demo, demo, all
  study_features     [string] feature sets of the combination study
  models             [string] logistic, svm, stumps, tlstm, transformer
  precision          f32|f64  floating point type of the deep models
  subword            {vocab_size, max_len}
  density_top_k      usize
  onehot             {folds, logistic_grid, svm_grid, stumps_grid, train}
  tlstm              {hidden, fc, train}
  transformer        {d_model, n_layers, n_heads, d_ff, train}
  explain            {n_patients, lime: {n_samples, kernel_width, alpha, unit, seed}}
  train blocks       {optimizer, learning_rate, max_epochs, patience,
                      batch_size, seed, threshold, class_weight, grad_clip,
                      tune_threshold, bucket_by_length}

  --seed overrides both `seed` and `generator.seed`. Every stage checks its
  configuration against the run manifest in --out.

EXIT CODES
  0 success, 2 configuration or usage error, 3 data error or missing artifact";

#[derive(Parser)]
#[command(name = "hfrisk", version, about = "Heart-failure risk prediction experiments on synthetic EHR cohorts", after_help = CONFIG_HELP)]
struct Cli {
    /// JSON configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory holding the stage artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seeds
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FeatureArg {
    /// Feature set (defaults to the configured `features`)
    #[arg(long, value_parser = parse_features)]
    features: Option<FeatureSet>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    #[command(flatten)]
    features: FeatureArg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its terminology tables
    Synth,
    /// Label cases and controls, apply exclusions, split 60/20/20
    Label,
    /// One-hot, sequence and narrative encodings
    Encode(FeatureArg),
    /// Build the subword vocabulary from training narratives
    Vocab(FeatureArg),
    /// Feature density profile for one encoding
    Density {
        #[arg(long, value_parser = parse_encoding)]
        encoding: DensityEncoding,
        /// Number of top features (defaults to `density_top_k`)
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Fit a model and write its checkpoint
    Train(ModelArgs),
    /// Score validation and test patients and write metrics
    Evaluate(ModelArgs),
    /// Test metrics per cancer subgroup
    Subgroup(ModelArgs),
    /// Local surrogate explanations of transformer predictions
    Explain(FeatureArg),
    /// Collate metric CSVs into result tables
    Report,
    /// Every stage in order
    Run,
    /// Re-execute a recorded run into --out and compare artifact hashes
    Replay {
        /// Run manifest to replay
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the effective configuration as JSON
    Config,
}

fn parse_features(s: &str) -> std::result::Result<FeatureSet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_encoding(s: &str) -> std::result::Result<DensityEncoding, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let ws = Workspace::new(&cli.out);
    let feat = |f: FeatureArg| f.features.unwrap_or(cfg.features);
    let stage = match cli.command {
        Command::Config => {
            println!("{}", cfg.to_json());
            return Ok(());
        }
        Command::Run => {
            let table = run_all(&ws, &cfg)?;
            println!("{}", table.to_text());
            println!("report written to {}", ws.path("report.txt").display());
            return Ok(());
        }
        Command::Replay { manifest } => {
            let m = RunManifest::from_path(&manifest)?;
            let r = replay(&m, &ws)?;
            for (path, want, got) in &r.mismatched {
                eprintln!("mismatch {path}: recorded {want}, replayed {got}");
            }
            println!("{} artifacts identical, {} differ", r.matched.len(), r.mismatched.len());
            if !r.is_exact() {
                return Err(Error::Data("replay did not reproduce the recorded artifacts".into()));
            }
            return Ok(());
        }
        Command::Synth => Stage::Synth,
        Command::Label => Stage::Label,
        Command::Encode(f) => Stage::Encode { features: feat(f) },
        Command::Vocab(f) => Stage::Vocab { features: feat(f) },
        Command::Density { encoding, top_k } => Stage::Density {
            encoding,
            top_k: top_k.unwrap_or(cfg.density_top_k),
        },
        Command::Train(a) => Stage::Train {
            model: a.model,
            features: feat(a.features),
        },
        Command::Evaluate(a) => Stage::Evaluate {
            model: a.model,
            features: feat(a.features),
        },
        Command::Subgroup(a) => Stage::Subgroup {
            model: a.model,
            features: feat(a.features),
        },
        Command::Explain(f) => Stage::Explain { features: feat(f) },
        Command::Report => Stage::Report,
    };
    let rec = run_stage(&ws, &cfg, &stage)?;
    for path in rec.outputs.keys() {
        println!("{}", ws.path(path).display());
    }
    if matches!(stage, Stage::Report) {
        print!("{}", ws.read_text("report.txt")?);
    }
    log::info!("manifest updated: {}", ws.path(MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
