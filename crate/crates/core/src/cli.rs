//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 when validation finds violations or a command fails on
//! well-formed input, 2 on usage errors and malformed files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::consistency::{validate_clip, RuleTableConfig, TransitionRuleSet};
use crate::grpo::train_loop;
use crate::io::{read_jsonl, write_jsonl, write_jsonl_to, IoError};
use crate::metrics::{breakdown_table, build_report, confusion_matrices, Averaging, ReportMeta};
use crate::schema::{Clip, PredictionClip};
use crate::serve::{serve, Engine};
use crate::synth::{corrupt_with, generate_dataset, NoiseModel};

#[derive(Debug, Parser)]
#[command(name = "scenebench", version, about = "Road-scene benchmark scoring and reward engine")]
struct Cli {
    /// Shared TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Macro,
    Micro,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check ground-truth clips for structural and logical violations.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Precision/recall report for predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "model")]
        model: String,
        #[arg(long, value_enum, default_value = "macro")]
        averaging: AveragingArg,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also write the per-class breakdown.
        #[arg(long)]
        breakdown: Option<PathBuf>,
    },
    /// Reward breakdown for each prediction clip.
    Reward {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic ground-truth clips.
    Gen {
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Turn ground-truth clips into noisy predictions.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the configured noise with an occlusion burst of this length.
        #[arg(long)]
        burst: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the tabular policy with GRPO and write the eval trace.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        /// Train on these clips instead of a generated dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Answer protocol requests from stdin on stdout.
    Serve,
    /// Print the transition rule table as TOML.
    DumpRules,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Malformed(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Malformed(_) => 2,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Malformed { .. } => CliError::Malformed(e.to_string()),
            IoError::Open { .. } => CliError::Usage(e.to_string()),
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Malformed(m) | CliError::Failed(m)) = &e;
            eprintln!("error: {m}");
            e.code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(|e| CliError::Malformed(format!("{}: {e}", p.display()))),
        None => Ok(Config::default()),
    }
}

fn rules_of(cfg: &Config) -> Result<TransitionRuleSet, CliError> {
    cfg.rule_set().map_err(|e| CliError::Malformed(e.to_string()))
}

fn write_json_lines<T: Serialize>(out: Option<&Path>, items: &[T]) -> Result<(), CliError> {
    match out {
        Some(p) => Ok(write_jsonl(p, items)?),
        None => write_jsonl_to(BufWriter::new(io::stdout().lock()), items).map_err(failed),
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Validate { input } => {
            let rules = rules_of(&cfg)?;
            let clips: Vec<Clip> = read_jsonl(&input)?;
            let reports: Vec<_> = clips.iter().map(|c| validate_clip(c, &rules, &cfg.domain)).collect();
            write_json_lines(None, &reports)?;
            let bad = reports.iter().filter(|r| !r.pass).count();
            eprintln!("{} clips, {} with violations", reports.len(), bad);
            Ok(i32::from(bad > 0))
        }
        Command::Eval {
            pred,
            gt,
            model,
            averaging,
            json,
            breakdown,
        } => {
            let preds: Vec<PredictionClip> = read_jsonl(&pred)?;
            let gts: Vec<Clip> = read_jsonl(&gt)?;
            let runs = confusion_matrices(&preds, &gts, &cfg.domain).map_err(failed)?;
            let meta = ReportMeta {
                model,
                config_hash: cfg.hash(),
            };
            let averaging = match averaging {
                AveragingArg::Macro => Averaging::Macro,
                AveragingArg::Micro => Averaging::Micro,
            };
            let report = build_report(&runs, &meta, averaging).map_err(failed)?;
            print!("{}", report.to_table());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).map_err(failed)?;
                fs::write(&path, text + "\n").map_err(failed)?;
            }
            if let Some(path) = breakdown {
                fs::write(&path, breakdown_table(&runs)).map_err(failed)?;
            }
            Ok(0)
        }
        Command::Reward { pred, gt, out } => {
            let engine = Engine::new(cfg).map_err(|e| CliError::Malformed(e.to_string()))?;
            let preds: Vec<PredictionClip> = read_jsonl(&pred)?;
            let gts: Vec<Clip> = read_jsonl(&gt)?;
            let by_id: BTreeMap<&str, &Clip> = gts.iter().map(|g| (g.clip_id.as_str(), g)).collect();
            let mut breakdowns = Vec::with_capacity(preds.len());
            for p in &preds {
                let g = by_id
                    .get(p.clip_id.as_str())
                    .ok_or_else(|| failed(format!("no ground truth for clip '{}'", p.clip_id)))?;
                breakdowns.push(
                    engine
                        .reward(p, g)
                        .map_err(|e| failed(format!("clip '{}': {e}", p.clip_id)))?,
                );
            }
            write_json_lines(out.as_deref(), &breakdowns)?;
            Ok(0)
        }
        Command::Gen {
            count,
            frames,
            out,
            seed,
        } => {
            let rules = rules_of(&cfg)?;
            let mut params = cfg.generator.clone();
            if let Some(f) = frames {
                params.frames = f;
            }
            let clips = generate_dataset(count, &rules, &params, &cfg.domain, seed).map_err(failed)?;
            write_jsonl(&out, &clips)?;
            Ok(0)
        }
        Command::Corrupt {
            input,
            out,
            burst,
            seed,
        } => {
            let noise = match burst {
                Some(len) => NoiseModel::occlusion_burst(len),
                None => cfg.noise_model().map_err(|e| CliError::Malformed(e.to_string()))?,
            };
            noise.validate().map_err(CliError::Usage)?;
            let clips: Vec<Clip> = read_jsonl(&input)?;
            let mut seeds = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<PredictionClip> = clips
                .iter()
                .map(|c| corrupt_with(c, &noise, &cfg.domain, seeds.gen()))
                .collect();
            write_jsonl(&out, &preds)?;
            Ok(0)
        }
        Command::TrainToy {
            out,
            dataset,
            steps,
            seed,
        } => {
            let rules = rules_of(&cfg)?;
            let mut params = cfg.trainer.clone();
            if let Some(s) = steps {
                params.steps = s;
            }
            if let Some(s) = seed {
                params.seed = s;
            }
            params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let clips: Vec<Clip> = match dataset {
                Some(path) => read_jsonl(&path)?,
                None => generate_dataset(params.clips, &rules, &cfg.generator, &cfg.domain, params.seed)
                    .map_err(failed)?,
            };
            let (_, trace) = train_loop(&clips, &params, &cfg.reward, &rules, cfg.domain).map_err(failed)?;
            write_jsonl(&out, &trace.points)?;
            eprintln!(
                "eval reward {:.4} -> {:.4} over {} steps",
                trace.initial(),
                trace.last(),
                params.steps
            );
            Ok(0)
        }
        Command::Serve => {
            let engine = Engine::new(cfg).map_err(|e| CliError::Malformed(e.to_string()))?;
            serve(&engine, io::stdin().lock(), io::stdout().lock()).map_err(failed)?;
            Ok(0)
        }
        Command::DumpRules => {
            #[derive(Serialize)]
            struct RulesOnly {
                rules: RuleTableConfig,
            }
            let rules = rules_of(&cfg)?;
            let text = toml::to_string(&RulesOnly {
                rules: rules.to_config(),
            })
            .map_err(failed)?;
            io::stdout().write_all(text.as_bytes()).map_err(failed)?;
            Ok(0)
        }
    }
}
