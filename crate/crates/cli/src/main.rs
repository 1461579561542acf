//! `groundvla`: benchmark generation, training, evaluation, theory checks and
//! report tables. Every command writes a `manifest.json` listing its inputs
//! and the digest of each output file.

mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use groundvla::cab_bench::{build_dataset, export_dataset, import_dataset, INSTRUCTIONS_FILE, SCENES_FILE, SPLIT_FILE};
use groundvla::digest::{file_digest, json_digest};
use groundvla::error::ErrorClass;
use groundvla::eval::{evaluate, risk_coverage_csv, EpisodeLog};
use groundvla::jsonl;
use groundvla::learn::{train, Checkpoint, TrainConfig};
use groundvla::selective::CalibrationTarget;
use groundvla::theory::{verify_theory, TheoryConfig, TheoryReport};
use serde_json::json;

use manifest::{input, now_unix, RunManifest};
use report::{CURVE_FILE, METRICS_FILE, THEORY_FILE};

pub const WORKERS_ENV: &str = "GROUNDVLA_WORKERS";
const EPISODE_SCHEMA: &str = "groundvla-episode/1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] groundvla::Error),
    #[error("{0}")]
    Usage(String),
    #[error("theory checks failed: {}", .0.join(", "))]
    TheoryFailed(Vec<String>),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.class() == ErrorClass::Numerical => 3,
            CliError::TheoryFailed(_) => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::TheoryFailed(_) => "theory_failed",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "groundvla", version, about = "Verified grounding pipeline: benchmark, training, evaluation, theory checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Target {
    /// Most clarification on ambiguous episodes within a 0.05 success-drop budget.
    ClarifyWithinBudget,
    /// Best macro average of Clar@Ambig and Unambig SR.
    MaxTotal,
    /// Largest coverage at 95% selective accuracy.
    CovAt95,
}

impl From<Target> for CalibrationTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::ClarifyWithinBudget => CalibrationTarget::ClarifyWithinBudget,
            Target::MaxTotal => CalibrationTarget::MaxTotal,
            Target::CovAt95 => CalibrationTarget::CovAt95,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Regenerate the ambiguity benchmark (scenes.jsonl, instructions.jsonl, split.json).
    GenBench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration; writes checkpoint.json and curve.csv.
    Train {
        /// Flat TOML file; unspecified keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-loop evaluation on the test split, threshold calibrated on val.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Target::ClarifyWithinBudget)]
        target: Target,
        /// Seed for retrieval candidate sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Contrastive bound, bottleneck audit, influence decomposition and robustness sweep.
    VerifyTheory {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write theory.json; the summary always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Comparison tables over eval and verify-theory output directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| groundvla::Error::io(dir, e).into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| groundvla::Error::io(path, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(groundvla::Error::from)?;
    write_file(path, bytes)
}

fn load_checkpoint_for(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, groundvla::cab_bench::CabDataset, String), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = import_dataset(data)?;
    let digest = ds.digest()?;
    ckpt.check_dataset(&digest)?;
    Ok((ckpt, ds, digest))
}

fn gen_bench(seed: u64, out: &Path) -> Result<(), CliError> {
    let started = now_unix();
    create_dir(out)?;
    let ds = build_dataset(seed)?;
    export_dataset(&ds, out)?;
    let config_hash = json_digest(&json!({ "grammar_version": ds.grammar_version, "seed": seed }))?;
    let m = RunManifest::new("gen-bench", config_hash, seed, Vec::new(), started).finish(out, &[SCENES_FILE, INSTRUCTIONS_FILE, SPLIT_FILE])?;
    println!("dataset {} written to {} ({})", ds.digest()?, out.display(), m.run_id);
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let started = now_unix();
    let mut cfg = TrainConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let ds = import_dataset(data)?;
    let digest = ds.digest()?;
    create_dir(out)?;
    let outcome = train(&cfg, &ds)?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    let mut curve = String::from("step,action_loss,gac_loss,total\n");
    for p in &outcome.curve {
        curve.push_str(&format!("{},{},{},{}\n", p.step, p.action_loss, p.gac_loss, p.total));
    }
    write_file(&out.join("curve.csv"), curve)?;
    write_json(&out.join("config.json"), &cfg)?;
    let inputs = vec![input("config", file_digest(config)?), input("dataset", digest)];
    let m = RunManifest::new("train", outcome.checkpoint.config_hash.clone(), cfg.seed, inputs, started)
        .finish(out, &["checkpoint.json", "curve.csv", "config.json"])?;
    let l = &outcome.checkpoint.final_losses;
    println!(
        "trained {} steps: action {:.5}, contrastive {:.5} ({})",
        cfg.steps, l.action_loss, l.gac_loss, m.run_id
    );
    Ok(())
}

fn metrics_text(r: &groundvla::eval::MetricsReport) -> String {
    let mut s = format!(
        "episodes        {}\nAUROC           {:.4}\nAUPR            {:.4}\nECE             {:.4}\nCov@95          {:.4}\nFPR@95          {:.4}\nClar@Ambig      {:.4}\nUnambig SR      {:.4}\nalways-act SR   {:.4}\nthreshold       {:.4}\n",
        r.episodes, r.auroc, r.aupr, r.ece, r.cov_at_95, r.fpr_at_95, r.clar_at_ambig, r.unambig_sr, r.always_act_unambig_sr, r.threshold
    );
    for (n, v) in &r.recall_at_1 {
        s.push_str(&format!("Recall@1 N={n:<3} {v:.4}\n"));
    }
    s
}

fn eval_cmd(checkpoint: &Path, data: &Path, out: &Path, target: Target, seed: u64) -> Result<(), CliError> {
    let started = now_unix();
    let (ckpt, ds, digest) = load_checkpoint_for(checkpoint, data)?;
    create_dir(out)?;
    let outcome = evaluate(&ckpt.model, &ds, target.into(), seed)?;
    write_json(&out.join(METRICS_FILE), &outcome.report)?;
    write_file(&out.join("metrics.txt"), metrics_text(&outcome.report))?;
    write_json(&out.join("policy.json"), &outcome.policy)?;
    write_file(&out.join(CURVE_FILE), risk_coverage_csv(&outcome.curve))?;
    jsonl::write::<EpisodeLog>(&out.join("episodes.jsonl"), EPISODE_SCHEMA, &outcome.test_logs)?;
    jsonl::write::<EpisodeLog>(&out.join("val_episodes.jsonl"), EPISODE_SCHEMA, &outcome.val_logs)?;
    let inputs = vec![input("checkpoint", file_digest(checkpoint)?), input("dataset", digest)];
    let m = RunManifest::new("eval", ckpt.config_hash.clone(), seed, inputs, started).finish(
        out,
        &[METRICS_FILE, "metrics.txt", "policy.json", CURVE_FILE, "episodes.jsonl", "val_episodes.jsonl"],
    )?;
    print!("{}", metrics_text(&outcome.report));
    println!("({})", m.run_id);
    Ok(())
}

fn theory_text(t: &TheoryReport) -> String {
    let mut s = String::new();
    for row in &t.bound.checks {
        s.push_str(&format!(
            "bound N={:<3}      lnN-E[L] {:.4} <= I {:.4} + {:.4}  {}\n",
            row.n,
            row.lower_bound,
            t.bound.mi_plugin,
            row.epsilon,
            if row.satisfied { "ok" } else { "VIOLATED" }
        ));
    }
    s.push_str(&format!(
        "corner cases     independent {} bijective {}\n",
        t.corner_cases.independent_ok, t.corner_cases.bijective_ok
    ));
    s.push_str(&format!(
        "bottleneck       {}/{} episodes identical, {} violations\n",
        t.bottleneck.identical_episodes,
        t.bottleneck.episodes,
        t.bottleneck.violations.len()
    ));
    s.push_str(&format!(
        "influence        Lambda {:.4}, I(L;a|C) {:.4} nats\n",
        t.influence.lambda_index, t.influence.mi_nats
    ));
    s.push_str(&format!("decomposition    residual {:.2e} ({})\n", t.decomposition.residual, t.decomposition.holds));
    s.push_str(&format!(
        "robustness       slope {:.4}, R2 {:.4}, zero magnitude identical {}\n",
        t.robustness.overall.slope, t.robustness.overall.r_squared, t.robustness.zero_magnitude_identical
    ));
    s
}

fn failed_checks(t: &TheoryReport) -> Vec<String> {
    let mut failed = Vec::new();
    if !t.bound_ok() {
        failed.push("bound".to_string());
    }
    if !t.bottleneck.passed {
        failed.push("bottleneck".to_string());
    }
    if !t.decomposition.holds {
        failed.push("decomposition".to_string());
    }
    if !(t.robustness.slope_finite && t.robustness.zero_magnitude_identical) {
        failed.push("robustness".to_string());
    }
    failed
}

fn verify_theory_cmd(checkpoint: &Path, data: &Path, out: Option<&Path>, seed: u64) -> Result<(), CliError> {
    let started = now_unix();
    let (ckpt, ds, digest) = load_checkpoint_for(checkpoint, data)?;
    let config = TheoryConfig {
        tau: ckpt.config.tau,
        seed,
        ..TheoryConfig::default()
    };
    let t = verify_theory(&ckpt.model, &ds, &config)?;
    let text = theory_text(&t);
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join(THEORY_FILE), &t)?;
        write_file(&out.join("theory.txt"), &text)?;
        let inputs = vec![input("checkpoint", file_digest(checkpoint)?), input("dataset", digest)];
        RunManifest::new("verify-theory", ckpt.config_hash.clone(), seed, inputs, started).finish(out, &[THEORY_FILE, "theory.txt"])?;
    }
    print!("{text}");
    let failed = failed_checks(&t);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::TheoryFailed(failed))
    }
}

fn report_cmd(runs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let rows = runs.iter().map(|d| report::load_row(d)).collect::<Result<Vec<_>, _>>()?;
    let rendered = report::render(&rows, runs)?;
    if let Some(out) = out {
        create_dir(out)?;
        for (name, body) in &rendered.files {
            write_file(&out.join(name), body)?;
        }
    }
    if let Some((_, text)) = rendered.files.iter().find(|(n, _)| *n == "report.txt") {
        print!("{text}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_workers()?;
    match cli.command {
        Command::GenBench { seed, out } => gen_bench(seed, &out),
        Command::Train { config, data, out, seed } => train_cmd(&config, &data, &out, seed),
        Command::Eval {
            checkpoint,
            data,
            out,
            target,
            seed,
        } => eval_cmd(&checkpoint, &data, &out, target, seed),
        Command::VerifyTheory { checkpoint, data, out, seed } => verify_theory_cmd(&checkpoint, &data, out.as_deref(), seed),
        Command::Report { runs, out } => report_cmd(&runs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let body = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
