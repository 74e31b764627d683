//! `hlps` — train, evaluate, verify and ablate the probabilistic-subgoal
//! hierarchical RL implementation.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
//! 3 tolerance or acceptance failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use hlps_core::statespace::Sigma0Variant;
use hlps_train::ablation::{run_ablation, AblationSpec};
use hlps_train::config::{RunManifest, TrainConfig};
use hlps_train::selftest;
use hlps_train::trainer::{run_training, transfer_init, Trainer};

#[derive(Parser)]
#[command(name = "hlps", version, about = "Hierarchical RL with probabilistic subgoal representations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted config overrides, e.g. --override env.noise_sigma=0.15
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for total_steps.
    #[arg(long)]
    steps: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(steps) = self.steps {
            overrides.push(format!("total_steps={steps}"));
        }
        match &self.config {
            Some(path) => TrainConfig::load(path, &overrides),
            None => TrainConfig::from_overrides(&overrides),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the two-level training loop and write metrics + checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fan out over a seed range (e.g. 0..5) on worker threads.
        #[arg(long)]
        seeds: Option<String>,
        /// Output root; defaults to $HLPS_OUT_DIR or ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: u32,
    },
    /// Exact-math verification: filter/batch equivalence, kernel
    /// properties, gradient checks.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 100)]
        grad_cases: usize,
        /// Initialize the belief with the paper-printed Σ₀ variant.
        #[arg(long, hide = true)]
        paper_sigma0: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Initialize from a source checkpoint and train on a target task.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump latent-space trajectories of a checkpoint as JSONL + SVG.
    Dump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scripted ablation axis over paired seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: baselines, noise, window.
        #[arg(long, default_value = "baselines")]
        axis: String,
        /// Comma list or range, e.g. 0,1,2 or 0..5.
        #[arg(long, default_value = "0..3")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("HLPS_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().context("seed range start")?;
        let hi: u64 = hi.trim().parse().context("seed range end")?;
        if hi <= lo {
            return Err(anyhow!("empty seed range `{spec}`"));
        }
        return Ok((lo..hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| anyhow!("seed `{s}`: {e}")))
        .collect()
}

fn train_one(cfg: TrainConfig, seed: u64, dir: &Path) -> Result<f64> {
    RunManifest::new(seed, cfg.clone()).write(dir)?;
    let mut trainer = Trainer::new(cfg, seed)?;
    let outcome = run_training(&mut trainer, Some(dir), None)?;
    let final_success = outcome.metrics.last().map(|r| r.eval_success).unwrap_or(0.0);
    println!(
        "seed {seed}: {} steps, final eval success {final_success:.3}, {:.1}s -> {}",
        trainer.counters.env_steps,
        outcome.wall_seconds,
        dir.display()
    );
    Ok(final_success)
}

fn cmd_train(config: ConfigArgs, seed: u64, seeds: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let cfg = config.resolve()?;
    let root = out_root(out);
    let seed_list = match seeds {
        Some(spec) => parse_seeds(&spec)?,
        None => vec![seed],
    };
    if seed_list.len() == 1 {
        let seed = seed_list[0];
        train_one(cfg, seed, &root.join(format!("run-seed{seed}")))?;
        return Ok(());
    }
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut finals = vec![0.0f64; seed_list.len()];
    let mut pending = seed_list.iter().copied().enumerate().collect::<Vec<_>>();
    while !pending.is_empty() {
        let wave: Vec<(usize, u64)> = pending.drain(..pending.len().min(workers)).collect();
        let handles: Vec<_> = wave
            .into_iter()
            .map(|(idx, seed)| {
                let cfg = cfg.clone();
                let dir = root.join(format!("run-seed{seed}"));
                std::thread::spawn(move || (idx, train_one(cfg, seed, &dir)))
            })
            .collect();
        for h in handles {
            let (idx, result) = h.join().map_err(|_| anyhow!("worker thread panicked"))?;
            finals[idx] = result?;
        }
    }
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // normal-approximation 95% interval over seeds
    let ci = 1.96 * (var / n).sqrt();
    println!("aggregate over {} seeds: final success {mean:.3} ± {ci:.3} (95% CI)", finals.len());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, episodes: u32) -> Result<()> {
    let trainer = Trainer::load_checkpoint(checkpoint)?;
    let (success, mean_return) = trainer.evaluate(episodes, u64::MAX >> 16)?;
    println!("{success}");
    println!("mean_episode_return {mean_return}");
    Ok(())
}

/// Returns false when a tolerance was breached.
fn cmd_selftest(cases: usize, grad_cases: usize, paper_sigma0: bool, seed: u64) -> Result<bool> {
    let variant = if paper_sigma0 {
        Sigma0Variant::PaperPrinted
    } else {
        Sigma0Variant::Derived
    };
    let eq = selftest::equivalence_suite(cases, variant, seed);
    println!(
        "equivalence[{variant:?}]: {} cases, max |filter - batch| = {:.3e}, {} cases over 1e-3 ({:.1}s)",
        eq.cases, eq.max_err, eq.cases_over_1e3, eq.seconds
    );
    let mut ok = true;
    if paper_sigma0 {
        // the demonstration: the printed initialization breaks the
        // exactness claim on most chains, so the suite reports the
        // tolerance breach and exits nonzero
        let broke = eq.cases_over_1e3 * 2 > eq.cases;
        println!(
            "paper-printed Σ₀ demonstration: {}/{} cases exceed 1e-3 -> {} (seed {seed})",
            eq.cases_over_1e3,
            eq.cases,
            if broke { "erratum confirmed, suite fails as expected" } else { "EQUIVALENCE UNEXPECTEDLY HELD" }
        );
        return Ok(!broke);
    }
    if !eq.passes_1e8() {
        println!("FAIL: equivalence max error {:.3e} >= 1e-8 (seed {seed})", eq.max_err);
        ok = false;
    }
    let kr = selftest::kernel_suite(cases, seed);
    println!(
        "kernel/posterior: {} cases, min eig(C+1e-8 I) = {:.3e}, N=1 shrinkage err = {:.3e}, var-bound violations = {} ({:.1}s)",
        kr.cases, kr.min_eigenvalue, kr.max_shrinkage_err, kr.var_bound_violations, kr.seconds
    );
    if !kr.passes() {
        println!("FAIL: kernel/posterior suite out of tolerance (seed {seed})");
        ok = false;
    }
    let gr = selftest::gradient_suite(grad_cases, seed);
    println!(
        "gradients: repr max rel err = {:.3e} (tol 1e-4), sac max rel err = {:.3e} (tol 1e-3) over {} cases each ({:.1}s)",
        gr.repr_max_rel_err, gr.sac_max_rel_err, gr.repr_cases, gr.seconds
    );
    if !gr.passes() {
        println!("FAIL: gradient suite out of tolerance (seed {seed})");
        ok = false;
    }
    Ok(ok)
}

fn cmd_transfer(source: &Path, config: ConfigArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let cfg = config.resolve()?;
    let root = out_root(out);
    let dir = root.join(format!("transfer-seed{seed}"));
    RunManifest::new(seed, cfg.clone()).write(&dir)?;
    let mut trainer = transfer_init(cfg, seed, source)?;
    let outcome = run_training(&mut trainer, Some(&dir), None)?;
    println!(
        "transfer seed {seed}: {} steps, final eval success {:.3} -> {}",
        trainer.counters.env_steps,
        outcome.metrics.last().map(|r| r.eval_success).unwrap_or(0.0),
        dir.display()
    );
    Ok(())
}

fn cmd_dump(checkpoint: &Path, episodes: u32, out: Option<PathBuf>) -> Result<()> {
    let trainer = Trainer::load_checkpoint(checkpoint)?;
    let root = out_root(out);
    let jsonl = root.join("latent.jsonl");
    let svg = root.join("latent.svg");
    let rows = trainer.dump_latent_trajectories(episodes, &jsonl, Some(&svg))?;
    println!("{rows} rows -> {} and {}", jsonl.display(), svg.display());
    Ok(())
}

fn cmd_ablate(config: ConfigArgs, axis: &str, seeds: &str, out: Option<PathBuf>) -> Result<bool> {
    let base = config.resolve()?;
    let seeds = parse_seeds(seeds)?;
    let spec = |name: &str, overrides: Vec<String>| AblationSpec {
        name: name.into(),
        base: base.clone(),
        overrides,
        seeds: seeds.clone(),
    };
    let specs = match axis {
        "baselines" => vec![
            spec("hlps", vec![]),
            spec("hlps-bl-b", vec!["loss_variant=\"hinge\"".into()]),
            spec("hlps-bl-a", vec!["repr_variant=\"random_projection\"".into()]),
        ],
        "noise" => {
            let mut v = Vec::new();
            for variant in ["hlps", "random_projection"] {
                for sigma in ["0.0", "0.1", "0.15"] {
                    v.push(spec(
                        &format!("{variant}-sigma{sigma}"),
                        vec![
                            format!("repr_variant=\"{variant}\""),
                            format!("env.noise_sigma={sigma}"),
                        ],
                    ));
                }
            }
            v
        }
        "window" => vec![
            spec("window-T1", vec!["window_segments=1".into()]),
            spec("window-T3", vec!["window_segments=3".into()]),
            spec("window-T5", vec!["window_segments=5".into()]),
        ],
        other => return Err(anyhow!("unknown ablation axis `{other}` (baselines|noise|window)")),
    };
    let root = out_root(out).join(format!("ablation-{axis}"));
    match run_ablation(&specs, Some(&root), |line| println!("{line}")) {
        Ok((_, md, _)) => {
            println!("{md}");
            Ok(true)
        }
        Err(e) => {
            eprintln!("ablation variant failed: {e:#}");
            Ok(false)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train { config, seed, seeds, out } => {
            cmd_train(config, seed, seeds, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval { checkpoint, episodes } => {
            cmd_eval(&checkpoint, episodes)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Selftest { cases, grad_cases, paper_sigma0, seed } => {
            let ok = cmd_selftest(cases, grad_cases, paper_sigma0, seed)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Cmd::Transfer { source, config, seed, out } => {
            cmd_transfer(&source, config, seed, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Dump { checkpoint, episodes, out } => {
            cmd_dump(&checkpoint, episodes, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Ablate { config, axis, seeds, out } => {
            let ok = cmd_ablate(config, &axis, &seeds, out)?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version paths are successes
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let text = format!("{e:#}");
            eprintln!("error: {text}");
            // configuration and file problems are usage errors
            let usage = text.contains("config") || text.contains("override") || text.contains("seed range");
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
