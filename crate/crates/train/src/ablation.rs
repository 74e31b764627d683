//! Scripted ablation matrix: runs configuration variants over paired
//! seeds and tabulates final success rates with per-variant spreads and
//! paired deltas against the base variant.

use std::path::Path;

use anyhow::{bail, Result};

use crate::config::TrainConfig;
use crate::metrics::MetricsRow;
use crate::trainer::{run_training, Trainer};

#[derive(Clone, Debug)]
pub struct AblationSpec {
    pub name: String,
    pub base: TrainConfig,
    /// Dotted overrides applied on top of the base config.
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut value = toml::Value::try_from(self.base.clone())?;
        for ov in &self.overrides {
            crate::config::apply_override_value(&mut value, ov)?;
        }
        let cfg: TrainConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Keys that differ from the base config, for the manifest diff check.
    pub fn changed_keys(&self) -> Vec<String> {
        self.overrides
            .iter()
            .filter_map(|ov| ov.split_once('=').map(|(k, _)| k.to_string()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub name: String,
    /// Final success per seed (mean of the last three eval points).
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean success over the trailing eval rows; the "asymptotic" read-out.
pub fn final_success(metrics: &[MetricsRow]) -> f64 {
    let tail = metrics.len().min(3);
    if tail == 0 {
        return 0.0;
    }
    metrics[metrics.len() - tail..]
        .iter()
        .map(|r| r.eval_success)
        .sum::<f64>()
        / tail as f64
}

pub fn run_variant(
    spec: &AblationSpec,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<VariantResult> {
    let cfg = spec.resolve()?;
    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let run_dir = out_dir.map(|d| d.join(format!("{}-seed{}", spec.name, seed)));
        if let Some(dir) = &run_dir {
            crate::config::RunManifest::new(seed, cfg.clone()).write(dir)?;
        }
        let mut trainer = Trainer::new(cfg.clone(), seed)?;
        let outcome = run_training(&mut trainer, run_dir.as_deref(), None)?;
        let fs = final_success(&outcome.metrics);
        progress(&format!(
            "{} seed {seed}: final success {fs:.3} ({} steps, {:.0}s)",
            spec.name,
            trainer.counters.env_steps,
            outcome.wall_seconds
        ));
        per_seed.push(fs);
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let var = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / per_seed.len() as f64;
    Ok(VariantResult {
        name: spec.name.clone(),
        per_seed,
        mean,
        std: var.sqrt(),
    })
}

/// Runs every variant over the shared seeds and renders markdown + CSV
/// tables. The first variant is the comparison base.
pub fn run_ablation(
    specs: &[AblationSpec],
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<(Vec<VariantResult>, String, String)> {
    if specs.is_empty() {
        bail!("ablation needs at least one variant");
    }
    let seeds = &specs[0].seeds;
    for s in specs {
        if &s.seeds != seeds {
            bail!("ablation variants must share paired seeds");
        }
    }
    let mut results = Vec::with_capacity(specs.len());
    for spec in specs {
        results.push(run_variant(spec, out_dir, &mut progress)?);
    }
    let base = results[0].clone();
    let mut md = String::from("| variant | final success (mean ± std) | paired Δ vs base |\n|---|---|---|\n");
    let mut csv = String::from("variant,mean,std,delta_vs_base\n");
    for r in &results {
        let delta: f64 = r
            .per_seed
            .iter()
            .zip(&base.per_seed)
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / r.per_seed.len() as f64;
        md.push_str(&format!(
            "| {} | {:.3} ± {:.3} | {:+.3} |\n",
            r.name, r.mean, r.std, delta
        ));
        csv.push_str(&format!("{},{},{},{}\n", r.name, r.mean, r.std, delta));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.md"), &md)?;
        std::fs::write(dir.join("ablation.csv"), &csv)?;
    }
    Ok((results, md, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsRow;

    fn row(step: u64, s: f64) -> MetricsRow {
        MetricsRow {
            step,
            eval_success: s,
            mean_episode_return: 0.0,
            repr_loss: 0.0,
            gamma2: 1.0,
            ell: 1.0,
            sigma2: 0.1,
        }
    }

    #[test]
    fn final_success_averages_last_three() {
        let rows = vec![row(1, 0.0), row(2, 0.4), row(3, 0.6), row(4, 0.8)];
        assert!((final_success(&rows) - 0.6).abs() < 1e-12);
        assert_eq!(final_success(&[]), 0.0);
    }

    #[test]
    fn variants_resolve_and_report_changed_keys() {
        let spec = AblationSpec {
            name: "noise".into(),
            base: TrainConfig::default(),
            overrides: vec!["env.noise_sigma=0.15".into()],
            seeds: vec![0],
        };
        let cfg = spec.resolve().unwrap();
        assert_eq!(cfg.env.noise_sigma, 0.15);
        assert_eq!(spec.changed_keys(), vec!["env.noise_sigma".to_string()]);
        // everything else matches the base config
        let mut reverted = cfg;
        reverted.env.noise_sigma = spec.base.env.noise_sigma;
        assert_eq!(reverted, spec.base);
    }
}
