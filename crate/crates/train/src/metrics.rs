//! Append-only metrics CSV. One row per evaluation epoch; floats use
//! Rust's shortest round-trip formatting so files are bit-reproducible.
//! Wall-clock timing lives in `summary.json`, not here, to keep the CSV
//! deterministic across reruns.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::Result;

pub const METRICS_HEADER: &str = "step,eval_success,mean_episode_return,repr_loss,gamma2,ell,sigma2";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_success: f64,
    pub mean_episode_return: f64,
    pub repr_loss: f64,
    pub gamma2: f64,
    pub ell: f64,
    pub sigma2: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.eval_success,
            self.mean_episode_return,
            self.repr_loss,
            self.gamma2,
            self.ell,
            self.sigma2
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut it = line.split(',');
        Some(MetricsRow {
            step: it.next()?.parse().ok()?,
            eval_success: it.next()?.parse().ok()?,
            mean_episode_return: it.next()?.parse().ok()?,
            repr_loss: it.next()?.parse().ok()?,
            gamma2: it.next()?.parse().ok()?,
            ell: it.next()?.parse().ok()?,
            sigma2: it.next()?.parse().ok()?,
        })
    }
}

pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = File::create(path)?;
        writeln!(file, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { file })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv_line())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(MetricsRow::parse)
        .collect())
}
