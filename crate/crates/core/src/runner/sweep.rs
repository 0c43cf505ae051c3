use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::experiment::{run_scripted, RunOutcome};
use crate::metrics::{MetricsRecord, RunSummary};
use crate::priorities::PriorityKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Humans,
    TTeleop,
    TReset,
    Priority,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" | "M" | "humans" => Ok(SweepAxis::Humans),
            "t_t" | "t_T" | "t_teleop" => Ok(SweepAxis::TTeleop),
            "t_r" | "t_R" | "t_reset" => Ok(SweepAxis::TReset),
            "priority" => Ok(SweepAxis::Priority),
            _ => Err(Error::config(format!("unknown sweep axis {s:?} (expected M, t_T, t_R or priority)"))),
        }
    }
}

impl SweepAxis {
    /// Returns `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let int = |v: &str| v.parse::<u32>().map_err(|_| Error::config(format!("bad sweep value {v:?}")));
        let mut cfg = base.clone();
        match self {
            SweepAxis::Humans => cfg.num_humans = int(value)? as usize,
            SweepAxis::TTeleop => cfg.t_teleop = int(value)?,
            SweepAxis::TReset => cfg.t_reset = int(value)?,
            SweepAxis::Priority => cfg.priority = value.parse::<PriorityKind>()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Final metrics of one (value, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub last: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub summary: Vec<SweepRow>,
}

impl SweepResult {
    /// Final records for `value`, in seed order.
    pub fn finals(&self, value: &str) -> Vec<MetricsRecord> {
        self.runs.iter().filter(|r| r.value == value).map(|r| r.last).collect()
    }

    /// Text table of mean ± std per value.
    pub fn table(&self, axis: SweepAxis) -> String {
        let mut out = format!(
            "{:<12} {:>20} {:>20} {:>20} {:>20} {:>18}\n",
            format!("{axis:?}"),
            "successes",
            "hard_resets",
            "idle_time",
            "human_steps",
            "rohe"
        );
        for row in &self.summary {
            let s = &row.summary;
            out.push_str(&format!(
                "{:<12} {:>20} {:>20} {:>20} {:>20} {:>18}\n",
                row.value,
                s.successes.to_string(),
                s.hard_resets.to_string(),
                s.idle_time.to_string(),
                s.human_steps.to_string(),
                s.rohe.to_string()
            ));
        }
        out
    }
}

/// One run per value per seed of `base.seeds`. With an output directory each
/// run writes its artifacts to `<dir>/<axis>-<value>/seed-<seed>`.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<SweepResult> {
    run_sweep_with(base, axis, values, |cfg, seed| run_scripted(cfg, seed))
}

pub fn run_sweep_with<F>(base: &RunConfig, axis: SweepAxis, values: &[String], mut run: F) -> Result<SweepResult>
where
    F: FnMut(&RunConfig, u64) -> Result<RunOutcome>,
{
    let mut result = SweepResult::default();
    for value in values {
        let cfg = axis.apply(base, value)?;
        let mut finals = Vec::new();
        for &seed in &base.seeds {
            let out = run(&cfg, seed)?;
            if let Some(dir) = &base.output_dir {
                let sub = dir.join(format!("{axis:?}-{value}").to_lowercase()).join(format!("seed-{seed}"));
                out.write_artifacts(&sub, &cfg)?;
            }
            let last = out.final_metrics();
            finals.push(last);
            result.runs.push(SweepRun { value: value.clone(), seed, last });
        }
        result.summary.push(SweepRow { value: value.clone(), summary: RunSummary::from_finals(&finals) });
    }
    if let Some(dir) = &base.output_dir {
        write_summary(&dir.join("sweep_summary.csv"), &result)?;
    }
    Ok(result)
}

fn write_summary(path: &Path, result: &SweepResult) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["value", "seed", "cum_successes", "cum_hard_resets", "cum_idle_time", "cum_human_steps", "rohe"])?;
    for r in &result.runs {
        w.write_record([
            r.value.clone(),
            r.seed.to_string(),
            r.last.cum_successes.to_string(),
            r.last.cum_hard_resets.to_string(),
            r.last.cum_idle_time.to_string(),
            r.last.cum_human_steps.to_string(),
            r.last.rohe.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
