//! Monte-Carlo run sets and their aggregates.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use super::config::Steering;
use super::episode::{Experiment, RunRecord};
use super::io::write_metrics;
use crate::error::{Error, Result};
use crate::sensing::SensorConfig;

/// Mean metrics over runs at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub step: usize,
    pub mean_rrmse: f64,
    pub mean_ssim: f64,
    pub mean_total_variance: f64,
    pub runs: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOutcome {
    pub sensors: SensorConfig,
    pub steering: Steering,
    /// Successful runs, ascending run id.
    pub records: Vec<RunRecord>,
    /// Runs that returned an error, with the message.
    pub failures: Vec<(usize, String)>,
    pub summary: Vec<SummaryRow>,
}

/// Per-step means, summed in run-id order. Steps beyond the shortest
/// record are dropped.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let Some(len) = records.iter().map(|r| r.steps.len()).min() else {
        return Vec::new();
    };
    let n = records.len() as f64;
    (0..len)
        .map(|i| {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for r in records {
                a += r.steps[i].rrmse;
                b += r.steps[i].ssim;
                c += r.steps[i].total_variance;
            }
            SummaryRow {
                step: records[0].steps[i].step,
                mean_rrmse: a / n,
                mean_ssim: b / n,
                mean_total_variance: c / n,
                runs: records.len(),
            }
        })
        .collect()
}

/// Runs `runs` episodes in parallel. Failed runs are logged to stderr and
/// excluded.
pub fn run_montecarlo(
    exp: &Experiment,
    sensors: SensorConfig,
    steering: Steering,
    runs: Range<usize>,
) -> MonteCarloOutcome {
    let results: Vec<(usize, Result<RunRecord>)> = runs
        .into_par_iter()
        .map(|id| (id, exp.run_episode(sensors, steering, id)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                eprintln!("run {id} ({sensors}, {steering}) failed: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    let summary = summarize(&records);
    MonteCarloOutcome {
        sensors,
        steering,
        records,
        failures,
        summary,
    }
}

impl MonteCarloOutcome {
    /// Writes `metrics.csv`, `summary.csv` and `failures.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_metrics(&dir.join("metrics.csv"), &self.records)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["step", "mean_rrmse", "mean_ssim", "mean_total_variance", "runs"])?;
        for s in &self.summary {
            w.write_record([
                s.step.to_string(),
                s.mean_rrmse.to_string(),
                s.mean_ssim.to_string(),
                s.mean_total_variance.to_string(),
                s.runs.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("failures.csv"))?;
        w.write_record(["run_id", "error"])?;
        for (id, e) in &self.failures {
            w.write_record([id.to_string(), e.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Final-step metric per run, keyed by run id.
    pub fn final_values(&self, metric: impl Fn(&super::episode::StepRecord) -> f64) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.run_id, metric(r.last()))).collect()
    }
}

/// Paired one-sided sign test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs where the first sample is larger.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// Tests whether `a[i] > b[i]` more often than chance. Ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins + losses, wins),
    })
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // Terms C(n, i) 2⁻ⁿ built in log space to stay finite for large n.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_c + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

/// Pairs two outcomes by run id, keeping ids present in both.
pub fn paired(a: &[(usize, f64)], b: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, va) in a {
        if let Some((_, vb)) = b.iter().find(|(j, _)| j == id) {
            x.push(*va);
            y.push(*vb);
        }
    }
    (x, y)
}
