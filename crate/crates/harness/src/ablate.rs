//! Trains every model variant under the same data, seeds and budget and
//! tabulates test error rates.

use std::fmt::Write;

use ctcattn::Mode;
use log::info;

use crate::config::RunConfig;
use crate::error::Result;
use crate::run::{run_on, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    /// Test CER and WER per training seed, as fractions.
    pub cer: Vec<f64>,
    pub wer: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl AblationRow {
    pub fn mean_cer(&self) -> f64 {
        mean(&self.cer)
    }

    pub fn mean_wer(&self) -> f64 {
        mean(&self.wer)
    }
}

pub fn ablate(base: &RunConfig, task: &Task, modes: &[Mode], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut row = AblationRow {
            mode,
            cer: Vec::new(),
            wer: Vec::new(),
        };
        for &seed in seeds {
            let mut run = base.clone();
            run.apply_overrides(Some(seed), Some(mode), None);
            let res = run_on(&run, task)?;
            info!(
                "{mode} seed {seed}: test CER {:.2}%, WER {:.2}% (best dev epoch {})",
                100.0 * res.test.cer,
                100.0 * res.test.wer,
                res.report.best_epoch
            );
            row.cer.push(res.test.cer);
            row.wer.push(res.test.wer);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Percent WER reduction relative to `baseline`.
pub fn relative_improvement(baseline: f64, wer: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - wer) / baseline
    } else {
        0.0
    }
}

/// Plain-text table: CER, WER and, in parentheses, the relative WER
/// improvement over the vanilla row (or the first row without one).
pub fn format_table(rows: &[AblationRow]) -> String {
    let baseline = rows
        .iter()
        .find(|r| r.mode == Mode::Vanilla)
        .or(rows.first())
        .map_or(0.0, AblationRow::mean_wer);
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>9}", "Model", "CER%", "WER%", "(rel.)");
    for r in rows {
        let wer = r.mean_wer();
        let _ = writeln!(
            out,
            "{:<12} {:>8.2} {:>8.2}  ({:05.2})",
            r.mode.label(),
            100.0 * r.mean_cer(),
            100.0 * wer,
            relative_improvement(baseline, wer)
        );
    }
    out
}
