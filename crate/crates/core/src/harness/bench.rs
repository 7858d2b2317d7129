//! Norm-comparison sweep over (tolerance × norm mode × seed) cells.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::adjoint::NormMode;
use crate::solver::Tolerances;
use crate::stats::{serialize_stats, SolveStats, StatsFormat};

use super::config::ExperimentConfig;
use super::problem::Problem;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub tol_index: usize,
    pub tol: Tolerances,
    pub mode: NormMode,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!(
            "rtol{:e}_atol{:e}_{}_seed{}",
            self.tol.rtol, self.tol.atol, self.mode, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub forward_terminal: Vec<f64>,
    pub forward: SolveStats,
    pub backward: SolveStats,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<CellRun, String>,
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (tol_index, tol) in cfg.tolerance_pairs().into_iter().enumerate() {
        for &mode in &cfg.norm_modes {
            for &seed in &cfg.seeds {
                out.push(Cell {
                    tol_index,
                    tol,
                    mode,
                    seed,
                });
            }
        }
    }
    out
}

pub fn run_cell(cfg: &ExperimentConfig, cell: Cell) -> CellResult {
    let outcome = Problem::from_config(cfg, &cfg.field, cell.seed)
        .map_err(|e| e.to_string())
        .and_then(|p| p.gradient(cell.tol, cell.mode).map_err(|e| e.to_string()))
        .map(|eval| CellRun {
            forward_terminal: eval.forward.terminal().to_vec(),
            forward: eval.forward.stats,
            backward: eval.grad.stats,
            loss: eval.loss,
        })
        .and_then(|run| {
            if run.forward.replay_consistent() && run.backward.replay_consistent() {
                Ok(run)
            } else {
                Err("attempt log does not replay to the counters".to_string())
            }
        });
    CellResult { cell, outcome }
}

/// Runs every cell, on `parallel` threads when given. Results come back in cell order.
pub fn run_bench(
    cfg: &ExperimentConfig,
    parallel: Option<usize>,
) -> Result<Vec<CellResult>, HarnessError> {
    let cells = cells(cfg);
    let results = match parallel {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
            pool.install(|| cells.par_iter().map(|&c| run_cell(cfg, c)).collect())
        }
        _ => cells.iter().map(|&c| run_cell(cfg, c)).collect(),
    };
    Ok(results)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Aggregate over seeds for one (tolerance, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub tol_index: usize,
    pub tol: Tolerances,
    pub mode: NormMode,
    pub seeds: usize,
    pub failed: usize,
    pub fwd_nfe: (f64, f64),
    pub bwd_nfe: (f64, f64),
    pub bwd_nfe_median: f64,
    pub bwd_accepted_mean: f64,
    pub bwd_rejected_mean: f64,
    pub bwd_rejected_total: u64,
    pub proportion_rejected: f64,
    /// Mean backward-NFE reduction relative to the default norm, in percent.
    pub reduction_mean_pct: Option<f64>,
    pub reduction_median_pct: Option<f64>,
}

pub fn summarize(results: &[CellResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, NormMode), Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.cell.tol_index, r.cell.mode))
            .or_default()
            .push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((tol_index, mode), rs)| {
            let ok: Vec<&CellRun> = rs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let col = |f: &dyn Fn(&CellRun) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let bwd = col(&|r| r.backward.nfe as f64);
            let rejected: u64 = ok.iter().map(|r| r.backward.steps_rejected).sum();
            let accepted: u64 = ok.iter().map(|r| r.backward.steps_accepted).sum();
            SummaryRow {
                tol_index,
                tol: rs[0].cell.tol,
                mode,
                seeds: rs.len(),
                failed: rs.len() - ok.len(),
                fwd_nfe: mean_std(&col(&|r| r.forward.nfe as f64)),
                bwd_nfe: mean_std(&bwd),
                bwd_nfe_median: median(&bwd),
                bwd_accepted_mean: mean_std(&col(&|r| r.backward.steps_accepted as f64)).0,
                bwd_rejected_mean: mean_std(&col(&|r| r.backward.steps_rejected as f64)).0,
                bwd_rejected_total: rejected,
                proportion_rejected: if accepted + rejected == 0 {
                    0.0
                } else {
                    rejected as f64 / (accepted + rejected) as f64
                },
                reduction_mean_pct: None,
                reduction_median_pct: None,
            }
        })
        .collect();

    let baseline: BTreeMap<usize, (f64, f64)> = rows
        .iter()
        .filter(|r| r.mode == NormMode::Default)
        .map(|r| (r.tol_index, (r.bwd_nfe.0, r.bwd_nfe_median)))
        .collect();
    for r in rows.iter_mut().filter(|r| r.mode == NormMode::Seminorm) {
        if let Some(&(mean, med)) = baseline.get(&r.tol_index) {
            r.reduction_mean_pct = Some(100.0 * (1.0 - r.bwd_nfe.0 / mean));
            r.reduction_median_pct = Some(100.0 * (1.0 - r.bwd_nfe_median / med));
        }
    }
    rows
}

pub fn write_bench_outputs(
    cfg: &ExperimentConfig,
    results: &[CellResult],
    out: &Path,
) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut sorted: Vec<&CellResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.cell.tol_index, r.cell.mode, r.cell.seed));

    let mut cells_csv = csv::Writer::from_path(out.join("cells.csv"))?;
    cells_csv.write_record([
        "rtol",
        "atol",
        "mode",
        "seed",
        "status",
        "loss",
        "fwd_nfe",
        "fwd_accepted",
        "fwd_rejected",
        "bwd_nfe",
        "bwd_accepted",
        "bwd_rejected",
    ])?;
    for r in &sorted {
        let c = r.cell;
        let mut rec = vec![
            c.tol.rtol.to_string(),
            c.tol.atol.to_string(),
            c.mode.to_string(),
            c.seed.to_string(),
        ];
        match &r.outcome {
            Ok(run) => {
                rec.push("ok".into());
                rec.push(run.loss.to_string());
                for s in [&run.forward, &run.backward] {
                    rec.push(s.nfe.to_string());
                    rec.push(s.steps_accepted.to_string());
                    rec.push(s.steps_rejected.to_string());
                }
                std::fs::write(
                    out.join(format!("attempts_{}_fwd.csv", c.id())),
                    serialize_stats(&run.forward, StatsFormat::Csv),
                )?;
                std::fs::write(
                    out.join(format!("attempts_{}_bwd.csv", c.id())),
                    serialize_stats(&run.backward, StatsFormat::Csv),
                )?;
            }
            Err(msg) => {
                rec.push(format!("failed: {msg}"));
                rec.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        cells_csv.write_record(&rec)?;
    }
    cells_csv.flush()?;

    let rows = summarize(results);
    let with_reduction =
        cfg.norm_modes.contains(&NormMode::Default) && cfg.norm_modes.contains(&NormMode::Seminorm);
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    let mut header = vec![
        "rtol",
        "atol",
        "mode",
        "seeds",
        "failed",
        "fwd_nfe_mean",
        "fwd_nfe_std",
        "bwd_nfe_mean",
        "bwd_nfe_std",
        "bwd_nfe_median",
        "bwd_accepted_mean",
        "bwd_rejected_mean",
        "bwd_rejected_total",
        "proportion_rejected",
    ];
    if with_reduction {
        header.extend(["bwd_nfe_reduction_mean_pct", "bwd_nfe_reduction_median_pct"]);
    }
    w.write_record(&header)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_default();
    for r in &rows {
        let mut rec = vec![
            r.tol.rtol.to_string(),
            r.tol.atol.to_string(),
            r.mode.to_string(),
            r.seeds.to_string(),
            r.failed.to_string(),
            format!("{:.2}", r.fwd_nfe.0),
            format!("{:.2}", r.fwd_nfe.1),
            format!("{:.2}", r.bwd_nfe.0),
            format!("{:.2}", r.bwd_nfe.1),
            format!("{:.1}", r.bwd_nfe_median),
            format!("{:.2}", r.bwd_accepted_mean),
            format!("{:.2}", r.bwd_rejected_mean),
            r.bwd_rejected_total.to_string(),
            format!("{:.4}", r.proportion_rejected),
        ];
        if with_reduction {
            rec.push(opt(r.reduction_mean_pct));
            rec.push(opt(r.reduction_median_pct));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn cmd_bench(
    cfg: &ExperimentConfig,
    out: &Path,
    parallel: Option<usize>,
) -> Result<(), HarnessError> {
    let results = run_bench(cfg, parallel)?;
    let rows = write_bench_outputs(cfg, &results, out)?;
    for r in &rows {
        let red = r
            .reduction_median_pct
            .map(|v| format!(", median reduction {v:.1}%"))
            .unwrap_or_default();
        println!(
            "rtol {:e} atol {:e} {:>8}: fwd nfe {:.1}, bwd nfe {:.1} ± {:.1} (median {:.1}), rejected {}{}",
            r.tol.rtol, r.tol.atol, r.mode, r.fwd_nfe.0, r.bwd_nfe.0, r.bwd_nfe.1, r.bwd_nfe_median,
            r.bwd_rejected_total, red
        );
    }
    let failed: Vec<String> = results
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| format!("{}: {e}", r.cell.id()))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        for f in &failed {
            eprintln!("cell failed: {f}");
        }
        Err(HarnessError::Threshold(format!(
            "{} benchmark cell(s) failed",
            failed.len()
        )))
    }
}
