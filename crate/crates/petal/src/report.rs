//! Method × metric comparison across run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use petal_core::metrics::MetricMeans;

use crate::harness::{RunFile, RUNS_DIR};

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub runs: usize,
    /// Per-segment error in arrival order, then mean error, NLL, Brier.
    pub cells: Vec<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Reads every `runs/<method>/seed-*.json` below each directory.
pub fn load_runs(dirs: &[PathBuf]) -> anyhow::Result<Vec<RunFile>> {
    if dirs.is_empty() {
        bail!("no run directories given");
    }
    let mut files = Vec::new();
    for dir in dirs {
        let root = dir.join(RUNS_DIR);
        let mut paths = Vec::new();
        for method in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
            let method = method?.path();
            if !method.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&method)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "json") {
                    paths.push(p);
                }
            }
        }
        paths.sort();
        for p in paths {
            files.push(read_run(&p)?);
        }
    }
    if files.is_empty() {
        bail!("no run reports found");
    }
    Ok(files)
}

fn read_run(path: &Path) -> anyhow::Result<RunFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn build_table(runs: &[RunFile]) -> anyhow::Result<ComparisonTable> {
    let first = runs.first().context("no runs")?;
    for r in runs {
        if r.schedule != first.schedule || r.batch_size != first.batch_size {
            bail!(
                "inconsistent schedules: {} seed {} has {:?}×{}, {} seed {} has {:?}×{}",
                first.method,
                first.seed,
                first.schedule,
                first.batch_size,
                r.method,
                r.seed,
                r.schedule,
                r.batch_size
            );
        }
    }
    let mut columns: Vec<String> = first.schedule.iter().map(|s| format!("err {s}")).collect();
    columns.extend(["mean err", "nll", "brier"].map(String::from));

    let mut grouped: BTreeMap<&str, Vec<&RunFile>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in runs {
        if !grouped.contains_key(r.method.as_str()) {
            order.push(r.method.as_str());
        }
        grouped.entry(&r.method).or_default().push(r);
    }
    let mut rows = Vec::new();
    for method in order {
        let group = &grouped[method];
        let mut cells = Vec::with_capacity(columns.len());
        for seg in 0..first.schedule.len() {
            let v: Vec<f64> = group
                .iter()
                .map(|r| r.segments.iter().find(|s| s.index == seg).map(|s| s.error).unwrap_or(f64::NAN))
                .collect();
            cells.push(Stat::of(&v));
        }
        let picks: [fn(&MetricMeans) -> f64; 3] = [|m| m.error, |m| m.nll, |m| m.brier];
        for pick in picks {
            let v: Vec<f64> = group.iter().map(|r| r.overall.as_ref().map(pick).unwrap_or(f64::NAN)).collect();
            cells.push(Stat::of(&v));
        }
        rows.push(ReportRow { method: method.to_string(), runs: group.len(), cells });
    }
    Ok(ComparisonTable { columns, rows })
}

impl ComparisonTable {
    /// Row index with the lowest mean in column `c`; the first wins ties.
    pub fn best_in_column(&self, c: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rows.iter().enumerate() {
            let v = r.cells[c].mean;
            if v.is_finite() && best.is_none_or(|b| v < self.rows[b].cells[c].mean) {
                best = Some(i);
            }
        }
        best
    }

    /// Aligned text; `*` marks the lowest mean of each column.
    pub fn to_text(&self) -> String {
        let best: Vec<Option<usize>> = (0..self.columns.len()).map(|c| self.best_in_column(c)).collect();
        let mut grid = vec![{
            let mut h = vec!["method".to_string(), "runs".to_string()];
            h.extend(self.columns.iter().cloned());
            h
        }];
        for (i, r) in self.rows.iter().enumerate() {
            let mut line = vec![r.method.clone(), r.runs.to_string()];
            for (c, s) in r.cells.iter().enumerate() {
                let mark = if best[c] == Some(i) { "*" } else { " " };
                line.push(format!("{:.3} ± {:.3}{mark}", s.mean, s.std));
            }
            grid.push(line);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &grid {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Long format: method, column, mean, std, best.
    pub fn write_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["method", "column", "runs", "mean", "std", "best"])?;
        for (c, col) in self.columns.iter().enumerate() {
            let best = self.best_in_column(c);
            for (i, r) in self.rows.iter().enumerate() {
                w.write_record([
                    r.method.as_str(),
                    col.as_str(),
                    &r.runs.to_string(),
                    &r.cells[c].mean.to_string(),
                    &r.cells[c].std.to_string(),
                    if best == Some(i) { "1" } else { "0" },
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
