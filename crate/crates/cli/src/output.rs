//! CSV and text artifacts. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sdr_core::SolveReport;

/// Totals for one solver over a campaign.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub solver: &'static str,
    pub problems: usize,
    pub converged: usize,
    pub matvecs: usize,
    pub inner_products: usize,
    pub sketches: usize,
    pub iterations: usize,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn new(solver: &'static str, problems: usize, seconds: f64) -> Self {
        Self {
            solver,
            problems,
            converged: 0,
            matvecs: 0,
            inner_products: 0,
            sketches: 0,
            iterations: 0,
            seconds,
        }
    }

    pub fn add(&mut self, r: &SolveReport) {
        self.converged += usize::from(r.converged());
        self.matvecs += r.counters.matvecs;
        self.inner_products += r.counters.inner_products;
        self.sketches += r.counters.sketches;
        self.iterations += r.iterations;
    }
}

pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["solver", "problems", "converged", "matvecs", "inner_products", "sketches", "iterations", "seconds"])?;
    for r in rows {
        w.write_record([
            r.solver.to_string(),
            r.problems.to_string(),
            r.converged.to_string(),
            r.matvecs.to_string(),
            r.inner_products.to_string(),
            r.sketches.to_string(),
            r.iterations.to_string(),
            float(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>9} {:>10} {:>12} {:>10} {:>10}",
        "solver", "problems", "converged", "MV", "IP", "iterations", "T [s]"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>9} {:>10} {:>12} {:>10} {:>10.2}",
            r.solver, r.problems, r.converged, r.matvecs, r.inner_products, r.iterations, r.seconds
        );
    }
    s
}

/// `iteration, sres, true_residual`; the last column is empty where no true
/// residual was computed.
pub fn write_convergence(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "sres", "true_residual"])?;
    let mut checks = report.true_residuals.iter().peekable();
    for (i, sres) in report.sres_history.iter().enumerate() {
        let it = i + 1;
        let mut truth = String::new();
        while let Some(c) = checks.next_if(|c| c.iteration <= it) {
            if c.iteration == it {
                truth = float(c.residual);
            }
        }
        w.write_record([it.to_string(), float(*sres), truth])?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration, basis_distortion, residual_distortion`; residual distortion
/// is filled at cycle ends only.
pub fn write_distortion(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "basis_distortion", "residual_distortion"])?;
    let mut ends = report.residual_distortion.iter().peekable();
    for (i, d) in report.basis_distortion.iter().enumerate() {
        let it = i + 1;
        let mut res = String::new();
        while let Some(&(_, r)) = ends.next_if(|(at, _)| *at <= it) {
            res = float(r);
        }
        w.write_record([it.to_string(), float(*d), res])?;
    }
    w.flush()?;
    Ok(())
}
