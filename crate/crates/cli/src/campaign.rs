//! Campaign specification, solver runs and artifact layout.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use sdr_core::{
    solve_gmres_baseline, Counters, GmresSdr, LinearOperator, ProblemInstance, ProblemSequence, RecycleSpace,
    SolveReport, SolverConfig, Variant,
};

use crate::output::{self, MetricsRow};
use crate::problems;

#[derive(Debug, Clone, PartialEq)]
pub enum RhsSpec {
    Ones,
    Random,
    File(PathBuf),
}

impl RhsSpec {
    pub fn parse(s: &str) -> Self {
        match s {
            "ones" => RhsSpec::Ones,
            "random" => RhsSpec::Random,
            path => RhsSpec::File(PathBuf::from(path)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Neumann {
        systems: usize,
        grid: usize,
        shift: f64,
    },
    Convdiff {
        n: usize,
        alphas: Vec<f64>,
    },
    MtxFile {
        matrix: PathBuf,
        rhs: RhsSpec,
    },
    DistortionTrace {
        matrix: Option<PathBuf>,
        grid: usize,
        shift: f64,
        rhs: RhsSpec,
    },
}

impl Experiment {
    fn id(&self) -> &'static str {
        match self {
            Experiment::Neumann { .. } => "neumann",
            Experiment::Convdiff { .. } => "convdiff",
            Experiment::MtxFile { .. } => "mtx-file",
            Experiment::DistortionTrace { .. } => "distortion-trace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// GMRES-SDR.
    Sdr,
    /// Classical restarted GMRES(m).
    Gmres,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sdr => "gmres-sdr",
            SolverKind::Gmres => "gmres",
        }
    }
}

/// Everything a campaign needs; unset options take per-experiment defaults.
#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub experiment: Experiment,
    pub m: Option<usize>,
    pub t: usize,
    pub k: Option<usize>,
    pub s: Option<usize>,
    pub identity_sketch: bool,
    pub tol: Option<f64>,
    pub safety: f64,
    pub variant: Variant,
    pub seed: u64,
    pub restarts: usize,
    pub solvers: Option<Vec<SolverKind>>,
    pub out: PathBuf,
    pub load_recycle: Option<PathBuf>,
    pub save_recycle: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CampaignError {
    /// Invalid specification, unreadable input or unwritable output.
    Spec(anyhow::Error),
    /// A solver errored or failed to converge.
    Solver(anyhow::Error),
}

type CampaignResult<T> = Result<T, CampaignError>;

trait SpecContext<T> {
    fn spec(self) -> CampaignResult<T>;
}

impl<T, E: Into<anyhow::Error>> SpecContext<T> for Result<T, E> {
    fn spec(self) -> CampaignResult<T> {
        self.map_err(|e| CampaignError::Spec(e.into()))
    }
}

/// One problem's outcome for a given solver.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemRecord {
    pub solver: &'static str,
    pub index: usize,
    pub label: String,
    pub status: String,
    pub iterations: usize,
    pub cycles: usize,
    pub final_relative_residual: f64,
    pub counters: Counters,
    pub convergence_csv: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'static str,
    version: &'static str,
    arguments: Vec<String>,
    seed: u64,
    dimension: usize,
    sketch: String,
    config: &'a SolverConfig,
    solvers: Vec<&'static str>,
    metrics: &'a [MetricsRow],
    problems: &'a [ProblemRecord],
    /// Cost of re-sketching a loaded recycle space, outside the metrics.
    recycle_load: Option<Counters>,
    artifacts: Vec<String>,
}

struct Defaults {
    m: usize,
    k: usize,
    tol: f64,
    s: Option<usize>,
    solvers: Vec<SolverKind>,
}

fn defaults(exp: &Experiment) -> Defaults {
    match exp {
        Experiment::Neumann { .. } => Defaults {
            m: 100,
            k: 20,
            tol: 1e-6,
            s: None,
            solvers: vec![SolverKind::Sdr, SolverKind::Gmres],
        },
        Experiment::Convdiff { .. } => Defaults {
            m: 80,
            k: 20,
            tol: 1e-2,
            s: None,
            solvers: vec![SolverKind::Sdr],
        },
        Experiment::MtxFile { .. } => Defaults {
            m: 100,
            k: 20,
            tol: 1e-6,
            s: None,
            solvers: vec![SolverKind::Sdr],
        },
        Experiment::DistortionTrace { .. } => Defaults {
            m: 100,
            k: 20,
            tol: 1e-6,
            s: Some(500),
            solvers: vec![SolverKind::Sdr],
        },
    }
}

/// Fills unset options for a problem of dimension `n`. Small problems get
/// `m` and `k` clipped and fall back to the identity sketch when the default
/// sketch dimension would not be smaller than `n`.
fn resolve_config(spec: &CampaignSpec, n: usize) -> SolverConfig {
    let d = defaults(&spec.experiment);
    let m = spec.m.unwrap_or_else(|| d.m.min((n / 2).max(1)));
    let k = spec.k.unwrap_or_else(|| d.k.min(m / 5));
    let s = spec.s.or(d.s).unwrap_or(10 * (m + k));
    let identity_sketch = spec.identity_sketch || (spec.s.is_none() && s >= n);
    SolverConfig {
        m,
        t: spec.t,
        k,
        s,
        tol: spec.tol.unwrap_or(d.tol),
        safety_init: spec.safety,
        max_restarts: spec.restarts,
        seed: spec.seed,
        variant: spec.variant,
        identity_sketch,
        trace_distortion: matches!(spec.experiment, Experiment::DistortionTrace { .. }),
        ..SolverConfig::default()
    }
}

fn build_problems(spec: &CampaignSpec, tol: f64) -> anyhow::Result<Vec<ProblemInstance>> {
    match &spec.experiment {
        Experiment::Neumann { systems, grid, shift } => {
            if *systems == 0 {
                return Err(anyhow!("--systems must be positive"));
            }
            problems::neumann(*grid, *shift, *systems, tol, spec.seed)
        }
        Experiment::Convdiff { n, alphas } => {
            if alphas.is_empty() {
                return Err(anyhow!("--alphas must list at least one value"));
            }
            problems::convdiff(*n, alphas, tol)
        }
        Experiment::MtxFile { matrix, rhs } => {
            let a = Arc::new(problems::read_matrix(matrix)?);
            let b = problems::rhs(rhs, a.nrows(), spec.seed)?;
            let label = matrix.file_stem().map_or("matrix".into(), |s| s.to_string_lossy().into_owned());
            Ok(vec![ProblemInstance::new(a, b, label, tol)?])
        }
        Experiment::DistortionTrace {
            matrix,
            grid,
            shift,
            rhs,
        } => {
            let (a, label) = match matrix {
                Some(p) => (problems::read_matrix(p)?, "trace".to_string()),
                None => (sdr_core::linop::gen_neumann(*grid, *shift)?, format!("neumann-g{grid}")),
            };
            let a = Arc::new(a);
            let b = problems::rhs(rhs, a.nrows(), spec.seed)?;
            Ok(vec![ProblemInstance::new(a, b, label, tol)?])
        }
    }
}

/// Problem dimension without building the full problem set.
fn peek_dimension(spec: &CampaignSpec) -> anyhow::Result<usize> {
    Ok(match &spec.experiment {
        Experiment::Neumann { grid, .. } => grid * grid,
        Experiment::Convdiff { n, .. } => n * n,
        Experiment::MtxFile { matrix, .. } => problems::read_matrix(matrix)?.nrows(),
        Experiment::DistortionTrace { matrix, grid, .. } => match matrix {
            Some(p) => problems::read_matrix(p)?.nrows(),
            None => grid * grid,
        },
    })
}

fn load_recycle(path: &Path, n: usize, s: usize) -> anyhow::Result<RecycleSpace> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let space = RecycleSpace::read_from(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if space.u.nrows() != n || space.su.nrows() != s {
        return Err(anyhow!(
            "{} holds a {}x{} recycle space with sketch size {}, expected N = {n}, s = {s}",
            path.display(),
            space.u.nrows(),
            space.k(),
            space.su.nrows()
        ));
    }
    Ok(space)
}

fn record(solver: SolverKind, index: usize, label: &str, report: Option<&SolveReport>, err: Option<String>) -> ProblemRecord {
    match report {
        Some(r) => ProblemRecord {
            solver: solver.name(),
            index,
            label: label.to_string(),
            status: format!("{:?}", r.status).to_lowercase(),
            iterations: r.iterations,
            cycles: r.cycles,
            final_relative_residual: r.final_relative_residual,
            counters: r.counters,
            convergence_csv: None,
            error: None,
        },
        None => ProblemRecord {
            solver: solver.name(),
            index,
            label: label.to_string(),
            status: "error".into(),
            iterations: 0,
            cycles: 0,
            final_relative_residual: f64::NAN,
            counters: Counters::default(),
            convergence_csv: None,
            error: err,
        },
    }
}

/// Runs the campaign and writes its artifacts. Returns the aligned metrics
/// table on success; solver failures are reported after all artifacts exist.
pub fn run(spec: &CampaignSpec) -> CampaignResult<String> {
    let n = peek_dimension(spec).spec()?;
    let cfg = resolve_config(spec, n);
    cfg.validate(n).spec()?;
    let problems = build_problems(spec, cfg.tol).spec()?;
    let solvers = spec.solvers.clone().unwrap_or_else(|| defaults(&spec.experiment).solvers);
    if solvers.is_empty() {
        return Err(CampaignError::Spec(anyhow!("no solver selected")));
    }
    let initial_space = match &spec.load_recycle {
        Some(p) => Some(load_recycle(p, n, if cfg.identity_sketch { n } else { cfg.s }).spec()?),
        None => None,
    };
    std::fs::create_dir_all(spec.out.join("convergence"))
        .with_context(|| format!("creating {}", spec.out.display()))
        .spec()?;

    let mut metrics = Vec::new();
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    let mut failures = Vec::new();
    let mut recycle_load = None;

    for &solver in &solvers {
        let start = Instant::now();
        let outcomes: Vec<Result<SolveReport, String>> = match solver {
            SolverKind::Sdr => {
                let mut sdr = GmresSdr::new(n, cfg.clone()).spec()?;
                if let Some(space) = initial_space.clone() {
                    // the stored sketches may come from another seed or matrix
                    let mut c = Counters::default();
                    let space = RecycleSpace::from_basis(space.u, problems[0].matrix.as_ref(), sdr.sketch(), &mut c);
                    sdr.set_recycle_space(space).spec()?;
                    recycle_load = Some(c);
                }
                let seq = ProblemSequence::new(problems.clone()).spec()?;
                let out = sdr
                    .solve_sequence(&seq)
                    .into_iter()
                    .map(|r| r.map(|o| o.report).map_err(|e| e.to_string()))
                    .collect();
                if let Some(path) = &spec.save_recycle {
                    let f = File::create(path)
                        .with_context(|| format!("creating {}", path.display()))
                        .spec()?;
                    sdr.recycle_space()
                        .write_to(&mut BufWriter::new(f))
                        .with_context(|| format!("writing {}", path.display()))
                        .spec()?;
                    artifacts.push(path.display().to_string());
                }
                out
            }
            SolverKind::Gmres => problems
                .iter()
                .map(|p| {
                    solve_gmres_baseline(p.matrix.as_ref(), &p.rhs, None, cfg.m, cfg.tol, cfg.max_restarts)
                        .map(|(_, mut r)| {
                            r.label = p.label.clone();
                            r
                        })
                        .map_err(|e| e.to_string())
                })
                .collect(),
        };
        let seconds = start.elapsed().as_secs_f64();

        let mut row = MetricsRow::new(solver.name(), problems.len(), seconds);
        for (i, (outcome, problem)) in outcomes.iter().zip(&problems).enumerate() {
            let mut rec = record(solver, i, &problem.label, outcome.as_ref().ok(), outcome.clone().err());
            match outcome {
                Ok(report) => {
                    row.add(report);
                    let rel = format!("convergence/{}-{i:03}.csv", solver.name());
                    output::write_convergence(&spec.out.join(&rel), report).spec()?;
                    rec.convergence_csv = Some(rel.clone());
                    artifacts.push(rel);
                    if solver == SolverKind::Sdr && !report.converged() {
                        failures.push(format!("{} ended with status {}", problem.label, rec.status));
                    }
                }
                Err(e) => {
                    if solver == SolverKind::Sdr {
                        failures.push(format!("{}: {e}", problem.label));
                    }
                }
            }
            if cfg.trace_distortion {
                if let Ok(report) = outcome {
                    let rel = format!("distortion-{i:03}.csv");
                    output::write_distortion(&spec.out.join(&rel), report).spec()?;
                    artifacts.push(rel);
                }
            }
            records.push(rec);
        }
        metrics.push(row);
    }

    output::write_metrics_csv(&spec.out.join("metrics.csv"), &metrics).spec()?;
    let table = output::metrics_table(&metrics);
    std::fs::write(spec.out.join("metrics.txt"), &table)
        .context("writing metrics.txt")
        .spec()?;
    artifacts.splice(0..0, ["metrics.csv".to_string(), "metrics.txt".to_string()]);

    let manifest = Manifest {
        experiment: spec.experiment.id(),
        version: env!("CARGO_PKG_VERSION"),
        arguments: std::env::args().collect(),
        seed: spec.seed,
        dimension: n,
        sketch: if cfg.identity_sketch {
            "identity".into()
        } else {
            format!("subsampled-dct s={}", cfg.s)
        },
        config: &cfg,
        solvers: solvers.iter().map(|s| s.name()).collect(),
        metrics: &metrics,
        problems: &records,
        recycle_load,
        artifacts,
    };
    let f = File::create(spec.out.join("manifest.json"))
        .context("creating manifest.json")
        .spec()?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)
        .context("writing manifest.json")
        .spec()?;

    if failures.is_empty() {
        Ok(table)
    } else {
        eprint!("{table}");
        Err(CampaignError::Solver(anyhow!(failures.join("; "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(experiment: Experiment) -> CampaignSpec {
        CampaignSpec {
            experiment,
            m: None,
            t: 2,
            k: None,
            s: None,
            identity_sketch: false,
            tol: None,
            safety: 1.4,
            variant: Variant::Exact,
            seed: 0,
            restarts: 10,
            solvers: None,
            out: PathBuf::from("unused"),
            load_recycle: None,
            save_recycle: None,
        }
    }

    #[test]
    fn neumann_defaults_follow_the_table_setup() {
        let cfg = resolve_config(
            &spec(Experiment::Neumann {
                systems: 50,
                grid: 103,
                shift: 1e-4,
            }),
            103 * 103,
        );
        assert_eq!((cfg.m, cfg.k, cfg.s, cfg.tol), (100, 20, 1200, 1e-6));
        assert!(!cfg.identity_sketch);
    }

    #[test]
    fn small_problems_fall_back_to_identity_sketch() {
        let cfg = resolve_config(
            &spec(Experiment::MtxFile {
                matrix: "x.mtx".into(),
                rhs: RhsSpec::Ones,
            }),
            100,
        );
        assert_eq!((cfg.m, cfg.k), (50, 10));
        assert!(cfg.identity_sketch);
        cfg.validate(100).unwrap();
    }

    #[test]
    fn explicit_sketch_size_is_kept() {
        let mut sp = spec(Experiment::Convdiff {
            n: 10,
            alphas: vec![0.0],
        });
        sp.s = Some(90);
        sp.m = Some(10);
        sp.k = Some(2);
        let cfg = resolve_config(&sp, 100);
        assert_eq!(cfg.s, 90);
        assert!(!cfg.identity_sketch);
    }

    #[test]
    fn rhs_spec_parsing() {
        assert_eq!(RhsSpec::parse("ones"), RhsSpec::Ones);
        assert_eq!(RhsSpec::parse("random"), RhsSpec::Random);
        assert_eq!(RhsSpec::parse("b.txt"), RhsSpec::File("b.txt".into()));
    }
}
