//! Benchmark harness: the infeasibility metric for linear bilevel points,
//! suites over generated instances and CSV reports.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{dot, norm2};
use crate::model::{generate_instance, LinearBilevelData, ModelError};
use crate::reform::{build_mpec_with, build_wdp_with, ReformError, ReformOptions};
use crate::relax::{run, RelaxConfig, RelaxMode};
use crate::solve::{solve_lp, solve_nlp, SolveError, Status};

/// Desk-scale dimensions `(n, p, m, q)` of the two instance groups.
pub const GROUP_DIMS: [(usize, usize, usize, usize); 2] = [(10, 8, 12, 10), (10, 8, 20, 16)];
pub const DEFAULT_DENSITY: f64 = 0.1;
/// Multiplier cap used by the benchmark suites.
pub const BENCH_U_CAP: f64 = 1e8;

pub const CSV_HEADER: [&str; 6] = ["problem", "method", "objective", "infeasibility", "time_s", "status"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("lower-level LP is infeasible or unbounded at the given x")]
    LowerLevelInfeasible,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write report: {0}")]
    Csv(#[from] csv::Error),
}

fn positive_part_norm(v: impl Iterator<Item = f64>) -> f64 {
    norm2(&v.map(|a| a.max(0.0)).collect::<Vec<_>>())
}

/// `‖(A1x − b1)₊‖ + ‖(A2x + B2y − b2)₊‖ + ‖(y − u_b)₊‖ + ‖(l_b − y)₊‖ +
/// |d2ᵀy − h*(x)|` with Euclidean norms, where `h*(x)` is the optimal value
/// of the lower-level LP, solved afresh here.
pub fn infeasibility(d: &LinearBilevelData, x: &[f64], y: &[f64]) -> Result<f64, BenchError> {
    let (n, p, m, q) = d.dims();
    if x.len() != n {
        return Err(BenchError::DimensionMismatch {
            what: "x",
            expected: n,
            got: x.len(),
        });
    }
    if y.len() != m {
        return Err(BenchError::DimensionMismatch {
            what: "y",
            expected: m,
            got: y.len(),
        });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(BenchError::NonFinite);
    }
    let upper = positive_part_norm((0..p).map(|i| dot(&row(&d.a1, i), x) - d.b1[i]));
    let lower = positive_part_norm((0..q).map(|i| dot(&row(&d.a2, i), x) + dot(&row(&d.b2_mat, i), y) - d.b2[i]));
    let above = positive_part_norm((0..m).map(|j| y[j] - d.u_b[j]));
    let below = positive_part_norm((0..m).map(|j| d.l_b[j] - y[j]));
    let rep = solve_lp(&d.lower_level_lp(x))?;
    if rep.status != Status::Optimal {
        return Err(BenchError::LowerLevelInfeasible);
    }
    let value_gap = (dot(&d.d2, y) - rep.objective).abs();
    Ok(upper + lower + above + below + value_gap)
}

fn row(mat: &nalgebra::DMatrix<f64>, i: usize) -> Vec<f64> {
    mat.row(i).iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    MpecDirect,
    WdpDirect,
    MpecRelax,
    WdpRelax,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::MpecDirect,
        Method::WdpDirect,
        Method::MpecRelax,
        Method::WdpRelax,
    ];

    /// Name used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Method::MpecDirect => "MPEC-direct",
            Method::WdpDirect => "WDP-direct",
            Method::MpecRelax => "MPEC-relax",
            Method::WdpRelax => "WDP-relax",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    /// Accepts labels case-insensitively, e.g. `wdp-relax`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}` (expected mpec-direct, wdp-direct, mpec-relax or wdp-relax)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub problem: String,
    pub method: Method,
    pub objective: f64,
    /// Always recomputed by [`infeasibility`]; infinite when that fails.
    pub infeasibility: f64,
    pub time_s: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub dims: (usize, usize, usize, usize),
    pub density: f64,
    pub methods: Vec<Method>,
    pub relax: RelaxConfig,
    /// `u ≤ u_cap` rows for every method; overrides `relax.u_cap`.
    pub u_cap: Option<f64>,
    /// Tolerance and iteration budget of the direct solves.
    pub direct_tol: f64,
    pub direct_max_iter: usize,
    /// Compute rows on the rayon pool.
    pub parallel: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            dims: GROUP_DIMS[0],
            density: DEFAULT_DENSITY,
            methods: Method::ALL.to_vec(),
            relax: RelaxConfig::default(),
            u_cap: Some(BENCH_U_CAP),
            direct_tol: 1e-8,
            direct_max_iter: 200,
            parallel: true,
        }
    }
}

/// One row per `(seed, method)`, in that order. Failures end up in the
/// status column; the suite itself never aborts.
pub fn run_suite(seeds: &[u64], cfg: &SuiteConfig) -> Vec<BenchRow> {
    let jobs: Vec<(u64, Method)> = seeds
        .iter()
        .flat_map(|&s| cfg.methods.iter().map(move |&m| (s, m)))
        .collect();
    if cfg.parallel {
        jobs.par_iter().map(|&(s, m)| run_one(s, m, cfg)).collect()
    } else {
        jobs.iter().map(|&(s, m)| run_one(s, m, cfg)).collect()
    }
}

fn failed(problem: String, method: Method, status: String) -> BenchRow {
    BenchRow {
        problem,
        method,
        objective: f64::NAN,
        infeasibility: f64::INFINITY,
        time_s: 0.0,
        status,
    }
}

/// Runs one method on the instance generated from `seed`.
pub fn run_one(seed: u64, method: Method, cfg: &SuiteConfig) -> BenchRow {
    let problem = format!("seed{seed}");
    let data = match generate_instance(seed, cfg.dims, cfg.density) {
        Ok(d) => d,
        Err(e) => return failed(problem, method, format!("generate failed: {e}")),
    };
    let (n, _, m, _) = data.dims();
    let started = Instant::now();
    let outcome: Result<(Vec<f64>, Vec<f64>, String), String> = match method {
        Method::WdpRelax | Method::MpecRelax => {
            let rc = RelaxConfig {
                mode: if method == Method::WdpRelax {
                    RelaxMode::Wdp
                } else {
                    RelaxMode::Mpec
                },
                verbose: false,
                u_cap: cfg.u_cap,
                ..cfg.relax.clone()
            };
            run(&data, &rc)
                .map(|r| (r.x, r.y, format!("{:?}", r.termination)))
                .map_err(|e| e.to_string())
        }
        Method::WdpDirect | Method::MpecDirect => direct(&data, method, cfg).map_err(|e| e.to_string()),
    };
    let time_s = started.elapsed().as_secs_f64();
    match outcome {
        Ok((x, y, status)) => {
            let (objective, infeas, status) = match infeasibility(&data, &x, &y) {
                Ok(v) => (data.upper_objective(&x, &y), v, status),
                Err(e) => (data.upper_objective(&x, &y), f64::INFINITY, format!("{status}; {e}")),
            };
            debug_assert_eq!((x.len(), y.len()), (n, m));
            BenchRow {
                problem,
                method,
                objective,
                infeasibility: infeas,
                time_s,
                status,
            }
        }
        Err(e) => BenchRow {
            time_s,
            ..failed(problem, method, e)
        },
    }
}

#[derive(Debug, Error)]
enum DirectError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reform(#[from] ReformError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn direct(
    d: &LinearBilevelData,
    method: Method,
    cfg: &SuiteConfig,
) -> Result<(Vec<f64>, Vec<f64>, String), DirectError> {
    let bp = d.to_expressions()?;
    let options = ReformOptions {
        u_cap: cfg.u_cap,
        componentwise: false,
    };
    let nlp = if method == Method::WdpDirect {
        build_wdp_with(&bp, options)?
    } else {
        build_mpec_with(&bp, options)?
    };
    let rep = solve_nlp(&nlp, &vec![0.0; nlp.dim], cfg.direct_tol, cfg.direct_max_iter)?;
    let (n, m) = (bp.n, bp.m);
    Ok((
        rep.point[..n].to_vec(),
        rep.point[n..n + m].to_vec(),
        format!("{:?}", rep.status),
    ))
}

/// Scientific notation with four digits after the point and a signed,
/// at least two-digit exponent: `1.23456e-4` becomes `1.2346e-04`.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{v:.4e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Writes the CSV report (header always present) to any writer.
pub fn write_report_to<W: Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.problem.clone(),
            r.method.label().to_string(),
            format_sci(r.objective),
            format_sci(r.infeasibility),
            format_sci(r.time_s),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    let file = std::fs::File::create(path)?;
    write_report_to(rows, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(1.23456e-4), "1.2346e-04");
        assert_eq!(format_sci(0.0), "0.0000e+00");
        assert_eq!(format_sci(-123456.0), "-1.2346e+05");
        assert_eq!(format_sci(1e100), "1.0000e+100");
        assert_eq!(format_sci(f64::INFINITY), "inf");
    }

    #[test]
    fn metric_isolates_terms() {
        let d = generate_instance(1, (2, 1, 2, 1), 1.0).unwrap();
        let x = vec![0.0, 0.0];
        let rep = solve_lp(&d.lower_level_lp(&x)).unwrap();
        let y = rep.point.clone();
        assert!(infeasibility(&d, &x, &y).unwrap() < 1e-12);
        // push y above u_b by 0.5 in one coordinate
        let mut y2 = y.clone();
        y2[0] = d.u_b[0] + 0.5;
        let gap = (dot(&d.d2, &y2) - rep.objective).abs();
        let b2_excess: f64 = {
            let r: f64 = (0..2).map(|j| d.a2[(0, j)] * x[j]).sum::<f64>()
                + (0..2).map(|j| d.b2_mat[(0, j)] * y2[j]).sum::<f64>()
                - d.b2[0];
            r.max(0.0)
        };
        let got = infeasibility(&d, &x, &y2).unwrap();
        assert!((got - (0.5 + gap + b2_excess)).abs() < 1e-12);
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_report_to(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "problem,method,objective,infeasibility,time_s,status\n"
        );
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("wdp-relax".parse::<Method>().unwrap(), Method::WdpRelax);
        assert_eq!("MPEC-direct".parse::<Method>().unwrap(), Method::MpecDirect);
        assert!("foo".parse::<Method>().is_err());
    }
}
