//! `bilevel`: generate instances, dump reformulations, solve, certify,
//! run the relaxation method and benchmark suites.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 on solver or
//! numerical failure.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wolfe_bilevel::bench::{
    run_suite, write_report, write_report_to, Method, SuiteConfig, DEFAULT_DENSITY, GROUP_DIMS,
};
use wolfe_bilevel::certify::{
    abnormal_multiplier, duality_gap, kkt_residual, mfcq_check, s_stationarity, CertifyError,
};
use wolfe_bilevel::model::{generate_instance_with_retries, FileError, PointFile, PointForm, Problem, ProblemFile};
use wolfe_bilevel::reform::{
    build_mpec_with, build_wdp_with, check_feasible, relax_mpec, relax_wdp, Nlp, ReformOptions,
};
use wolfe_bilevel::relax::{run, run_general, RelaxConfig, RelaxError, RelaxMode};
use wolfe_bilevel::solve::{solve_nlp_with, SqpOptions, Status};

use output::{Format, Report};

#[derive(Debug, Parser)]
#[command(name = "bilevel", version, about = "Single-level reformulations of bilevel programs")]
struct Cli {
    /// Per-iteration solver log on standard error.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random linear instance and write it as a problem file.
    Generate {
        #[arg(long)]
        seed: u64,
        /// n,p,m,q
        #[arg(long, value_parser = parse_dims)]
        dims: (usize, usize, usize, usize),
        #[arg(long, default_value_t = DEFAULT_DENSITY)]
        density: f64,
        /// Output path; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reformulation utilities.
    Reform {
        #[command(subcommand)]
        action: ReformAction,
    },
    /// Solve a reformulation with the SQP solver.
    Solve {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        reform: ReformArgs,
        /// Starting point file; zeros if absent.
        #[arg(long)]
        start: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Certify a point: KKT, MFCQ, S-stationarity, abnormal multiplier or
    /// duality gap.
    Certify {
        #[arg(long, value_enum)]
        check: Check,
        /// Activity and feasibility tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        problem: PathBuf,
        point: PathBuf,
    },
    /// Run the relaxation method.
    Relax {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = Mode::Wdp)]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-8)]
        eps_p: f64,
        #[arg(long, default_value_t = 1e-16)]
        eps_r: f64,
        #[arg(long, default_value_t = 1e-16)]
        delta_min: f64,
        #[arg(long, default_value_t = 20)]
        max_outer: usize,
        /// Keep x̃ fixed between outer iterations.
        #[arg(long)]
        literal_step3: bool,
        #[arg(long)]
        u_cap: Option<f64>,
        /// Starting upper-level point for expression problems, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        /// Also print the per-iteration trace as CSV.
        #[arg(long)]
        trace: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run a benchmark suite on generated instances.
    Bench {
        /// 1: (10,8,12,10), 2: (10,8,20,16).
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        group: u8,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "0..9", value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "mpec-direct,wdp-direct,mpec-relax,wdp-relax"
        )]
        methods: Vec<Method>,
        #[arg(long, default_value_t = DEFAULT_DENSITY)]
        density: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum ReformAction {
    /// Print the reformulation in prefix text form.
    Dump {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        reform: ReformArgs,
    },
}

/// A problem file or a generator call, never both.
#[derive(Debug, Args)]
struct Input {
    problem: Option<PathBuf>,
    #[arg(long, requires = "dims", conflicts_with = "problem")]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_dims, requires = "seed")]
    dims: Option<(usize, usize, usize, usize)>,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
}

#[derive(Debug, Args)]
struct ReformArgs {
    #[arg(long, value_enum, default_value_t = Mode::Wdp)]
    form: Mode,
    /// Relaxation parameter t.
    #[arg(long)]
    relax: Option<f64>,
    #[arg(long)]
    u_cap: Option<f64>,
    /// MPEC complementarity per index instead of aggregated.
    #[arg(long)]
    componentwise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Wdp,
    Mpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Kkt,
    Mfcq,
    SStat,
    Abnormal,
    Gap,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [n, p, m, q] => Ok((n, p, m, q)),
        _ => Err(format!("expected four comma-separated sizes n,p,m,q, got {}", v.len())),
    }
}

/// A whole seed list as one argument value.
#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    parse_seed_list(s).map(Seeds)
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// Exit-code classes.
enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn numeric(e: impl std::fmt::Display) -> Failure {
    Failure::Numeric(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let verbose = cli.verbose;
    match cli.command {
        Command::Generate {
            seed,
            dims,
            density,
            out,
        } => generate(seed, dims, density, out.as_deref()),
        Command::Reform {
            action: ReformAction::Dump { input, reform },
        } => {
            let problem = load(&input)?;
            let nlp = reformulate(&problem, &reform)?;
            print!("{}", nlp.dump());
            Ok(())
        }
        Command::Solve {
            input,
            reform,
            start,
            tol,
            max_iter,
            format,
        } => {
            let problem = load(&input)?;
            let nlp = reformulate(&problem, &reform)?;
            let start = match start {
                Some(path) => {
                    let pf = PointFile::load(&path)?;
                    check_form(pf.form, reform.form)?;
                    pf.values
                }
                None => vec![0.0; nlp.dim],
            };
            let opts = SqpOptions {
                tol,
                max_iter,
                verbose,
                ..SqpOptions::default()
            };
            let (rep, _) = solve_nlp_with(&nlp, &start, &opts).map_err(usage)?;
            let violation = check_feasible(&nlp, &rep.point, tol).map_err(numeric)?.max_violation();
            output::solve_report(&rep, violation, format);
            if rep.status == Status::Optimal {
                Ok(())
            } else {
                Err(numeric(format!("solver stopped with status {:?}", rep.status)))
            }
        }
        Command::Certify {
            check,
            tol,
            problem,
            point,
        } => certify(check, tol, &problem, &point),
        Command::Relax {
            input,
            mode,
            t0,
            sigma,
            eps_p,
            eps_r,
            delta_min,
            max_outer,
            literal_step3,
            u_cap,
            x0,
            trace,
            format,
        } => {
            let problem = load(&input)?;
            let cfg = RelaxConfig {
                t0,
                sigma,
                eps_p,
                eps_r,
                delta_min,
                max_outer,
                mode: if mode == Mode::Wdp {
                    RelaxMode::Wdp
                } else {
                    RelaxMode::Mpec
                },
                literal_step3,
                u_cap,
                verbose,
                ..RelaxConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let result = match &problem {
                Problem::Linear(d) => {
                    if x0.is_some() {
                        return Err(usage("--x0 applies to expression problems; linear runs start at x = 0"));
                    }
                    run(d, &cfg)
                }
                Problem::General(bp) => {
                    let x0 = x0.unwrap_or_else(|| vec![0.0; bp.n]);
                    run_general(bp, &x0, &cfg)
                }
            };
            match result {
                Ok(rep) => {
                    output::relax_report(&rep, mode == Mode::Wdp, trace, format);
                    Ok(())
                }
                Err(e @ (RelaxError::InvalidConfig(_) | RelaxError::InfeasibleStart | RelaxError::Reform(_))) => {
                    Err(usage(e))
                }
                Err(e) => Err(numeric(e)),
            }
        }
        Command::Bench {
            group,
            seeds,
            methods,
            density,
            out,
            format,
        } => {
            let cfg = SuiteConfig {
                dims: GROUP_DIMS[usize::from(group) - 1],
                density,
                methods,
                ..SuiteConfig::default()
            };
            let rows = run_suite(&seeds.0, &cfg);
            match (&out, format) {
                (Some(path), _) => write_report(&rows, path).map_err(usage)?,
                (None, Format::Csv) => write_report_to(&rows, std::io::stdout()).map_err(usage)?,
                (None, Format::Text) => output::bench_table(&rows),
            }
            Ok(())
        }
    }
}

fn generate(seed: u64, dims: (usize, usize, usize, usize), density: f64, out: Option<&Path>) -> Outcome {
    let g = generate_instance_with_retries(seed, dims, density).map_err(usage)?;
    let mut text = format!(
        "# seed {} (retries {}), dims {:?}, density {density}\n",
        g.seed, g.retries, dims
    );
    text.push_str(&ProblemFile::from_linear(&g.data).to_toml()?);
    match out {
        Some(path) => fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(input: &Input) -> Result<Problem, Failure> {
    match (&input.problem, input.seed, input.dims) {
        (Some(path), None, None) => Ok(ProblemFile::load(path)?.into_problem()?),
        (None, Some(seed), Some(dims)) => {
            let g = generate_instance_with_retries(seed, dims, input.density).map_err(usage)?;
            Ok(Problem::Linear(g.data))
        }
        _ => Err(usage("give either a problem file or --seed with --dims")),
    }
}

fn reformulate(problem: &Problem, args: &ReformArgs) -> Result<Nlp, Failure> {
    let bp = problem.bilevel().map_err(usage)?;
    let options = ReformOptions {
        u_cap: args.u_cap,
        componentwise: args.componentwise,
    };
    let nlp = match args.form {
        Mode::Wdp => build_wdp_with(&bp, options),
        Mode::Mpec => build_mpec_with(&bp, options),
    }
    .map_err(usage)?;
    match (args.relax, args.form) {
        (None, _) => Ok(nlp),
        (Some(t), Mode::Wdp) => relax_wdp(&nlp, t).map_err(usage),
        (Some(t), Mode::Mpec) => relax_mpec(&nlp, t).map_err(usage),
    }
}

fn check_form(form: PointForm, mode: Mode) -> Outcome {
    match (form, mode) {
        (PointForm::Wdp, Mode::Wdp) | (PointForm::Mpec, Mode::Mpec) => Ok(()),
        _ => Err(usage(format!(
            "point file is for the {form:?} form, problem form is {mode:?}"
        ))),
    }
}

fn certify(check: Check, tol: f64, problem: &Path, point: &Path) -> Outcome {
    let problem = ProblemFile::load(problem)?.into_problem()?;
    let pf = PointFile::load(point)?;
    let bp = problem.bilevel().map_err(usage)?;
    let nlp = match pf.form {
        PointForm::Wdp => build_wdp_with(&bp, ReformOptions::default()),
        PointForm::Mpec => build_mpec_with(&bp, ReformOptions::default()),
    }
    .map_err(usage)?;
    if pf.values.len() != nlp.dim {
        return Err(usage(format!(
            "point has {} entries, the {:?} form has {}",
            pf.values.len(),
            pf.form,
            nlp.dim
        )));
    }
    let p = &pf.values;
    let need = |want: PointForm, name: &str| -> Outcome {
        if pf.form == want {
            Ok(())
        } else {
            Err(usage(format!("--check {name} needs a {want:?} point")))
        }
    };
    let mapped = |e: CertifyError| match e {
        CertifyError::InfeasiblePoint { .. } | CertifyError::InfeasibleInput(_) | CertifyError::Solve(_) => numeric(e),
        _ => usage(e),
    };
    let report = match check {
        Check::Kkt => Report::Certify("kkt", kkt_residual(&nlp, p, tol).map_err(mapped)?),
        Check::Mfcq => Report::Certify("mfcq", mfcq_check(&nlp, p, tol).map_err(mapped)?),
        Check::SStat => {
            need(PointForm::Mpec, "s-stat")?;
            Report::Certify("s-stat", s_stationarity(&nlp, p, tol).map_err(mapped)?)
        }
        Check::Abnormal => {
            need(PointForm::Wdp, "abnormal")?;
            Report::Certify("abnormal", abnormal_multiplier(&nlp, p).map_err(mapped)?)
        }
        Check::Gap => {
            need(PointForm::Wdp, "gap")?;
            let (n, m) = (bp.n, bp.m);
            let gap = duality_gap(&bp, &p[..n], &p[n..n + m], &p[n + m..], tol).map_err(mapped)?;
            Report::Gap(gap)
        }
    };
    output::certify_report(&report, pf.form);
    Ok(())
}
