//! Text and CSV rendering of reports. Numbers use six digits after the
//! point in scientific notation so golden files are stable across runs.

use clap::ValueEnum;

use wolfe_bilevel::bench::{format_sci, BenchRow, CSV_HEADER};
use wolfe_bilevel::certify::{Certificate, CertifyReport};
use wolfe_bilevel::model::PointForm;
use wolfe_bilevel::relax::RunReport;
use wolfe_bilevel::solve::SolveReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

pub enum Report {
    Certify(&'static str, CertifyReport),
    Gap(f64),
}

pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.6e}")
    }
}

fn list(v: &[f64]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

pub fn solve_report(rep: &SolveReport, violation: f64, format: Format) {
    match format {
        Format::Csv => {
            println!("status,objective,max_violation,iterations,time_s");
            println!(
                "{:?},{},{},{},{}",
                rep.status,
                format_sci(rep.objective),
                format_sci(violation),
                rep.iterations,
                format_sci(rep.wall_time.as_secs_f64())
            );
        }
        Format::Text => {
            println!("status {:?}", rep.status);
            println!("objective {}", num(rep.objective));
            println!("max_violation {}", num(violation));
            println!("iterations {}", rep.iterations);
            println!("point {}", list(&rep.point));
        }
    }
}

pub fn relax_report(rep: &RunReport, wdp: bool, trace: bool, format: Format) {
    let method = if wdp { "WDP-relax" } else { "MPEC-relax" };
    match format {
        Format::Csv => {
            println!("{}", CSV_HEADER.join(","));
            println!(
                "-,{method},{},{},{},{:?}",
                format_sci(rep.objective),
                format_sci(rep.infeasibility),
                format_sci(rep.wall_time.as_secs_f64()),
                rep.termination
            );
        }
        Format::Text => {
            println!("method {method}");
            println!("termination {:?}", rep.termination);
            println!("outer_iterations {}", rep.outer_iterations);
            println!("objective {}", num(rep.objective));
            println!("infeasibility {}", num(rep.infeasibility));
            println!("x {}", list(&rep.x));
            println!("y {}", list(&rep.y));
        }
    }
    if trace {
        println!("k,t,objective,kkt_residual,status");
        for row in &rep.trace {
            println!(
                "{},{},{},{},{:?}",
                row.k,
                format_sci(row.t),
                format_sci(row.objective),
                format_sci(row.kkt_residual),
                row.status
            );
        }
    }
}

pub fn certify_report(report: &Report, form: PointForm) {
    let form = match form {
        PointForm::Wdp => "wdp",
        PointForm::Mpec => "mpec",
    };
    match report {
        Report::Gap(g) => {
            println!("check gap");
            println!("form {form}");
            println!("gap {}", num(*g));
        }
        Report::Certify(check, r) => {
            println!("check {check}");
            println!("form {form}");
            println!("verdict {}", r.verdict);
            println!("residual {}", num(r.residual));
            match &r.certificate {
                None => println!("certificate none"),
                Some(Certificate::Kkt(m)) => {
                    println!("certificate kkt");
                    println!("  ineq {}", list(&m.ineq));
                    println!("  eq {}", list(&m.eq));
                }
                Some(Certificate::SStationary(m)) => {
                    println!("certificate s-stationary");
                    println!("  upper {}", list(&m.upper));
                    println!("  lambda_g {}", list(&m.lambda_g));
                    println!("  lambda_u {}", list(&m.lambda_u));
                    println!("  cap {}", list(&m.cap));
                    println!("  nu_h {}", list(&m.nu_h));
                    println!("  gamma {}", list(&m.gamma));
                }
                Some(Certificate::Direction(d)) => {
                    println!("certificate direction");
                    println!("  d {}", list(d));
                }
                Some(Certificate::Abnormal(m)) => {
                    println!("certificate abnormal");
                    println!("  alpha {}", num(m.alpha));
                    println!("  beta {}", list(&m.beta));
                    println!("  eta_g {}", list(&m.eta_g));
                    println!("  eta_u {}", list(&m.eta_u));
                    println!("  nu_h {}", list(&m.nu_h));
                }
                Some(Certificate::PositiveCombination { alpha, beta }) => {
                    println!("certificate positive-combination");
                    println!("  alpha {}", list(alpha));
                    println!("  beta {}", list(beta));
                }
            }
        }
    }
}

pub fn bench_table(rows: &[BenchRow]) {
    println!(
        "{:<10} {:<12} {:>12} {:>12} {:>12}  status",
        "problem", "method", "objective", "infeas", "time_s"
    );
    for r in rows {
        println!(
            "{:<10} {:<12} {:>12} {:>12} {:>12}  {}",
            r.problem,
            r.method.label(),
            format_sci(r.objective),
            format_sci(r.infeasibility),
            format_sci(r.time_s),
            r.status
        );
    }
}
