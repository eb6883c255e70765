//! TOML problem and point files. The schema is documented in
//! `docs/problem-format.md` at the repository root.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_instance_with_retries, BilevelProblem, LinearBilevelData, ModelError};
use crate::expr::{Expr, ParseError};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("cannot serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("bad expression in `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemFile {
    /// A generator call, `dims = [n, p, m, q]`.
    Generated { seed: u64, dims: [usize; 4], density: f64 },
    /// Explicit linear data; matrices are lists of rows.
    Linear {
        #[serde(rename = "A1")]
        a1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        c1: Vec<f64>,
        c2: Vec<f64>,
        d2: Vec<f64>,
        #[serde(rename = "A2")]
        a2: Vec<Vec<f64>>,
        #[serde(rename = "B2")]
        b2_mat: Vec<Vec<f64>>,
        b2: Vec<f64>,
        l_b: Vec<f64>,
        u_b: Vec<f64>,
    },
    /// Expressions in prefix text form over `x = 0..n`, `y = n..n+m`.
    Expr {
        n: usize,
        m: usize,
        upper_objective: String,
        lower_objective: String,
        #[serde(default)]
        lower_ineq: Vec<String>,
        #[serde(default)]
        lower_eq: Vec<String>,
        #[serde(default)]
        upper_ineq: Vec<String>,
    },
}

/// A loaded problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Linear(LinearBilevelData),
    General(BilevelProblem),
}

impl Problem {
    pub fn bilevel(&self) -> Result<BilevelProblem, ModelError> {
        match self {
            Problem::Linear(d) => d.to_expressions(),
            Problem::General(bp) => Ok(bp.clone()),
        }
    }

    pub fn linear(&self) -> Option<&LinearBilevelData> {
        match self {
            Problem::Linear(d) => Some(d),
            Problem::General(_) => None,
        }
    }
}

fn to_matrix(what: &str, rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>, ModelError> {
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(ModelError::DimensionMismatch {
            what: format!("{what} row length"),
            expected: cols,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_of(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows()).map(|i| mat.row(i).iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, FileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = fs::read_to_string(path).map_err(|source| FileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, FileError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_linear(d: &LinearBilevelData) -> Self {
        ProblemFile::Linear {
            a1: rows_of(&d.a1),
            b1: d.b1.clone(),
            c1: d.c1.clone(),
            c2: d.c2.clone(),
            d2: d.d2.clone(),
            a2: rows_of(&d.a2),
            b2_mat: rows_of(&d.b2_mat),
            b2: d.b2.clone(),
            l_b: d.l_b.clone(),
            u_b: d.u_b.clone(),
        }
    }

    pub fn into_problem(self) -> Result<Problem, FileError> {
        match self {
            ProblemFile::Generated { seed, dims, density } => {
                let g = generate_instance_with_retries(seed, (dims[0], dims[1], dims[2], dims[3]), density)?;
                Ok(Problem::Linear(g.data))
            }
            ProblemFile::Linear {
                a1,
                b1,
                c1,
                c2,
                d2,
                a2,
                b2_mat,
                b2,
                l_b,
                u_b,
            } => {
                let (n, m) = (c1.len(), c2.len());
                let data = LinearBilevelData {
                    a1: to_matrix("A1", &a1, n)?,
                    a2: to_matrix("A2", &a2, n)?,
                    b2_mat: to_matrix("B2", &b2_mat, m)?,
                    b1,
                    c1,
                    c2,
                    d2,
                    b2,
                    l_b,
                    u_b,
                };
                data.validate()?;
                Ok(Problem::Linear(data))
            }
            ProblemFile::Expr {
                n,
                m,
                upper_objective,
                lower_objective,
                lower_ineq,
                lower_eq,
                upper_ineq,
            } => {
                let parse =
                    |field: String, text: &str| Expr::parse(text).map_err(|source| FileError::Expr { field, source });
                let list = |name: &str, items: &[String]| -> Result<Vec<Expr>, FileError> {
                    items
                        .iter()
                        .enumerate()
                        .map(|(i, t)| parse(format!("{name}[{i}]"), t))
                        .collect()
                };
                let bp = BilevelProblem {
                    n,
                    m,
                    upper_objective: parse("upper_objective".into(), &upper_objective)?,
                    lower_objective: parse("lower_objective".into(), &lower_objective)?,
                    lower_ineq: list("lower_ineq", &lower_ineq)?,
                    lower_eq: list("lower_eq", &lower_eq)?,
                    upper_ineq: list("upper_ineq", &upper_ineq)?,
                };
                if let Err(errors) = bp.validate() {
                    return Err(FileError::Model(errors.into_iter().next().unwrap()));
                }
                Ok(Problem::General(bp))
            }
        }
    }
}

/// Which reformulation a point file refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointForm {
    /// `(x, y, z, u, v)`
    Wdp,
    /// `(x, y, u, v)`
    Mpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub form: PointForm,
    pub values: Vec<f64>,
}

impl PointFile {
    pub fn parse(text: &str) -> Result<Self, FileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = fs::read_to_string(path).map_err(|source| FileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, FileError> {
        Ok(toml::to_string(self)?)
    }
}
