//! JSON problem files.
//!
//! ```json
//! {"n": 2, "A": {"kind": "diagonal", "diag": [1.0, 3.0]}, "b": [1.0, 1.0]}
//! ```
//!
//! `A` is one of
//! - `{"kind": "dense", "data": [...]}`: lower triangle, row by row
//!   (`a00, a10, a11, a20, ...`), `n(n+1)/2` entries;
//! - `{"kind": "diagonal", "diag": [...]}`;
//! - `{"kind": "eiglowrank", "rank": r, "u": [...], "d": [...], "shift": s}`
//!   with `u` the `n × r` factor in row-major order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::btrs::BtrsProblem;
use crate::error::{Error, Result};
use crate::linop::{OpRepr, SymOp};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorFile {
    Dense {
        data: Vec<f64>,
    },
    Diagonal {
        diag: Vec<f64>,
    },
    #[serde(rename = "eiglowrank")]
    EigLowRank {
        rank: usize,
        u: Vec<f64>,
        d: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(rename = "A")]
    pub a: OperatorFile,
    pub b: Vec<f64>,
}

fn field_len(field: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ProblemFormat(format!(
            "field `{field}`: expected {expected} entries, found {found}"
        )))
    }
}

fn check_finite(field: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::ProblemFormat(format!("field `{field}`: entry {i} is not finite"))),
    }
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<BtrsProblem> {
        let n = self.n;
        if n == 0 {
            return Err(Error::ProblemFormat("field `n`: must be positive".into()));
        }
        field_len("b", n, self.b.len())?;
        check_finite("b", &self.b)?;
        let a = match self.a {
            OperatorFile::Dense { data } => {
                field_len("A.data", n * (n + 1) / 2, data.len())?;
                check_finite("A.data", &data)?;
                let mut m = DMatrix::zeros(n, n);
                let mut k = 0;
                for i in 0..n {
                    for j in 0..=i {
                        m[(i, j)] = data[k];
                        m[(j, i)] = data[k];
                        k += 1;
                    }
                }
                SymOp::dense(m)?
            }
            OperatorFile::Diagonal { diag } => {
                field_len("A.diag", n, diag.len())?;
                check_finite("A.diag", &diag)?;
                SymOp::diagonal(DVector::from_vec(diag))?
            }
            OperatorFile::EigLowRank { rank, u, d, shift } => {
                if rank > n {
                    return Err(Error::ProblemFormat(format!("field `A.rank`: {rank} exceeds n = {n}")));
                }
                field_len("A.u", n * rank, u.len())?;
                field_len("A.d", rank, d.len())?;
                check_finite("A.u", &u)?;
                check_finite("A.d", &d)?;
                if !shift.is_finite() {
                    return Err(Error::ProblemFormat("field `A.shift`: not finite".into()));
                }
                let u = DMatrix::from_row_slice(n, rank, &u);
                SymOp::eig_low_rank(u, DVector::from_vec(d), shift)
                    .map_err(|e| Error::ProblemFormat(format!("field `A.u`: {e}")))?
            }
        };
        BtrsProblem::new(a, DVector::from_vec(self.b))
    }

    pub fn from_problem(p: &BtrsProblem) -> Result<Self> {
        let n = p.dim();
        let a = match p.a().repr() {
            OpRepr::Dense(m) => {
                let mut data = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    for j in 0..=i {
                        data.push(m[(i, j)]);
                    }
                }
                OperatorFile::Dense { data }
            }
            OpRepr::Diagonal(d) => OperatorFile::Diagonal {
                diag: d.as_slice().to_vec(),
            },
            OpRepr::EigLowRank { u, d, shift } => {
                let rank = u.ncols();
                let mut flat = Vec::with_capacity(n * rank);
                for i in 0..n {
                    flat.extend(u.row(i).iter());
                }
                OperatorFile::EigLowRank {
                    rank,
                    u: flat,
                    d: d.as_slice().to_vec(),
                    shift: *shift,
                }
            }
            OpRepr::Callback(_) => {
                return Err(Error::InvalidArgument("callback operators cannot be serialized".into()));
            }
        };
        Ok(Self {
            n,
            a,
            b: p.b().as_slice().to_vec(),
        })
    }
}

pub fn parse_problem(text: &str) -> Result<BtrsProblem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::ProblemFormat(e.to_string()))?;
    file.into_problem()
}

pub fn problem_to_json(p: &BtrsProblem) -> Result<String> {
    Ok(serde_json::to_string(&ProblemFile::from_problem(p)?)?)
}

pub fn read_problem(path: impl AsRef<Path>) -> Result<BtrsProblem> {
    parse_problem(&fs::read_to_string(path)?)
}

pub fn write_problem(path: impl AsRef<Path>, p: &BtrsProblem) -> Result<()> {
    fs::write(path, problem_to_json(p)?)?;
    Ok(())
}
