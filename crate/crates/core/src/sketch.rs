//! Sketching matrices and the precomputed sketched system `(SA, Sy)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::Problem;
use crate::num::{Matrix, Rng, StreamRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    Gaussian,
    Count,
}

impl SketchKind {
    pub fn name(self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::Count => "count",
        }
    }
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SketchKind::Gaussian),
            "count" | "count_sketch" => Ok(SketchKind::Count),
            other => Err(Error::InvalidArgument(format!("unknown sketch kind {other:?}"))),
        }
    }
}

/// Storage behind a [`Sketch`].
#[derive(Debug, Clone, PartialEq)]
pub enum SketchRepr {
    Dense(Matrix),
    /// One nonzero per column: `rows[j]` holds its row index, `signs[j]` its sign.
    Count {
        rows: Vec<usize>,
        signs: Vec<i8>,
    },
}

/// An `l x m` sketching matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    l: usize,
    m: usize,
    repr: SketchRepr,
    seed: Option<u64>,
}

/// Regenerate-from-seed form of a sketch. Dense entries are never written out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchDescriptor {
    pub kind: SketchKind,
    pub l: usize,
    pub m: usize,
    pub seed: u64,
}

fn check_size(l: usize, m: usize) -> Result<()> {
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!(
            "sketch size must satisfy 1 <= l <= m, got l={l}, m={m}"
        )));
    }
    Ok(())
}

/// Dense sketch with i.i.d. `N(0, 1/l)` entries.
pub fn make_gaussian_sketch(rng: &mut Rng, l: usize, m: usize) -> Result<Sketch> {
    check_size(l, m)?;
    let std_dev = (1.0 / l as f64).sqrt();
    Ok(Sketch {
        l,
        m,
        repr: SketchRepr::Dense(rng.gaussian_matrix(l, m, std_dev)),
        seed: None,
    })
}

/// Count Sketch: each column gets a uniform row and a uniform sign.
/// Several columns may land on the same row.
pub fn make_count_sketch(rng: &mut Rng, l: usize, m: usize) -> Result<Sketch> {
    check_size(l, m)?;
    let mut rows = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);
    for _ in 0..m {
        rows.push(rng.below(l));
        signs.push(if rng.next_u64() >> 63 == 0 { 1 } else { -1 });
    }
    Ok(Sketch {
        l,
        m,
        repr: SketchRepr::Count { rows, signs },
        seed: None,
    })
}

pub fn make_sketch(kind: SketchKind, rng: &mut Rng, l: usize, m: usize) -> Result<Sketch> {
    match kind {
        SketchKind::Gaussian => make_gaussian_sketch(rng, l, m),
        SketchKind::Count => make_count_sketch(rng, l, m),
    }
}

impl Sketch {
    /// Draws a sketch from a dedicated substream so it can be rebuilt from its descriptor.
    pub fn from_descriptor(desc: &SketchDescriptor) -> Result<Sketch> {
        let mut rng = Rng::substream(desc.seed, 0, StreamRole::Sketch);
        let mut s = make_sketch(desc.kind, &mut rng, desc.l, desc.m)?;
        s.seed = Some(desc.seed);
        Ok(s)
    }

    /// Descriptor for a sketch built with [`Sketch::from_descriptor`].
    pub fn descriptor(&self) -> Option<SketchDescriptor> {
        self.seed.map(|seed| SketchDescriptor {
            kind: self.kind(),
            l: self.l,
            m: self.m,
            seed,
        })
    }

    /// Wraps an explicit dense matrix; used for degenerate sketches in tests and analysis.
    pub fn dense(s: Matrix) -> Result<Sketch> {
        check_size(s.rows(), s.cols())?;
        Ok(Sketch {
            l: s.rows(),
            m: s.cols(),
            repr: SketchRepr::Dense(s),
            seed: None,
        })
    }

    /// Count Sketch from explicit row indices and signs.
    pub fn count(l: usize, rows: Vec<usize>, signs: Vec<i8>) -> Result<Sketch> {
        let m = rows.len();
        check_size(l, m)?;
        check_len("Sketch::count signs", m, signs.len())?;
        if rows.iter().any(|&r| r >= l) || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(
                "count sketch needs row < l and signs in {+1, -1}".into(),
            ));
        }
        Ok(Sketch {
            l,
            m,
            repr: SketchRepr::Count { rows, signs },
            seed: None,
        })
    }

    pub fn kind(&self) -> SketchKind {
        match self.repr {
            SketchRepr::Dense(_) => SketchKind::Gaussian,
            SketchRepr::Count { .. } => SketchKind::Count,
        }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn repr(&self) -> &SketchRepr {
        &self.repr
    }

    pub fn to_dense(&self) -> Matrix {
        match &self.repr {
            SketchRepr::Dense(s) => s.clone(),
            SketchRepr::Count { rows, signs } => {
                let mut s = Matrix::zeros(self.l, self.m);
                for (j, (&r, &sg)) in rows.iter().zip(signs).enumerate() {
                    s.set(r, j, f64::from(sg));
                }
                s
            }
        }
    }

    /// `S v` for a length-`m` vector.
    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_sketch (vector)", self.m, v.len())?;
        match &self.repr {
            SketchRepr::Dense(s) => s.matvec(v),
            SketchRepr::Count { rows, signs } => {
                let mut out = vec![0.0; self.l];
                for ((&r, &sg), &x) in rows.iter().zip(signs).zip(v) {
                    if x != 0.0 {
                        out[r] += f64::from(sg) * x;
                    }
                }
                Ok(out)
            }
        }
    }

    /// `S A` for an `m x n` matrix. Count Sketch touches only nonzeros of `A`.
    pub fn apply_mat(&self, a: &Matrix) -> Result<Matrix> {
        check_len("apply_sketch (matrix)", self.m, a.rows())?;
        match &self.repr {
            SketchRepr::Dense(s) => s.matmul(a),
            SketchRepr::Count { rows, signs } => {
                let mut out = Matrix::zeros(self.l, a.cols());
                for (k, (&r, &sg)) in rows.iter().zip(signs).enumerate() {
                    let sign = f64::from(sg);
                    let dst = out.row_mut(r);
                    for (d, &x) in dst.iter_mut().zip(a.row(k)) {
                        if x != 0.0 {
                            *d += sign * x;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// `Sᵀ M` for an `l x n` matrix.
    pub fn apply_transpose_mat(&self, b: &Matrix) -> Result<Matrix> {
        check_len("apply_sketch transpose", self.l, b.rows())?;
        match &self.repr {
            SketchRepr::Dense(s) => s.transpose().matmul(b),
            SketchRepr::Count { rows, signs } => {
                let mut out = Matrix::zeros(self.m, b.cols());
                for (j, (&r, &sg)) in rows.iter().zip(signs).enumerate() {
                    let sign = f64::from(sg);
                    for (d, &x) in out.row_mut(j).iter_mut().zip(b.row(r)) {
                        *d = sign * x;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// `SA` and `Sy`, computed once and reused across iterations.
#[derive(Debug, Clone)]
pub struct SketchedSystem {
    sa: Arc<Matrix>,
    sy: Vec<f64>,
    sketch: Arc<Sketch>,
    problem_id: u64,
}

pub fn build_sketched_system(sketch: Arc<Sketch>, problem: &Problem) -> Result<SketchedSystem> {
    check_len("build_sketched_system", problem.m(), sketch.m())?;
    let sa = Arc::new(sketch.apply_mat(problem.a())?);
    let sy = sketch.apply_vec(problem.y())?;
    Ok(SketchedSystem {
        sa,
        sy,
        sketch,
        problem_id: problem.id(),
    })
}

impl SketchedSystem {
    /// Same `A` and `S`, new observation: `SA` is shared, only `Sy` is recomputed.
    pub fn with_observation(&self, problem: &Problem) -> Result<SketchedSystem> {
        check_len("SketchedSystem::with_observation", self.sketch.m(), problem.m())?;
        check_len("SketchedSystem::with_observation (n)", self.sa.cols(), problem.n())?;
        Ok(SketchedSystem {
            sa: Arc::clone(&self.sa),
            sy: self.sketch.apply_vec(problem.y())?,
            sketch: Arc::clone(&self.sketch),
            problem_id: problem.id(),
        })
    }

    pub fn sa(&self) -> &Matrix {
        &self.sa
    }

    pub(crate) fn sa_arc(&self) -> Arc<Matrix> {
        Arc::clone(&self.sa)
    }

    pub fn sy(&self) -> &[f64] {
        &self.sy
    }

    pub fn sketch(&self) -> &Sketch {
        &self.sketch
    }

    pub fn problem_id(&self) -> u64 {
        self.problem_id
    }

    pub fn shares_sa_with(&self, other: &SketchedSystem) -> bool {
        Arc::ptr_eq(&self.sa, &other.sa)
    }
}
