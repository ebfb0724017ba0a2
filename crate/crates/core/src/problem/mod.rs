//! Multiparametric mixed-integer conic programs.
//!
//! For a fixed commutation `delta` the program is
//!
//! ```text
//! V*_delta(theta) = min  c'x + c_theta'theta + c0
//!                   s.t. A x + s = b + B_theta theta,   s in K
//! ```
//!
//! with all data depending on `delta` (and only the right-hand side and cost
//! offset depending on `theta`).

mod format;
mod scaling;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{self, ConeSpec, ConicError, ConicProblem, SolveOutcome, SolveStatus};
use crate::geometry::Point;

pub use format::{read_program_file, write_program_file, ProgramFile};
pub use scaling::{scale_to_unit_box, ScalingTransform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("inadmissible commutation: {0}")]
    InadmissibleCommutation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

/// Binary vector selecting the discrete choices of the program.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Commutation {
    bits: Vec<bool>,
}

impl Commutation {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(m: usize) -> Self {
        Self { bits: vec![false; m] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for Commutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bits.is_empty() {
            return f.write_str("-");
        }
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Commutation {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "-" {
            return Ok(Self::default());
        }
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(ProblemError::InadmissibleCommutation(format!("'{s}' is not a bit string"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self::new)
    }
}

/// Conic data of the program with the commutation fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct ConicTemplate {
    pub c: DVector<f64>,
    pub c_theta: DVector<f64>,
    pub c0: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub b_theta: DMatrix<f64>,
    pub cone: ConeSpec,
}

impl ConicTemplate {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn p(&self) -> usize {
        self.c_theta.len()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// The conic problem at `theta` and the constant added to its objective.
    pub fn at(&self, theta: &Point) -> (ConicProblem, f64) {
        let b = &self.b + &self.b_theta * theta;
        let offset = self.c_theta.dot(theta) + self.c0;
        (ConicProblem { c: self.c.clone(), a: self.a.clone(), b, cone: self.cone.clone() }, offset)
    }

    fn dimension_problems(&self, n: usize, p: usize) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.b.len();
        if self.c.len() != n {
            out.push(format!("cost has {} entries, expected n = {n}", self.c.len()));
        }
        if self.c_theta.len() != p {
            out.push(format!("parameter cost has {} entries, expected p = {p}", self.c_theta.len()));
        }
        if self.a.shape() != (d, n) {
            out.push(format!("constraint matrix is {:?}, expected ({d}, {n})", self.a.shape()));
        }
        if self.b_theta.shape() != (d, p) {
            out.push(format!("parameter matrix is {:?}, expected ({d}, {p})", self.b_theta.shape()));
        }
        if self.cone.dim() != d {
            out.push(format!("cone covers {} rows but there are {d} constraint rows", self.cone.dim()));
        }
        out.extend(self.cone.problems());
        let finite = self.c.iter().chain(self.c_theta.iter()).chain(self.a.iter()).chain(self.b.iter());
        if finite.chain(self.b_theta.iter()).any(|v| !v.is_finite()) || !self.c0.is_finite() {
            out.push("non-finite data".into());
        }
        out
    }
}

/// Data affine in the commutation bits. Column/entry 0 holds the constant
/// term, entry `j + 1` the coefficient of bit `j`. `c` and `A` do not depend
/// on `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineEncoding {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub cone: ConeSpec,
    pub c0: DVector<f64>,
    pub c_theta: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_theta: Vec<DMatrix<f64>>,
}

impl AffineEncoding {
    /// All-zero data for the given dimensions.
    pub fn zeros(p: usize, n: usize, m: usize, cone: ConeSpec) -> Self {
        let d = cone.dim();
        Self {
            c: DVector::zeros(n),
            a: DMatrix::zeros(d, n),
            cone,
            c0: DVector::zeros(m + 1),
            c_theta: DMatrix::zeros(p, m + 1),
            b: DMatrix::zeros(d, m + 1),
            b_theta: vec![DMatrix::zeros(d, p); m + 1],
        }
    }

    pub fn instantiate(&self, delta: &Commutation) -> ConicTemplate {
        let w: Vec<f64> = std::iter::once(1.0).chain(delta.as_f64()).collect();
        let mut c0 = 0.0;
        let mut c_theta = DVector::zeros(self.c_theta.nrows());
        let mut b = DVector::zeros(self.b.nrows());
        let mut b_theta = DMatrix::zeros(self.b.nrows(), self.c_theta.nrows());
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            c0 += wk * self.c0[k];
            c_theta += self.c_theta.column(k) * wk;
            b += self.b.column(k) * wk;
            b_theta += &self.b_theta[k] * wk;
        }
        ConicTemplate { c: self.c.clone(), c_theta, c0, a: self.a.clone(), b, b_theta, cone: self.cone.clone() }
    }

    fn dimension_problems(&self, p: usize, n: usize, m: usize) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.a.nrows();
        if self.c.len() != n || self.a.ncols() != n {
            out.push(format!("cost/constraint columns do not match n = {n}"));
        }
        if self.cone.dim() != d {
            out.push(format!("cone covers {} rows but there are {d} constraint rows", self.cone.dim()));
        }
        out.extend(self.cone.problems());
        if self.c0.len() != m + 1 {
            out.push(format!("offset table has {} entries, expected m + 1 = {}", self.c0.len(), m + 1));
        }
        if self.c_theta.shape() != (p, m + 1) {
            out.push(format!("parameter cost table is {:?}, expected ({p}, {})", self.c_theta.shape(), m + 1));
        }
        if self.b.shape() != (d, m + 1) {
            out.push(format!("right-hand side table is {:?}, expected ({d}, {})", self.b.shape(), m + 1));
        }
        if self.b_theta.len() != m + 1 || self.b_theta.iter().any(|bt| bt.shape() != (d, p)) {
            out.push(format!("parameter matrix table must hold {} matrices of shape ({d}, {p})", m + 1));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProgramData {
    /// Explicit data per admissible commutation, in search order.
    Table(Vec<(Commutation, ConicTemplate)>),
    Affine(AffineEncoding),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParametricProgram {
    pub name: String,
    pub p: usize,
    pub n: usize,
    pub m: usize,
    /// Disjoint groups of bit indices whose bits must sum to one.
    pub one_hot: Vec<Vec<usize>>,
    pub data: ProgramData,
}

impl ParametricProgram {
    pub fn is_admissible(&self, delta: &Commutation) -> bool {
        delta.len() == self.m
            && self
                .one_hot
                .iter()
                .all(|g| g.iter().filter(|&&i| i < self.m && delta.get(i)).count() == 1)
    }

    pub fn instantiate(&self, delta: &Commutation) -> Result<ConicTemplate, ProblemError> {
        if delta.len() != self.m {
            return Err(ProblemError::InadmissibleCommutation(format!(
                "commutation {delta} has length {}, expected {}",
                delta.len(),
                self.m
            )));
        }
        if !self.is_admissible(delta) {
            return Err(ProblemError::InadmissibleCommutation(format!(
                "commutation {delta} violates a one-hot group"
            )));
        }
        match &self.data {
            ProgramData::Affine(enc) => Ok(enc.instantiate(delta)),
            ProgramData::Table(rows) => rows
                .iter()
                .find(|(d, _)| d == delta)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| {
                    ProblemError::InadmissibleCommutation(format!("commutation {delta} has no data"))
                }),
        }
    }

    /// Solves the fixed-commutation program at `theta`; the reported value
    /// includes the parameter-dependent cost terms.
    pub fn solve_fixed(&self, theta: &Point, delta: &Commutation) -> Result<SolveOutcome, ProblemError> {
        if theta.len() != self.p {
            return Err(ProblemError::DimensionMismatch(format!(
                "parameter has {} entries, expected {}",
                theta.len(),
                self.p
            )));
        }
        let tpl = self.instantiate(delta)?;
        let (prob, offset) = tpl.at(theta);
        let mut out = conic::solve(&prob)?;
        if out.status == SolveStatus::Optimal {
            out.value = out.value.map(|v| v + offset);
        }
        Ok(out)
    }

    /// Number of admissible commutations.
    pub fn admissible_count(&self) -> u128 {
        match &self.data {
            ProgramData::Table(rows) => rows.iter().filter(|(d, _)| self.is_admissible(d)).count() as u128,
            ProgramData::Affine(_) => self.radices().iter().map(|&r| r as u128).product(),
        }
    }

    /// Digits of the mixed-radix enumeration: one per one-hot group, then
    /// one per free bit.
    fn radices(&self) -> Vec<usize> {
        let free = self.free_bits();
        self.one_hot.iter().map(|g| g.len()).chain(free.iter().map(|_| 2)).collect()
    }

    fn free_bits(&self) -> Vec<usize> {
        (0..self.m).filter(|i| !self.one_hot.iter().any(|g| g.contains(i))).collect()
    }

    /// All admissible commutations in deterministic order.
    pub fn admissible(&self) -> Vec<Commutation> {
        match &self.data {
            ProgramData::Table(rows) => {
                rows.iter().filter(|(d, _)| self.is_admissible(d)).map(|(d, _)| d.clone()).collect()
            }
            ProgramData::Affine(_) => {
                let radices = self.radices();
                if radices.contains(&0) {
                    return Vec::new();
                }
                let free = self.free_bits();
                let mut digits = vec![0usize; radices.len()];
                let mut out = Vec::new();
                loop {
                    let mut bits = vec![false; self.m];
                    for (g, group) in self.one_hot.iter().enumerate() {
                        bits[group[digits[g]]] = true;
                    }
                    for (k, &bit) in free.iter().enumerate() {
                        bits[bit] = digits[self.one_hot.len() + k] == 1;
                    }
                    out.push(Commutation::new(bits));
                    // increment, least significant digit last
                    let mut pos = radices.len();
                    loop {
                        if pos == 0 {
                            return out;
                        }
                        pos -= 1;
                        digits[pos] += 1;
                        if digits[pos] < radices[pos] {
                            break;
                        }
                        digits[pos] = 0;
                    }
                }
            }
        }
    }

    /// Consistency diagnostics; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.p == 0 {
            out.push("parameter dimension p must be positive".into());
        }
        let mut seen = vec![false; self.m];
        for (k, g) in self.one_hot.iter().enumerate() {
            if g.is_empty() {
                out.push(format!("one-hot group {k} is empty and can never sum to one (unsatisfiable)"));
            }
            for &i in g {
                if i >= self.m {
                    out.push(format!("one-hot group {k} references bit {i} but m = {} (unsatisfiable)", self.m));
                } else if seen[i] {
                    out.push(format!("bit {i} belongs to more than one one-hot group"));
                } else {
                    seen[i] = true;
                }
            }
        }
        match &self.data {
            ProgramData::Affine(enc) => {
                out.extend(enc.dimension_problems(self.p, self.n, self.m));
            }
            ProgramData::Table(rows) => {
                if rows.is_empty() {
                    out.push("data table is empty".into());
                }
                for (k, (d, t)) in rows.iter().enumerate() {
                    if d.len() != self.m {
                        out.push(format!("table entry {k} has a commutation of length {}", d.len()));
                    } else if !self.is_admissible(d) {
                        out.push(format!("table entry {k} ({d}) violates a one-hot group"));
                    }
                    if rows[..k].iter().any(|(e, _)| e == d) {
                        out.push(format!("table entry {k} ({d}) is duplicated"));
                    }
                    for msg in t.dimension_problems(self.n, self.p) {
                        out.push(format!("table entry {k}: {msg}"));
                    }
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        if self.admissible_count() == 0 {
            out.push("no admissible commutation exists".into());
        }
        // Probe the first few admissible commutations through instantiate.
        for delta in self.admissible().into_iter().take(16) {
            match self.instantiate(&delta) {
                Ok(t) => {
                    for msg in t.dimension_problems(self.n, self.p) {
                        out.push(format!("commutation {delta}: {msg}"));
                    }
                }
                Err(e) => out.push(format!("commutation {delta}: {e}")),
            }
        }
        out
    }
}
