//! Mixed-integer layer: full solves over the commutation, the common-vertex
//! feasibility search, and the cache of commutations seen feasible.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{self, ConeFactor, ConeKind, ConeSpec, ConicProblem, SolveStatus};
use crate::geometry::Point;
use crate::problem::{AffineEncoding, Commutation, ParametricProgram, ProblemError, ProgramData};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiError {
    #[error("search budget of {0} exhausted before the search completed")]
    Exhausted(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    /// Enumeration when the admissible set fits the budget, else
    /// branch-and-bound (affine encodings only).
    Auto,
    Enumeration,
    BranchAndBound,
}

#[derive(Clone, Debug)]
pub struct MiSettings {
    pub backend: Backend,
    /// Maximum number of commutations enumerated per search.
    pub enumeration_budget: usize,
    /// Maximum number of branch-and-bound nodes per search.
    pub node_budget: usize,
    /// Integrality tolerance of relaxed bits.
    pub int_tol: f64,
}

impl Default for MiSettings {
    fn default() -> Self {
        Self { backend: Backend::Auto, enumeration_budget: 1 << 22, node_budget: 100_000, int_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub delta: Commutation,
    pub hits: usize,
    /// Parameter at which the commutation was first found feasible.
    pub witness: Point,
}

/// Append-only set of commutations observed feasible, in insertion order.
#[derive(Debug, Default)]
pub struct CommutationCache {
    inner: Mutex<(Vec<CacheEntry>, HashMap<Commutation, usize>)>,
}

impl CommutationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, delta: &Commutation, witness: &Point) {
        let mut g = self.inner.lock().unwrap();
        let (entries, index) = &mut *g;
        match index.get(delta) {
            Some(&k) => entries[k].hits += 1,
            None => {
                index.insert(delta.clone(), entries.len());
                entries.push(CacheEntry { delta: delta.clone(), hits: 1, witness: witness.clone() });
            }
        }
    }

    pub fn deltas(&self) -> Vec<Commutation> {
        self.inner.lock().unwrap().0.iter().map(|e| e.delta.clone()).collect()
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.inner.lock().unwrap().0.clone()
    }

    pub fn contains(&self, delta: &Commutation) -> bool {
        self.inner.lock().unwrap().1.contains_key(delta)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of a fixed-commutation solve, as kept in the memo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedResult {
    pub status: SolveStatus,
    pub value: Option<f64>,
}

impl FixedResult {
    pub fn feasible(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinlpOutcome {
    /// `Optimal` or `Infeasible`.
    pub status: SolveStatus,
    pub value: Option<f64>,
    pub delta: Option<Commutation>,
}

/// Solver front end holding the cache and the memo of fixed solves.
#[derive(Debug)]
pub struct MiSolver<'a> {
    prog: &'a ParametricProgram,
    settings: MiSettings,
    cache: CommutationCache,
    memo: Mutex<HashMap<(Vec<u64>, Commutation), FixedResult>>,
    admissible: Option<Vec<Commutation>>,
}

fn key(theta: &Point) -> Vec<u64> {
    theta.iter().map(|v| v.to_bits()).collect()
}

impl<'a> MiSolver<'a> {
    pub fn new(prog: &'a ParametricProgram, settings: MiSettings) -> Self {
        let count = prog.admissible_count();
        let enumerate = match settings.backend {
            Backend::Enumeration => true,
            Backend::BranchAndBound => !matches!(prog.data, ProgramData::Affine(_)),
            Backend::Auto => {
                count <= settings.enumeration_budget as u128 || !matches!(prog.data, ProgramData::Affine(_))
            }
        };
        let admissible = enumerate.then(|| {
            let mut all = prog.admissible();
            all.truncate(settings.enumeration_budget.saturating_add(1));
            all
        });
        Self { prog, settings, cache: CommutationCache::new(), memo: Mutex::new(HashMap::new()), admissible }
    }

    pub fn program(&self) -> &ParametricProgram {
        self.prog
    }

    pub fn cache(&self) -> &CommutationCache {
        &self.cache
    }

    pub fn uses_enumeration(&self) -> bool {
        self.admissible.is_some()
    }

    /// Fixed-commutation solve with memoization; records feasible results in
    /// the cache.
    pub fn fixed(&self, theta: &Point, delta: &Commutation) -> Result<FixedResult, MiError> {
        let k = (key(theta), delta.clone());
        if let Some(r) = self.memo.lock().unwrap().get(&k) {
            return Ok(*r);
        }
        let out = self.prog.solve_fixed(theta, delta)?;
        if out.status == SolveStatus::NumericalFailure {
            log::warn!("numerical failure solving commutation {delta} at {:?}", theta.as_slice());
        }
        let r = FixedResult { status: out.status, value: out.value };
        if r.feasible() {
            self.cache.record(delta, theta);
        }
        self.memo.lock().unwrap().insert(k, r);
        Ok(r)
    }

    /// Cache first, then the remaining admissible commutations.
    fn search_order(&self) -> Result<Vec<Commutation>, MiError> {
        let all = self.admissible.as_ref().expect("enumeration backend");
        if all.len() > self.settings.enumeration_budget {
            return Err(MiError::Exhausted(self.settings.enumeration_budget));
        }
        let cached = self.cache.deltas();
        let mut order: Vec<Commutation> = cached.iter().filter(|d| self.prog.is_admissible(d)).cloned().collect();
        order.extend(all.iter().filter(|d| !self.cache.contains(d)).cloned());
        Ok(order)
    }

    /// Minimum over all admissible commutations of `V*_delta(theta)`.
    pub fn solve_minlp(&self, theta: &Point) -> Result<MinlpOutcome, MiError> {
        if self.admissible.is_none() {
            return self.branch_and_bound(std::slice::from_ref(theta), true, None).map(|r| r.into_minlp());
        }
        let mut best: Option<(f64, Commutation)> = None;
        for delta in self.search_order()? {
            let r = self.fixed(theta, &delta)?;
            if let Some(v) = r.value.filter(|_| r.feasible()) {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, delta));
                }
            }
        }
        Ok(match best {
            Some((v, d)) => MinlpOutcome { status: SolveStatus::Optimal, value: Some(v), delta: Some(d) },
            None => MinlpOutcome { status: SolveStatus::Infeasible, value: None, delta: None },
        })
    }

    /// First commutation (in search order) feasible at `theta`.
    pub fn find_feasible_commutation(&self, theta: &Point) -> Result<Option<Commutation>, MiError> {
        self.find_common_feasible_commutation(std::slice::from_ref(theta), None)
            .map(|r| r.map(|(d, _)| d))
    }

    /// A commutation other than `exclude` feasible at every vertex, with the
    /// per-vertex results. Vertices are checked in input order with early
    /// abort on the first infeasible one.
    pub fn find_common_feasible_commutation(
        &self,
        vertices: &[Point],
        exclude: Option<&Commutation>,
    ) -> Result<Option<(Commutation, Vec<FixedResult>)>, MiError> {
        if self.admissible.is_none() {
            let found = self.branch_and_bound(vertices, false, exclude)?;
            return Ok(match found.delta {
                Some(d) => {
                    let rs = vertices.iter().map(|v| self.fixed(v, &d)).collect::<Result<Vec<_>, _>>()?;
                    rs.iter().all(|r| r.feasible()).then_some((d, rs))
                }
                None => None,
            });
        }
        'outer: for delta in self.search_order()? {
            if exclude == Some(&delta) {
                continue;
            }
            let mut rs = Vec::with_capacity(vertices.len());
            for v in vertices {
                let r = self.fixed(v, &delta)?;
                if !r.feasible() {
                    continue 'outer;
                }
                rs.push(r);
            }
            return Ok(Some((delta, rs)));
        }
        Ok(None)
    }

    /// Best-first branch-and-bound over the relaxed affine encoding. With
    /// `optimize = false` it searches for any commutation feasible at all
    /// `thetas`.
    fn branch_and_bound(
        &self,
        thetas: &[Point],
        optimize: bool,
        exclude: Option<&Commutation>,
    ) -> Result<BnbResult, MiError> {
        let ProgramData::Affine(enc) = &self.prog.data else {
            unreachable!("branch-and-bound requires the affine encoding")
        };
        let m = self.prog.m;
        let mut heap = BinaryHeap::new();
        heap.push(Node { bound: f64::NEG_INFINITY, seq: 0, fix: vec![None; m] });
        let mut seq = 1usize;
        let mut incumbent: Option<(f64, Commutation)> = None;
        let mut nodes = 0usize;
        let cuts: Vec<&Commutation> = exclude.into_iter().collect();
        while let Some(node) = heap.pop() {
            if let Some((inc, _)) = &incumbent {
                if !optimize || node.bound >= *inc - 1e-9 {
                    continue;
                }
            }
            nodes += 1;
            if nodes > self.settings.node_budget {
                return Err(MiError::Exhausted(self.settings.node_budget));
            }
            let (prob, offset) = relaxation(self.prog, enc, thetas, &node.fix, optimize, &cuts);
            let out = conic::solve(&prob).map_err(ProblemError::from)?;
            let (bound, deltas) = match out.status {
                SolveStatus::Infeasible => continue,
                SolveStatus::Optimal => {
                    let x = out.x.as_ref().unwrap();
                    let nx = x.len() - m;
                    (out.value.unwrap() + offset, Some(x.rows(nx, m).into_owned()))
                }
                // Without a bound the node must be branched on.
                SolveStatus::Unbounded | SolveStatus::NumericalFailure => (f64::NEG_INFINITY, None),
            };
            // Branch on the most fractional free bit (first free bit when the
            // relaxation gave no point).
            let branch = match &deltas {
                Some(dv) => (0..m)
                    .filter(|&j| node.fix[j].is_none())
                    .map(|j| (j, (dv[j] - dv[j].round()).abs()))
                    .filter(|(_, f)| *f > self.settings.int_tol)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(j, _)| j),
                None => (0..m).find(|&j| node.fix[j].is_none()),
            };
            match branch {
                Some(j) => {
                    for val in [true, false] {
                        let mut fix = node.fix.clone();
                        fix[j] = Some(val);
                        heap.push(Node { bound, seq, fix });
                        seq += 1;
                    }
                }
                None => {
                    let bits: Vec<bool> = match &deltas {
                        Some(dv) => (0..m).map(|j| node.fix[j].unwrap_or(dv[j] > 0.5)).collect(),
                        None => node.fix.iter().map(|f| f.unwrap_or(false)).collect(),
                    };
                    let delta = Commutation::new(bits);
                    if !self.prog.is_admissible(&delta) || exclude == Some(&delta) {
                        continue;
                    }
                    let mut feasible = true;
                    let mut value = 0.0;
                    for t in thetas {
                        let r = self.fixed(t, &delta)?;
                        if !r.feasible() {
                            feasible = false;
                            break;
                        }
                        value = r.value.unwrap();
                    }
                    if !feasible {
                        // Integral relaxation point but the exact solve disagrees
                        // (tolerance effect); fall back to fixing every bit.
                        if node.fix.iter().any(|f| f.is_none()) {
                            let fix: Vec<Option<bool>> = delta.bits().iter().map(|&b| Some(b)).collect();
                            if fix != node.fix {
                                heap.push(Node { bound, seq, fix });
                                seq += 1;
                            }
                        }
                        continue;
                    }
                    if !optimize {
                        return Ok(BnbResult { delta: Some(delta), value: None });
                    }
                    if incumbent.as_ref().is_none_or(|(b, _)| value < *b) {
                        incumbent = Some((value, delta));
                    }
                }
            }
        }
        Ok(match incumbent {
            Some((v, d)) => BnbResult { delta: Some(d), value: Some(v) },
            None => BnbResult { delta: None, value: None },
        })
    }
}

struct BnbResult {
    delta: Option<Commutation>,
    value: Option<f64>,
}

impl BnbResult {
    fn into_minlp(self) -> MinlpOutcome {
        match self.delta {
            Some(d) => MinlpOutcome { status: SolveStatus::Optimal, value: self.value, delta: Some(d) },
            None => MinlpOutcome { status: SolveStatus::Infeasible, value: None, delta: None },
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    fix: Vec<Option<bool>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Max-heap on (-bound, -seq): smallest bound first, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

/// Continuous relaxation over `(x_1, .., x_k, delta)` with one copy of the
/// continuous variables per parameter point and `delta` in `[0, 1]^m`.
fn relaxation(
    prog: &ParametricProgram,
    enc: &AffineEncoding,
    thetas: &[Point],
    fix: &[Option<bool>],
    with_cost: bool,
    cuts: &[&Commutation],
) -> (ConicProblem, f64) {
    let m = prog.m;
    let n = enc.c.len();
    let d = enc.a.nrows();
    let k = thetas.len();
    let nv = k * n + m;
    let eq_rows = prog.one_hot.len() + fix.iter().filter(|f| f.is_some()).count();
    let ineq_rows = 2 * m + cuts.len();
    let rows = k * d + eq_rows + ineq_rows;
    let mut a = DMatrix::zeros(rows, nv);
    let mut b = DVector::zeros(rows);
    let mut c = DVector::zeros(nv);
    let mut offset = 0.0;
    let mut factors: Vec<ConeFactor> = Vec::new();

    for (v, theta) in thetas.iter().enumerate() {
        let r0 = v * d;
        a.view_mut((r0, v * n), (d, n)).copy_from(&enc.a);
        let base = enc.b.column(0) + &enc.b_theta[0] * theta;
        b.rows_mut(r0, d).copy_from(&base);
        for j in 0..m {
            let g = enc.b.column(j + 1) + &enc.b_theta[j + 1] * theta;
            a.view_mut((r0, k * n + j), (d, 1)).copy_from(&(-g));
        }
        factors.extend(enc.cone.factors.iter().copied());
        if with_cost && v == 0 {
            c.rows_mut(0, n).copy_from(&enc.c);
            offset = enc.c0[0] + enc.c_theta.column(0).dot(theta);
            for j in 0..m {
                c[k * n + j] = enc.c0[j + 1] + enc.c_theta.column(j + 1).dot(theta);
            }
        }
    }
    let mut r = k * d;
    for g in &prog.one_hot {
        for &j in g {
            a[(r, k * n + j)] = 1.0;
        }
        b[r] = 1.0;
        r += 1;
    }
    for (j, f) in fix.iter().enumerate() {
        if let Some(val) = f {
            a[(r, k * n + j)] = 1.0;
            b[r] = if *val { 1.0 } else { 0.0 };
            r += 1;
        }
    }
    factors.push(ConeFactor { kind: ConeKind::Zero, size: eq_rows });
    for j in 0..m {
        a[(r, k * n + j)] = 1.0;
        b[r] = 1.0;
        a[(r + 1, k * n + j)] = -1.0;
        r += 2;
    }
    // No-good cut: sum_{e_j = 1} (1 - delta_j) + sum_{e_j = 0} delta_j >= 1.
    for cut in cuts {
        let ones = cut.bits().iter().filter(|&&x| x).count() as f64;
        for (j, &bit) in cut.bits().iter().enumerate() {
            a[(r, k * n + j)] = if bit { 1.0 } else { -1.0 };
        }
        b[r] = ones - 1.0;
        r += 1;
    }
    factors.push(ConeFactor { kind: ConeKind::NonnegOrthant, size: ineq_rows });
    let cone = ConeSpec::new(factors).compact();
    (ConicProblem { c, a, b, cone }, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{toy1d, toy1d_offset, toy2d_with_offset};
    use approx::assert_abs_diff_eq;

    fn th(v: f64) -> Point {
        DVector::from_element(1, v)
    }

    fn d(s: &str) -> Commutation {
        s.parse().unwrap()
    }

    #[test]
    fn minlp_examples() {
        let off = toy1d_offset();
        let s = MiSolver::new(&off.program, MiSettings::default());
        let r = s.solve_minlp(&th(0.1)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.value.unwrap(), 0.01, epsilon = 1e-7);
        assert_eq!(r.delta, Some(d("0")));

        let toy = toy1d();
        let s = MiSolver::new(&toy.program, MiSettings::default());
        let r = s.solve_minlp(&th(0.9)).unwrap();
        assert_abs_diff_eq!(r.value.unwrap(), 0.81, epsilon = 1e-7);
        assert_eq!(r.delta, Some(d("0")));
        assert_eq!(s.solve_minlp(&th(2.0)).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn common_feasible_examples() {
        let toy = toy1d();
        let s = MiSolver::new(&toy.program, MiSettings::default());
        let r = s.find_common_feasible_commutation(&[th(-1.0), th(0.0)], None).unwrap();
        assert_eq!(r.unwrap().0, d("1"));
        assert!(s.find_common_feasible_commutation(&[th(-1.0), th(1.0)], None).unwrap().is_none());
        let r = s.find_common_feasible_commutation(&[th(0.0), th(0.1)], Some(&d("1"))).unwrap();
        assert_eq!(r.unwrap().0, d("0"));
    }

    #[test]
    fn cache_is_append_only_and_sound() {
        let toy = toy1d();
        let s = MiSolver::new(&toy.program, MiSettings::default());
        s.solve_minlp(&th(0.5)).unwrap();
        s.solve_minlp(&th(-0.5)).unwrap();
        let entries = s.cache().entries();
        assert_eq!(entries.len(), 2);
        for e in entries {
            assert!(toy.program.solve_fixed(&e.witness, &e.delta).unwrap().is_optimal());
        }
    }

    #[test]
    fn branch_and_bound_agrees_with_enumeration() {
        let inst = toy2d_with_offset(0.05);
        let enumerate = MiSolver::new(&inst.program, MiSettings { backend: Backend::Enumeration, ..Default::default() });
        let bnb = MiSolver::new(&inst.program, MiSettings { backend: Backend::BranchAndBound, ..Default::default() });
        assert!(!bnb.uses_enumeration());
        for (a, b) in [(0.1, 0.3), (-0.9, 0.2), (0.9, -0.9), (0.0, 0.0), (-0.15, 0.5)] {
            let t = DVector::from_row_slice(&[a, b]);
            let e = enumerate.solve_minlp(&t).unwrap();
            let r = bnb.solve_minlp(&t).unwrap();
            assert_eq!(e.status, r.status);
            assert_abs_diff_eq!(e.value.unwrap(), r.value.unwrap(), epsilon = 1e-7);
            let verts = [t.clone(), DVector::from_row_slice(&[a * 0.5, b])];
            let ce = enumerate.find_common_feasible_commutation(&verts, None).unwrap();
            let cb = bnb.find_common_feasible_commutation(&verts, None).unwrap();
            assert_eq!(ce.is_some(), cb.is_some());
        }
        let far = [DVector::from_row_slice(&[-1.0, 0.0]), DVector::from_row_slice(&[1.0, 0.0])];
        assert!(bnb.find_common_feasible_commutation(&far, None).unwrap().is_none());
        let near = [DVector::from_row_slice(&[0.0, 0.0]), DVector::from_row_slice(&[0.1, 0.0])];
        let first = bnb.find_common_feasible_commutation(&near, None).unwrap().unwrap().0;
        let other = bnb.find_common_feasible_commutation(&near, Some(&first)).unwrap().unwrap().0;
        assert_ne!(first, other);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let toy = toy1d();
        let s = MiSolver::new(
            &toy.program,
            MiSettings { backend: Backend::Enumeration, enumeration_budget: 1, ..Default::default() },
        );
        assert_eq!(s.solve_minlp(&th(0.0)), Err(MiError::Exhausted(1)));
    }
}
