//! Primal-dual interior-point solver for linear and second-order cone programs
//!
//! ```text
//! minimize    c'x
//! subject to  A x + s = b,   s in K
//! ```
//!
//! using a homogeneous self-dual embedding with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector. Infeasibility and unboundedness are reported
//! through certificates of the embedding rather than as errors.

mod cones;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use cones::{ConeFactor, ConeKind, ConeSpec};
use cones::{identity, jordan_div, jordan_product, max_step, Scaling};

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cone: ConeSpec,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Primal point when `Optimal`.
    pub x: Option<DVector<f64>>,
    /// `c'x` when `Optimal`.
    pub value: Option<f64>,
    /// Dual multipliers when `Optimal`, or the certificate when `Infeasible`.
    pub z: Option<DVector<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn status_only(status: SolveStatus, iterations: usize) -> Self {
        Self { status, x: None, value: None, z: None, residuals: Residuals::default(), iterations }
    }
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub tol_infeas: f64,
    pub static_reg: f64,
    pub refine_steps: usize,
    pub equilibrate: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-8,
            static_reg: 1e-10,
            refine_steps: 4,
            equilibrate: true,
        }
    }
}

impl ConicProblem {
    pub fn check(&self) -> Result<(), ConicError> {
        let (d, n) = self.a.shape();
        if self.c.len() != n {
            return Err(ConicError::DimensionMismatch(format!("c has {} entries, A has {n} columns", self.c.len())));
        }
        if self.b.len() != d {
            return Err(ConicError::DimensionMismatch(format!("b has {} entries, A has {d} rows", self.b.len())));
        }
        if self.cone.dim() != d {
            return Err(ConicError::DimensionMismatch(format!("cone covers {} rows, A has {d}", self.cone.dim())));
        }
        if let Some(p) = self.cone.problems().into_iter().next() {
            return Err(ConicError::DimensionMismatch(p));
        }
        Ok(())
    }
}

pub fn solve(prob: &ConicProblem) -> Result<SolveOutcome, ConicError> {
    solve_with(prob, &SolverSettings::default())
}

pub fn solve_with(prob: &ConicProblem, settings: &SolverSettings) -> Result<SolveOutcome, ConicError> {
    prob.check()?;
    let (reduced, kept) = match presolve(prob) {
        Presolved::Infeasible(z) => {
            let mut out = SolveOutcome::status_only(SolveStatus::Infeasible, 0);
            out.z = Some(z);
            return Ok(out);
        }
        Presolved::Reduced(r, kept) => (r, kept),
    };
    let mut out = if reduced.a.nrows() == 0 {
        solve_unconstrained(&reduced)
    } else {
        Ipm::new(&reduced, settings).run()
    };
    if let Some(z) = out.z.take() {
        let mut full = DVector::zeros(prob.b.len());
        for (k, &i) in kept.iter().enumerate() {
            full[i] = z[k];
        }
        out.z = Some(full);
    }
    Ok(out)
}

enum Presolved {
    Reduced(ConicProblem, Vec<usize>),
    Infeasible(DVector<f64>),
}

/// Drops rows of `A` that are identically zero, checking `b` against the cone
/// for them directly.
fn presolve(prob: &ConicProblem) -> Presolved {
    let mut keep_rows = Vec::new();
    let mut factors = Vec::new();
    for (kind, r) in prob.cone.blocks() {
        let empty = |i: usize| prob.a.row(i).iter().all(|&v| v == 0.0);
        match kind {
            ConeKind::Zero | ConeKind::NonnegOrthant => {
                let mut kept = 0;
                for i in r {
                    if empty(i) {
                        let bad = match kind {
                            ConeKind::Zero => prob.b[i] != 0.0,
                            _ => prob.b[i] < 0.0,
                        };
                        if bad {
                            let mut z = DVector::zeros(prob.b.len());
                            z[i] = if prob.b[i] < 0.0 { 1.0 } else { -1.0 };
                            return Presolved::Infeasible(z);
                        }
                    } else {
                        keep_rows.push(i);
                        kept += 1;
                    }
                }
                if kept > 0 {
                    factors.push(ConeFactor { kind, size: kept });
                }
            }
            ConeKind::SecondOrder => {
                if r.clone().all(empty) {
                    let bb = prob.b.rows_range(r.clone());
                    if bb[0] < bb.rows_range(1..).norm() {
                        // z = (||b1||, -b1) / ||b1|| gives b'z < 0.
                        let mut z = DVector::zeros(prob.b.len());
                        let nb = bb.rows_range(1..).norm();
                        z[r.start] = 1.0;
                        for i in r.start + 1..r.end {
                            z[i] = -prob.b[i] / nb;
                        }
                        return Presolved::Infeasible(z);
                    }
                } else {
                    keep_rows.extend(r.clone());
                    factors.push(ConeFactor { kind, size: r.len() });
                }
            }
        }
    }
    let a = prob.a.select_rows(keep_rows.iter());
    let b = DVector::from_iterator(keep_rows.len(), keep_rows.iter().map(|&i| prob.b[i]));
    Presolved::Reduced(
        ConicProblem { c: prob.c.clone(), a, b, cone: ConeSpec::new(factors).compact() },
        keep_rows,
    )
}

fn solve_unconstrained(prob: &ConicProblem) -> SolveOutcome {
    if prob.c.iter().all(|&v| v == 0.0) {
        let n = prob.c.len();
        SolveOutcome {
            status: SolveStatus::Optimal,
            x: Some(DVector::zeros(n)),
            value: Some(0.0),
            z: Some(DVector::zeros(0)),
            residuals: Residuals::default(),
            iterations: 0,
        }
    } else {
        SolveOutcome::status_only(SolveStatus::Unbounded, 0)
    }
}

/// Symmetric Ruiz equilibration with one shared row factor per SOC block.
fn equilibrate(prob: &ConicProblem) -> (DVector<f64>, DVector<f64>) {
    let (d, n) = prob.a.shape();
    let mut dr = DVector::from_element(d, 1.0);
    let mut ec = DVector::from_element(n, 1.0);
    let mut a = prob.a.clone();
    let blocks = prob.cone.blocks();
    for _ in 0..15 {
        let mut row_f = DVector::from_element(d, 1.0);
        for (kind, r) in &blocks {
            let norms: Vec<f64> = r.clone().map(|i| a.row(i).amax()).collect();
            if *kind == ConeKind::SecondOrder {
                let m = norms.iter().cloned().fold(0.0, f64::max);
                let f = if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 };
                r.clone().for_each(|i| row_f[i] = f);
            } else {
                for (k, i) in r.clone().enumerate() {
                    row_f[i] = if norms[k] > 0.0 { 1.0 / norms[k].sqrt() } else { 1.0 };
                }
            }
        }
        let col_f = DVector::from_fn(n, |j, _| {
            let m = a.column(j).amax();
            if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }
        });
        for i in 0..d {
            for j in 0..n {
                a[(i, j)] *= row_f[i] * col_f[j];
            }
        }
        dr.component_mul_assign(&row_f);
        ec.component_mul_assign(&col_f);
    }
    let clamp = |v: &mut DVector<f64>| v.iter_mut().for_each(|x| *x = x.clamp(1e-4, 1e4));
    clamp(&mut dr);
    clamp(&mut ec);
    (dr, ec)
}

struct Ipm<'a> {
    orig: &'a ConicProblem,
    prob: ConicProblem,
    dr: DVector<f64>,
    ec: DVector<f64>,
    settings: &'a SolverSettings,
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

enum Check {
    Continue,
    Done(SolveOutcome),
}

impl<'a> Ipm<'a> {
    fn new(orig: &'a ConicProblem, settings: &'a SolverSettings) -> Self {
        let (d, n) = orig.a.shape();
        let (dr, ec) = if settings.equilibrate {
            equilibrate(orig)
        } else {
            (DVector::from_element(d, 1.0), DVector::from_element(n, 1.0))
        };
        let mut a = orig.a.clone();
        for i in 0..d {
            for j in 0..n {
                a[(i, j)] *= dr[i] * ec[j];
            }
        }
        let prob = ConicProblem {
            c: orig.c.component_mul(&ec),
            a,
            b: orig.b.component_mul(&dr),
            cone: orig.cone.clone(),
        };
        Self { orig, prob, dr, ec, settings }
    }

    fn unscale(&self, it: &Iterate) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x = it.x.component_mul(&self.ec);
        let s = it.s.component_div(&self.dr);
        let z = it.z.component_mul(&self.dr);
        (x, s, z)
    }

    fn run(&self) -> SolveOutcome {
        let p = &self.prob;
        let (d, n) = p.a.shape();
        let spec = &p.cone;
        let e = identity(spec);
        let nu = spec.degree() as f64;
        let mut it = Iterate { x: DVector::zeros(n), s: e.clone(), z: e.clone(), tau: 1.0, kappa: 1.0 };
        let mut last_res = Residuals::default();

        for iter in 0..self.settings.max_iter {
            match self.check(&it, iter) {
                Check::Done(out) => return out,
                Check::Continue => {}
            }
            last_res = self.residuals(&it);

            let r_x = p.a.transpose() * &it.z + &p.c * it.tau;
            let r_z = &p.a * &it.x + &it.s - &p.b * it.tau;
            let r_tau = p.c.dot(&it.x) + p.b.dot(&it.z) + it.kappa;
            let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (nu + 1.0);

            let Some(sc) = Scaling::new(spec, &it.s, &it.z) else {
                return self.failure(iter, last_res);
            };
            let mut kkt = DMatrix::zeros(n + d, n + d);
            kkt.view_mut((0, n), (n, d)).copy_from(&p.a.transpose());
            kkt.view_mut((n, 0), (d, n)).copy_from(&p.a);
            sc.fill_neg_w2(&mut kkt, n);
            let Some(solver) = KktSolver::new(kkt, n, self.settings) else {
                return self.failure(iter, last_res);
            };

            let mut rhs1 = DVector::zeros(n + d);
            rhs1.rows_mut(0, n).copy_from(&(-&p.c));
            rhs1.rows_mut(n, d).copy_from(&p.b);
            let sol1 = solver.solve(&rhs1);
            let (x1, z1) = (sol1.rows(0, n).into_owned(), sol1.rows(n, d).into_owned());

            let lambda = &sc.lambda;
            let direction = |eta: f64, r_s: &DVector<f64>, r_kappa: f64| {
                let ls = jordan_div(spec, lambda, r_s);
                let wls = sc.apply_w(&ls);
                let mut rhs2 = DVector::zeros(n + d);
                rhs2.rows_mut(0, n).copy_from(&(-&r_x * eta));
                rhs2.rows_mut(n, d).copy_from(&(-&r_z * eta + &wls));
                let sol2 = solver.solve(&rhs2);
                let (x2, z2) = (sol2.rows(0, n).into_owned(), sol2.rows(n, d).into_owned());
                let num = -eta * r_tau + r_kappa / it.tau - p.c.dot(&x2) - p.b.dot(&z2);
                let den = p.c.dot(&x1) + p.b.dot(&z1) - it.kappa / it.tau;
                let dtau = num / den;
                let dx = x2 + &x1 * dtau;
                let dz = z2 + &z1 * dtau;
                // ds = -W (lambda \ r_s) - W^2 dz
                let ds = -(wls + sc.apply_w(&sc.apply_w(&dz)));
                let ds = zero_rows(spec, ds);
                let dkappa = -(r_kappa + it.kappa * dtau) / it.tau;
                (dx, ds, dz, dtau, dkappa)
            };

            // Predictor.
            let rs_aff = jordan_product(spec, lambda, lambda);
            let (_, ds_a, dz_a, dtau_a, dkappa_a) = direction(1.0, &rs_aff, it.kappa * it.tau);
            let alpha_a = self.step(&it, &ds_a, &dz_a, dtau_a, dkappa_a, 1.0);
            let sigma = (1.0 - alpha_a).powi(3).clamp(0.0, 1.0);

            // Corrector.
            let corr = jordan_product(spec, &sc.apply_winv(&ds_a), &sc.apply_w(&dz_a));
            let rs = rs_aff + corr - &e * (sigma * mu);
            let rk = it.kappa * it.tau + dkappa_a * dtau_a - sigma * mu;
            let (dx, ds, dz, dtau, dkappa) = direction(1.0 - sigma, &rs, rk);
            let alpha = 0.99 * self.step(&it, &ds, &dz, dtau, dkappa, 1.0 / 0.99);
            let alpha = alpha.min(1.0);
            log::trace!("iter {iter} alpha {alpha:.3e} sigma {sigma:.3e} mu {mu:.3e} tau {:.3e} kappa {:.3e} res {:?}", it.tau, it.kappa, last_res);
            if !(alpha.is_finite()) || alpha < 1e-12 {
                return self.failure(iter, last_res);
            }

            it.x += dx * alpha;
            it.s += ds * alpha;
            it.z += dz * alpha;
            it.tau += dtau * alpha;
            it.kappa += dkappa * alpha;
            if !(it.tau > 0.0 && it.kappa > 0.0) || it.x.iter().any(|v| !v.is_finite()) {
                return self.failure(iter, last_res);
            }
        }
        match self.check(&it, self.settings.max_iter) {
            Check::Done(out) => out,
            Check::Continue => self.failure(self.settings.max_iter, last_res),
        }
    }

    fn failure(&self, iterations: usize, residuals: Residuals) -> SolveOutcome {
        let mut out = SolveOutcome::status_only(SolveStatus::NumericalFailure, iterations);
        out.residuals = residuals;
        out
    }

    fn step(&self, it: &Iterate, ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64, cap: f64) -> f64 {
        let spec = &self.prob.cone;
        let mut a = max_step(spec, &it.s, ds, cap);
        a = a.min(max_step(spec, &it.z, dz, cap));
        if dtau < 0.0 {
            a = a.min(-it.tau / dtau);
        }
        if dkappa < 0.0 {
            a = a.min(-it.kappa / dkappa);
        }
        a
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let o = self.orig;
        let (x, s, z) = self.unscale(it);
        let (x, s, z) = (x / it.tau, s / it.tau, z / it.tau);
        let ax = &o.a * &x;
        let atz = o.a.transpose() * &z;
        let pres = (&ax + &s - &o.b).amax() / (1.0 + o.b.amax().max(ax.amax()).max(s.amax()));
        let dres = (&atz + &o.c).amax() / (1.0 + o.c.amax().max(atz.amax()));
        let pc = o.c.dot(&x);
        let dc = -o.b.dot(&z);
        let gap = (pc - dc).abs() / (1.0 + pc.abs().min(dc.abs()));
        Residuals { primal: pres, dual: dres, gap }
    }

    fn check(&self, it: &Iterate, iter: usize) -> Check {
        let o = self.orig;
        let st = self.settings;
        let res = self.residuals(it);
        let (x, s, z) = self.unscale(it);
        if res.primal <= st.tol_feas && res.dual <= st.tol_feas && res.gap <= st.tol_gap {
            let xs = x / it.tau;
            let value = o.c.dot(&xs);
            return Check::Done(SolveOutcome {
                status: SolveStatus::Optimal,
                x: Some(xs),
                value: Some(value),
                z: Some(z / it.tau),
                residuals: res,
                iterations: iter,
            });
        }
        let btz = o.b.dot(&z);
        if btz < 0.0 {
            let atz = (o.a.transpose() * &z).amax();
            if atz <= st.tol_infeas * (-btz) {
                let mut out = SolveOutcome::status_only(SolveStatus::Infeasible, iter);
                out.z = Some(z / (-btz));
                out.residuals = res;
                return Check::Done(out);
            }
        }
        let ctx = o.c.dot(&x);
        if ctx < 0.0 {
            let axs = (&o.a * &x + &s).amax();
            if axs <= st.tol_infeas * (-ctx) {
                let mut out = SolveOutcome::status_only(SolveStatus::Unbounded, iter);
                out.residuals = res;
                return Check::Done(out);
            }
        }
        Check::Continue
    }
}

fn zero_rows(spec: &ConeSpec, mut v: DVector<f64>) -> DVector<f64> {
    for (kind, r) in spec.blocks() {
        if kind == ConeKind::Zero {
            r.for_each(|i| v[i] = 0.0);
        }
    }
    v
}

/// Dense factorization of the regularized quasi-definite KKT matrix with
/// iterative refinement against the unregularized one.
struct KktSolver {
    k: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    refine: usize,
}

impl KktSolver {
    fn new(k: DMatrix<f64>, n: usize, settings: &SolverSettings) -> Option<Self> {
        let dim = k.nrows();
        let scale = k.view((n, 0), (dim - n, n)).amax().max(1.0);
        let eps = settings.static_reg * scale;
        let mut reg = k.clone();
        for i in 0..dim {
            reg[(i, i)] += if i < n { eps } else { -eps };
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { k, lu, refine: settings.refine_steps })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
        for _ in 0..self.refine {
            let r = rhs - &self.k * &x;
            if r.amax() <= 1e-14 * (1.0 + rhs.amax()) {
                break;
            }
            if let Some(dx) = self.lu.solve(&r) {
                x += dx;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lp(c: &[f64], a: &[&[f64]], b: &[f64]) -> ConicProblem {
        let n = c.len();
        let d = b.len();
        ConicProblem {
            c: DVector::from_row_slice(c),
            a: DMatrix::from_fn(d, n, |i, j| a[i][j]),
            b: DVector::from_row_slice(b),
            cone: ConeSpec::new(vec![ConeSpec::nonneg(d)]),
        }
    }

    #[test]
    fn min_x_with_lower_bound() {
        // x >= 1  <=>  -x + s = -1
        let out = solve(&lp(&[1.0], &[&[-1.0]], &[-1.0])).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(out.value.unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn soc_norm() {
        // variables (t); rows: -t + s0 = 0, s1 = 3, s2 = 4
        let prob = ConicProblem {
            c: DVector::from_row_slice(&[1.0]),
            a: DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 0.0]),
            b: DVector::from_row_slice(&[0.0, 3.0, 4.0]),
            cone: ConeSpec::new(vec![ConeSpec::soc(3)]),
        };
        let out = solve(&prob).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(out.value.unwrap(), 5.0, epsilon = 1e-6);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x >= 1 and -x >= 0
        let out = solve(&lp(&[0.0], &[&[-1.0], &[1.0]], &[-1.0, 0.0])).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        let z = out.z.unwrap();
        assert!(z.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn unbounded_lp() {
        // min -x s.t. x >= 0
        let out = solve(&lp(&[-1.0], &[&[-1.0]], &[0.0])).unwrap();
        assert_eq!(out.status, SolveStatus::Unbounded);
    }

    #[test]
    fn equality_rows() {
        // min x + y s.t. x + 2y = 4, x, y >= 0 -> y = 2, value 2
        let prob = ConicProblem {
            c: DVector::from_row_slice(&[1.0, 1.0]),
            a: DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.0, 0.0, -1.0]),
            b: DVector::from_row_slice(&[4.0, 0.0, 0.0]),
            cone: ConeSpec::new(vec![ConeSpec::zero(1), ConeSpec::nonneg(2)]),
        };
        let out = solve(&prob).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(out.value.unwrap(), 2.0, epsilon = 1e-7);
    }

    #[test]
    fn empty_row_presolve() {
        // 0*x + s = -1 with s >= 0 is infeasible without iterating.
        let out = solve(&lp(&[1.0], &[&[0.0], &[-1.0]], &[-1.0, 0.0])).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn dimension_errors() {
        let mut p = lp(&[1.0], &[&[-1.0]], &[-1.0]);
        p.cone = ConeSpec::new(vec![ConeSpec::nonneg(2)]);
        assert!(solve(&p).is_err());
    }
}
