//! Affine over-approximator and the convex programs over a cell behind the
//! error bounds.

use nalgebra::{DMatrix, DVector};

use super::Phase2Error;
use crate::conic::{self, ConeSpec, ConicProblem, SolveStatus};
use crate::geometry::{GeometryError, Point, Simplex, MEMBERSHIP_TOL};
use crate::mi::MiSolver;
use crate::problem::{Commutation, ConicTemplate};

/// Interpolant of a fixed commutation's optimal values at the vertices of
/// a simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct OverApproximator {
    simplex: Simplex,
    values: Vec<f64>,
}

impl OverApproximator {
    pub fn new(simplex: Simplex, values: Vec<f64>) -> Result<Self, Phase2Error> {
        if values.len() != simplex.vertices().len() {
            return Err(Phase2Error::InvalidInput(format!(
                "{} vertex values for {} vertices",
                values.len(),
                simplex.vertices().len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Phase2Error::InvalidInput("vertex values must be finite".into()));
        }
        Ok(Self { simplex, values })
    }

    pub fn simplex(&self) -> &Simplex {
        &self.simplex
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, theta: &Point) -> Result<f64, GeometryError> {
        let bc = self.simplex.barycentric(theta)?;
        if bc.min_weight() < MEMBERSHIP_TOL {
            return Err(GeometryError::PointOutside);
        }
        Ok(bc.alpha.iter().zip(&self.values).map(|(a, v)| a * v).sum())
    }
}

pub fn over_approx_value(oa: &OverApproximator, theta: &Point) -> Result<f64, GeometryError> {
    oa.value(theta)
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum HullSolve {
    Optimal { value: f64, theta: Point },
    Infeasible,
    /// Unbounded below or not solved reliably.
    Unresolved(SolveStatus),
}

/// Minimizes `f(theta, x) + w' alpha` over `x` feasible for `tpl` and
/// `theta = sum alpha_i points_i` with `alpha` in the unit simplex.
pub(crate) fn hull_program(tpl: &ConicTemplate, points: &[Point], w: &[f64]) -> Result<HullSolve, Phase2Error> {
    let n = tpl.n();
    let k = points.len();
    let d = tpl.rows();
    let p = tpl.p();
    let f = DMatrix::from_fn(p, k, |i, j| points[j][i]);

    let mut a = DMatrix::zeros(1 + d + k, n + k);
    let mut b = DVector::zeros(1 + d + k);
    a.view_mut((0, n), (1, k)).fill(1.0);
    b[0] = 1.0;
    a.view_mut((1, 0), (d, n)).copy_from(&tpl.a);
    a.view_mut((1, n), (d, k)).copy_from(&(-&tpl.b_theta * &f));
    b.rows_mut(1, d).copy_from(&tpl.b);
    for j in 0..k {
        a[(1 + d + j, n + j)] = -1.0;
    }
    let mut c = DVector::zeros(n + k);
    c.rows_mut(0, n).copy_from(&tpl.c);
    let ctheta = f.transpose() * &tpl.c_theta;
    for j in 0..k {
        c[n + j] = ctheta[j] + w[j];
    }
    let mut factors = vec![ConeSpec::zero(1)];
    factors.extend(tpl.cone.factors.iter().copied());
    factors.push(ConeSpec::nonneg(k));
    let prob = ConicProblem { c, a, b, cone: ConeSpec::new(factors) };
    let out = conic::solve(&prob)?;
    Ok(match out.status {
        SolveStatus::Optimal => {
            let x = out.x.expect("optimal outcome carries a point");
            let mut alpha: Vec<f64> = (0..k).map(|j| x[n + j].max(0.0)).collect();
            let s: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|v| *v /= s);
            let theta = &f * DVector::from_vec(alpha);
            HullSolve::Optimal { value: out.value.unwrap() + tpl.c0, theta }
        }
        SolveStatus::Infeasible => HullSolve::Infeasible,
        s => HullSolve::Unresolved(s),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundStatus {
    Bounded,
    /// No competitor is feasible anywhere on the cell.
    NoCompetitor,
    /// Relative bound skipped: the cell minimum of the leaf's value is not
    /// positive enough to divide by.
    DenominatorDegenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorBounds {
    /// `-inf` under `NoCompetitor`.
    pub e_abs: f64,
    pub e_rel: Option<f64>,
    pub arg_theta: Option<Point>,
    pub arg_delta: Option<Commutation>,
    pub status: BoundStatus,
}

/// Largest gap between the interpolant and a competitor's value, with its
/// location and competitor.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Competition {
    pub gap: f64,
    pub theta: Point,
    pub delta: Commutation,
}

/// Best competitor among `candidates` (entries equal to `delta` skipped).
pub(crate) fn strongest_competitor(
    solver: &MiSolver,
    oa: &OverApproximator,
    delta: &Commutation,
    candidates: &[Commutation],
) -> Result<Option<Competition>, Phase2Error> {
    let w: Vec<f64> = oa.values().iter().map(|v| -v).collect();
    let verts = oa.simplex().vertices();
    let mut best: Option<Competition> = None;
    for cand in candidates {
        if cand == delta {
            continue;
        }
        let tpl = solver.program().instantiate(cand)?;
        let found = match hull_program(&tpl, verts, &w)? {
            HullSolve::Optimal { value, theta } => Competition { gap: -value, theta, delta: cand.clone() },
            HullSolve::Infeasible => continue,
            HullSolve::Unresolved(status) => {
                log::warn!("error bound for competitor {cand} unresolved ({status:?}); treating the gap as unbounded");
                Competition { gap: f64::INFINITY, theta: oa.simplex().barycenter(), delta: cand.clone() }
            }
        };
        if best.as_ref().is_none_or(|b| found.gap > b.gap) {
            best = Some(found);
        }
    }
    Ok(best)
}

/// Completes the bounds from the strongest competitor by adding the
/// relative bound.
pub(crate) fn finish_bounds(
    solver: &MiSolver,
    oa: &OverApproximator,
    delta: &Commutation,
    best: Option<Competition>,
    denom_floor: f64,
) -> Result<ErrorBounds, Phase2Error> {
    let Some(best) = best else {
        return Ok(ErrorBounds {
            e_abs: f64::NEG_INFINITY,
            e_rel: None,
            arg_theta: None,
            arg_delta: None,
            status: BoundStatus::NoCompetitor,
        });
    };
    let tpl = solver.program().instantiate(delta)?;
    let zeros = vec![0.0; oa.values().len()];
    let denom = match hull_program(&tpl, oa.simplex().vertices(), &zeros)? {
        HullSolve::Optimal { value, .. } => Some(value),
        _ => None,
    };
    let (e_rel, status) = match denom {
        Some(m) if m > denom_floor => (Some(best.gap / m), BoundStatus::Bounded),
        _ => (None, BoundStatus::DenominatorDegenerate),
    };
    Ok(ErrorBounds { e_abs: best.gap, e_rel, arg_theta: Some(best.theta), arg_delta: Some(best.delta), status })
}

/// Absolute and relative suboptimality bounds of `delta` on the cell of
/// `oa` against the given competitors.
pub fn compute_error_bounds(
    solver: &MiSolver,
    oa: &OverApproximator,
    delta: &Commutation,
    candidates: &[Commutation],
    denom_floor: f64,
) -> Result<ErrorBounds, Phase2Error> {
    let best = strongest_competitor(solver, oa, delta, candidates)?;
    finish_bounds(solver, oa, delta, best, denom_floor)
}

/// Maximizer of `oa(theta) - V*_delta(theta)` over the convex hull of
/// `face` (points of the cell of `oa`); `None` when `delta` is infeasible on
/// the whole face or the program is unresolved.
pub fn constrained_split_point(
    solver: &MiSolver,
    delta: &Commutation,
    oa: &OverApproximator,
    face: &[Point],
) -> Result<Option<Point>, Phase2Error> {
    if face.len() < 2 {
        return Err(Phase2Error::InvalidInput("a face needs at least two points".into()));
    }
    let w = face.iter().map(|f| oa.value(f).map(|v| -v)).collect::<Result<Vec<_>, _>>()?;
    let tpl = solver.program().instantiate(delta)?;
    Ok(match hull_program(&tpl, face, &w)? {
        HullSolve::Optimal { theta, .. } => Some(theta),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{toy1d, toy1d_offset, toy1d_value};
    use crate::mi::MiSettings;
    use approx::assert_abs_diff_eq;

    fn seg(a: f64, b: f64) -> Simplex {
        Simplex::from_rows(&[&[a], &[b]]).unwrap()
    }

    fn pt(x: f64) -> Point {
        DVector::from_element(1, x)
    }

    #[test]
    fn interpolates_a_parabola() {
        let oa = OverApproximator::new(seg(0.0, 1.0), vec![0.0, 1.0]).unwrap();
        assert_eq!(over_approx_value(&oa, &pt(0.5)).unwrap(), 0.5);
        assert_eq!(over_approx_value(&oa, &pt(1.0)).unwrap(), 1.0);
        assert_eq!(over_approx_value(&oa, &pt(1.5)), Err(GeometryError::PointOutside));
    }

    #[test]
    fn offset_toy_bounds_match_calculus() {
        let toy = toy1d_offset();
        let solver = MiSolver::new(&toy.program, MiSettings::default());
        let one: Commutation = "1".parse().unwrap();
        let zero: Commutation = "0".parse().unwrap();
        let vals = [0.0, 0.2].map(|t| toy1d_value(0.2, -0.2, 0.1, t, true).unwrap());
        assert_abs_diff_eq!(vals[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 0.14, epsilon = 1e-12);
        let oa = OverApproximator::new(seg(0.0, 0.2), vals.to_vec()).unwrap();
        let eb = compute_error_bounds(&solver, &oa, &one, &[zero.clone(), one.clone()], 1e-9).unwrap();
        assert_eq!(eb.status, BoundStatus::Bounded);
        assert_abs_diff_eq!(eb.e_abs, 0.11, epsilon = 1e-6);
        assert_abs_diff_eq!(eb.arg_theta.unwrap()[0], 0.1, epsilon = 1e-4);
        assert_eq!(eb.arg_delta, Some(zero));
        assert_abs_diff_eq!(eb.e_rel.unwrap(), 1.1, epsilon = 1e-5);

        let split = constrained_split_point(&solver, &one, &oa, oa.simplex().vertices()).unwrap().unwrap();
        assert_abs_diff_eq!(split[0], 0.1, epsilon = 1e-4);
    }

    #[test]
    fn lone_commutation_has_no_competitor() {
        let toy = toy1d();
        let solver = MiSolver::new(&toy.program, MiSettings::default());
        let zero: Commutation = "0".parse().unwrap();
        let oa = OverApproximator::new(seg(0.5, 1.0), vec![0.25, 1.0]).unwrap();
        let eb = compute_error_bounds(&solver, &oa, &zero, &toy.program.admissible(), 1e-9).unwrap();
        assert_eq!(eb.status, BoundStatus::NoCompetitor);
        assert_eq!(eb.e_abs, f64::NEG_INFINITY);
    }

    #[test]
    fn affine_gap_peaks_at_a_vertex() {
        // Gap 50 t - t^2 increases on [0, 0.2], so it peaks at the vertex.
        let toy = toy1d_offset();
        let solver = MiSolver::new(&toy.program, MiSettings::default());
        let zero: Commutation = "0".parse().unwrap();
        let oa = OverApproximator::new(seg(0.0, 0.2), vec![0.0, 10.0]).unwrap();
        let split = constrained_split_point(&solver, &zero, &oa, oa.simplex().vertices()).unwrap().unwrap();
        assert_abs_diff_eq!(split[0], 0.2, epsilon = 1e-6);
    }
}
