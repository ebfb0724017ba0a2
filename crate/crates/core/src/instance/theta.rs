//! Robustly invariant parameter sets for a stabilized linear system
//! `x+ = A x + E w`, `|w|_inf <= w_max`.
//!
//! The state is split into invariant subspaces of dimension one or two. On
//! each two-dimensional block the closed loop contracts in a Lyapunov norm,
//! so a regular polygon inscribing that norm's unit circle closely enough is
//! mapped into itself. The set is the product of these polygons (intervals
//! for one-dimensional blocks), scaled by `c`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::InstanceError;
use crate::geometry::{Point, Polytope};

/// Most polygon sides tried for one block.
pub const MAX_SIDES: usize = 64;
/// Halvings of `c` tried below 1.
const MAX_HALVINGS: usize = 60;
/// Relative slack allowed in the invariance check.
const INVARIANCE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    /// Offset and size of the block in the transformed coordinates.
    pub start: usize,
    pub dim: usize,
    /// Polygon side count; 2 for intervals.
    pub sides: usize,
    /// Contraction factor of the block in its own norm.
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct ThetaSet {
    /// Scale of the set on the halving schedule `1, 1/2, 1/4, ...`.
    pub c: f64,
    /// Maps states to block coordinates `y = T x`.
    pub transform: DMatrix<f64>,
    pub blocks: Vec<Block>,
    /// Facet description `h x <= g`.
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub polytope: Polytope,
}

impl ThetaSet {
    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        let hx = &self.h * x;
        hx.iter().zip(self.g.iter()).all(|(a, b)| *a <= b + tol)
    }

    pub fn vertices(&self) -> &[Point] {
        self.polytope.vertices()
    }
}

/// Checks `A v + E w` against every facet at every vertex `v` and every
/// disturbance vertex `w` (the latter through the support function of the box).
pub fn is_robust_invariant(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    vertices: &[Point],
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    w_max: f64,
) -> bool {
    let ha = h * a;
    let he = h * e;
    (0..h.nrows()).all(|j| {
        let support = w_max * he.row(j).iter().map(|v| v.abs()).sum::<f64>();
        let worst = vertices.iter().map(|v| (ha.row(j) * v)[0]).fold(f64::NEG_INFINITY, f64::max);
        worst + support <= g[j] * (1.0 + INVARIANCE_TOL)
    })
}

/// Orthonormal basis of the null space of `q`, assumed to have dimension `k`.
fn null_basis(q: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = q.ncols();
    let svd = q.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut out = DMatrix::zeros(n, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        out.set_column(c, &vt.row(i).transpose());
    }
    out
}

/// Groups eigenvalues into conjugate pairs, pairs of neighbouring real
/// values, and at most one single real value. Each group is returned as the
/// coefficients of its monic real polynomial (constant term first).
fn eigen_groups(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let eig = a.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1e-300, f64::max);
    let mut reals = Vec::new();
    let mut groups = Vec::new();
    for z in eig.iter() {
        if z.im.abs() <= 1e-9 * scale {
            reals.push(z.re);
        } else if z.im > 0.0 {
            groups.push(vec![z.norm_sqr(), -2.0 * z.re]);
        }
    }
    reals.sort_by(f64::total_cmp);
    let mut it = reals.chunks(2);
    for pair in &mut it {
        match pair {
            [l1, l2] => groups.push(vec![l1 * l2, -(l1 + l2)]),
            [l] => groups.push(vec![-l]),
            _ => unreachable!(),
        }
    }
    groups
}

/// Solves `P - M' P M = I` for a small stable `M`.
fn lyapunov(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.nrows();
    let mt = m.transpose();
    let lhs = DMatrix::identity(k * k, k * k) - mt.kronecker(&mt);
    let rhs = DMatrix::<f64>::identity(k, k);
    let sol = lhs.lu().solve(&DVector::from_column_slice(rhs.as_slice()))?;
    let p = DMatrix::from_column_slice(k, k, sol.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

fn sides_for(gamma: f64) -> usize {
    let target = gamma + 0.5 * (1.0 - gamma);
    (2..=MAX_SIDES / 2).map(|h| 2 * h).find(|&k| (PI / k as f64).cos() >= target).unwrap_or(MAX_SIDES)
}

/// Block coordinates: the transform `T` with `T A T^-1` block diagonal and
/// each block contracting in the Euclidean norm.
fn block_coordinates(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<Block>), InstanceError> {
    let n = a.nrows();
    let groups = eigen_groups(a);
    let mut v = DMatrix::zeros(n, n);
    let mut blocks = Vec::new();
    let mut start = 0;
    for coeffs in &groups {
        let k = coeffs.len();
        // Real polynomial of A annihilating the group's eigenspace.
        let mut q = DMatrix::identity(n, n) * coeffs[0];
        let mut pow = DMatrix::identity(n, n);
        for &ck in &coeffs[1..] {
            pow = &pow * a;
            q += &pow * ck;
        }
        pow = &pow * a;
        q += pow;
        v.view_mut((0, start), (n, k)).copy_from(&null_basis(&q, k));
        blocks.push(Block { start, dim: k, sides: 2, gamma: 0.0 });
        start += k;
    }
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| InstanceError::NoInvariantBoxFound("invariant subspaces are dependent".into()))?;
    let ab = &v_inv * a * &v;
    let mut r = DMatrix::zeros(n, n);
    for b in blocks.iter_mut() {
        for i in 0..n {
            for j in b.start..b.start + b.dim {
                if !(b.start..b.start + b.dim).contains(&i) && ab[(i, j)].abs() > 1e-7 * a.amax().max(1.0) {
                    return Err(InstanceError::NoInvariantBoxFound("block decomposition failed".into()));
                }
            }
        }
        let m = ab.view((b.start, b.start), (b.dim, b.dim)).into_owned();
        let rho = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if rho >= 1.0 {
            return Err(InstanceError::NoInvariantBoxFound(format!("closed loop is not contractive (|lambda| = {rho})")));
        }
        let p = lyapunov(&m).ok_or_else(|| InstanceError::NoInvariantBoxFound("Lyapunov solve failed".into()))?;
        let lmin = p.symmetric_eigenvalues().min();
        let chol = (p / lmin)
            .cholesky()
            .ok_or_else(|| InstanceError::NoInvariantBoxFound("Lyapunov solution not definite".into()))?;
        let rb = chol.l().transpose();
        let rb_inv = rb.clone().try_inverse().expect("cholesky factor is invertible");
        b.gamma = (&rb * &m * rb_inv).singular_values().max();
        b.sides = if b.dim == 1 { 2 } else { sides_for(b.gamma) };
        r.view_mut((b.start, b.start), (b.dim, b.dim)).copy_from(&rb);
    }
    Ok((r * v_inv, blocks))
}

/// Facets and vertices of the product set at scale `c`, in block coordinates.
fn block_shape(blocks: &[Block], n: usize, c: f64) -> (DMatrix<f64>, DVector<f64>, Vec<Point>) {
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut factor_verts: Vec<Vec<Vec<f64>>> = Vec::new();
    for b in blocks {
        if b.dim == 1 {
            for s in [1.0, -1.0] {
                let mut r = DVector::zeros(n);
                r[b.start] = s;
                rows.push((r, c));
            }
            factor_verts.push(vec![vec![c], vec![-c]]);
        } else {
            let k = b.sides as f64;
            for j in 0..b.sides {
                let phi = PI * (2 * j + 1) as f64 / k;
                let mut r = DVector::zeros(n);
                r[b.start] = phi.cos();
                r[b.start + 1] = phi.sin();
                rows.push((r, c * (PI / k).cos()));
            }
            factor_verts.push(
                (0..b.sides)
                    .map(|j| {
                        let phi = 2.0 * PI * j as f64 / k;
                        vec![c * phi.cos(), c * phi.sin()]
                    })
                    .collect(),
            );
        }
    }
    let h = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let g = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let mut verts: Vec<Vec<f64>> = vec![Vec::new()];
    for f in &factor_verts {
        verts = verts
            .iter()
            .flat_map(|v| f.iter().map(move |fv| v.iter().chain(fv).copied().collect()))
            .collect();
    }
    (h, g, verts.into_iter().map(DVector::from_vec).collect())
}

/// Smallest robustly invariant set on the halving schedule.
pub fn construct_theta(a_cl: &DMatrix<f64>, e: &DMatrix<f64>, w_max: f64) -> Result<ThetaSet, InstanceError> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || e.nrows() != n {
        return Err(InstanceError::InvalidInput("closed-loop and disturbance matrices disagree".into()));
    }
    if !(w_max >= 0.0) {
        return Err(InstanceError::InvalidInput(format!("disturbance bound must be non-negative, got {w_max}")));
    }
    let (t, blocks) = block_coordinates(a_cl)?;
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| InstanceError::NoInvariantBoxFound("singular block transform".into()))?;
    let build = |c: f64| {
        let (hy, g, vy) = block_shape(&blocks, n, c);
        let h = hy * &t;
        let verts: Vec<Point> = vy.iter().map(|y| &t_inv * y).collect();
        (h, g, verts)
    };
    let mut best = None;
    let mut c = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let (h, g, verts) = build(c);
        if !is_robust_invariant(&h, &g, &verts, a_cl, e, w_max) {
            break;
        }
        best = Some((c, h, g, verts));
        c *= 0.5;
    }
    let Some((c, h, g, verts)) = best else {
        return Err(InstanceError::NoInvariantBoxFound("the set at scale 1 is not robustly invariant".into()));
    };
    log::debug!("invariant set at scale {c} with {} vertices", verts.len());
    Ok(ThetaSet { c, transform: t, blocks, h, g, polytope: Polytope::new(verts)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0))
    }

    #[test]
    fn scalar_example_stops_at_1_over_256() {
        let (a, e) = scalar(0.5);
        let th = construct_theta(&a, &e, 1e-3).unwrap();
        assert_eq!(th.c, 1.0 / 256.0);
        let mut xs: Vec<f64> = th.vertices().iter().map(|v| v[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0 / 256.0, 1.0 / 256.0]);
    }

    #[test]
    fn expanding_scalar_fails() {
        let (a, e) = scalar(1.01);
        assert!(matches!(construct_theta(&a, &e, 1e-3), Err(InstanceError::NoInvariantBoxFound(_))));
    }

    #[test]
    fn rotation_gives_polygon() {
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let a = DMatrix::from_row_slice(2, 2, &[0.9 * c, -0.9 * s, 0.9 * s, 0.9 * c]);
        let e = DMatrix::identity(2, 2);
        let th = construct_theta(&a, &e, 1e-3).unwrap();
        let b = &th.blocks[0];
        assert!((b.gamma - 0.9).abs() < 1e-9);
        assert!((PI / b.sides as f64).cos() >= 0.95);
        assert_eq!(th.vertices().len(), b.sides);
        // An axis box is never invariant for this rotation at any scale
        // without a margin, but the polygon is.
        assert!(is_robust_invariant(&th.h, &th.g, th.vertices(), &a, &e, 1e-3));
        let (hh, gg, vv) = block_shape(&th.blocks, 2, th.c / 2.0);
        let hh = hh * &th.transform;
        let ti = th.transform.clone().try_inverse().unwrap();
        let vv: Vec<Point> = vv.iter().map(|y| &ti * y).collect();
        assert!(!is_robust_invariant(&hh, &gg, &vv, &a, &e, 1e-3));
    }

    #[test]
    fn coupled_real_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.5, 0.0, 0.79]);
        let e = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let th = construct_theta(&a, &e, 1e-3).unwrap();
        assert!(th.c < 1.0);
        assert!(is_robust_invariant(&th.h, &th.g, th.vertices(), &a, &e, 1e-3));
        assert!(th.contains(&DVector::zeros(2), 0.0));
    }
}
