use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{GeometryError, Point};

/// Barycentric weights are accepted as "inside" down to this value.
pub const MEMBERSHIP_TOL: f64 = -1e-9;

/// Children of a point split whose barycentric weight at the split point is
/// at most this are lower-dimensional and dropped.
const CHILD_WEIGHT_TOL: f64 = 1e-12;

/// Relative singular-value floor below which a point set is treated as
/// affinely dependent.
const RANK_TOL: f64 = 1e-13;

/// A full-dimensional simplex in R^p stored by its p+1 vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Simplex {
    vertices: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongestEdge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexMetrics {
    pub volume: f64,
    pub barycenter: Point,
    pub longest_edge: LongestEdge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarycentricCoords {
    pub alpha: DVector<f64>,
}

impl BarycentricCoords {
    pub fn contains(&self) -> bool {
        self.alpha.iter().all(|&a| a >= MEMBERSHIP_TOL)
    }

    pub fn min_weight(&self) -> f64 {
        self.alpha.min()
    }
}

impl Simplex {
    /// Builds a simplex from exactly `dim + 1` vertices of equal dimension.
    /// Rank is not checked here; metric operations report degeneracy.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let Some(first) = vertices.first() else {
            return Err(GeometryError::DegenerateInput("empty vertex list".into()));
        };
        let p = first.len();
        if p == 0 || vertices.len() != p + 1 {
            return Err(GeometryError::DegenerateInput(format!(
                "a simplex in R^{p} needs {} vertices, got {}",
                p + 1,
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| v.len() != p) {
            return Err(GeometryError::DimensionMismatch);
        }
        Ok(Self { vertices })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, GeometryError> {
        Self::new(rows.iter().map(|r| DVector::from_row_slice(r)).collect())
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }

    /// Columns are `v_i - v_0` for i = 1..=p.
    pub fn edge_matrix(&self) -> DMatrix<f64> {
        edge_matrix(&self.vertices)
    }

    pub fn barycenter(&self) -> Point {
        barycenter(&self.vertices)
    }

    /// Volume from the edge-matrix determinant; errors on rank deficiency.
    pub fn volume(&self) -> Result<f64, GeometryError> {
        let e = self.edge_matrix();
        check_rank(&e)?;
        Ok(e.determinant().abs() / factorial(self.dim()))
    }

    pub fn longest_edge(&self) -> LongestEdge {
        longest_edge(&self.vertices)
    }

    pub fn metrics(&self) -> Result<SimplexMetrics, GeometryError> {
        Ok(SimplexMetrics {
            volume: self.volume()?,
            barycenter: self.barycenter(),
            longest_edge: self.longest_edge(),
        })
    }

    /// Ratio of extreme singular values of the edge matrix (always >= 1).
    pub fn condition_number(&self) -> Result<f64, GeometryError> {
        condition_number(&self.vertices)
    }

    pub fn barycentric(&self, theta: &Point) -> Result<BarycentricCoords, GeometryError> {
        if theta.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch);
        }
        let e = self.edge_matrix();
        let lu = e.lu();
        let rhs = theta - &self.vertices[0];
        let lambda = lu.solve(&rhs).ok_or(GeometryError::DegenerateSimplex)?;
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::DegenerateSimplex);
        }
        let mut alpha = DVector::zeros(self.dim() + 1);
        alpha[0] = 1.0 - lambda.sum();
        for (k, l) in lambda.iter().enumerate() {
            alpha[k + 1] = *l;
        }
        Ok(BarycentricCoords { alpha })
    }

    pub fn contains(&self, theta: &Point) -> bool {
        self.barycentric(theta).map(|b| b.contains()).unwrap_or(false)
    }

    /// Replaces each vertex in turn by `theta`, keeping the full-dimensional
    /// children. The children tile the simplex.
    pub fn split_at_point(&self, theta: &Point) -> Result<Vec<Simplex>, GeometryError> {
        let bc = self.barycentric(theta)?;
        if !bc.contains() {
            return Err(GeometryError::PointOutside);
        }
        Ok(bc
            .alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > CHILD_WEIGHT_TOL)
            .map(|(i, _)| {
                let mut verts = self.vertices.clone();
                verts[i] = theta.clone();
                Simplex { vertices: verts }
            })
            .collect())
    }

    /// Splits at the midpoint of the longest edge `(v_i, v_j)`: the first child
    /// replaces `v_i`, the second `v_j`.
    pub fn bisect(&self) -> [Simplex; 2] {
        let LongestEdge { i, j, .. } = self.longest_edge();
        let mid = (&self.vertices[i] + &self.vertices[j]) * 0.5;
        let mut a = self.vertices.clone();
        a[i] = mid.clone();
        let mut b = self.vertices.clone();
        b[j] = mid;
        [Simplex { vertices: a }, Simplex { vertices: b }]
    }

    /// Uniform sample from the simplex (flat Dirichlet weights).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        sample_in_hull(&self.vertices, rng)
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn barycenter(points: &[Point]) -> Point {
    let mut c = DVector::zeros(points[0].len());
    for v in points {
        c += v;
    }
    c / points.len() as f64
}

/// `p x k` matrix of edges from the first point.
pub fn edge_matrix(points: &[Point]) -> DMatrix<f64> {
    let p = points[0].len();
    let k = points.len() - 1;
    DMatrix::from_fn(p, k, |r, c| points[c + 1][r] - points[0][r])
}

fn check_rank(e: &DMatrix<f64>) -> Result<(f64, f64), GeometryError> {
    if e.ncols() == 0 {
        return Err(GeometryError::DegenerateSimplex);
    }
    let sv = e.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin < 1e-300 || smin <= RANK_TOL * smax {
        return Err(GeometryError::DegenerateSimplex);
    }
    Ok((smax, smin))
}

/// Deterministic longest edge: ties go to the lexicographically smallest
/// index pair.
pub fn longest_edge(points: &[Point]) -> LongestEdge {
    let mut best = LongestEdge { i: 0, j: 1, length: -1.0 };
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let l = (&points[i] - &points[j]).norm();
            if l > best.length {
                best = LongestEdge { i, j, length: l };
            }
        }
    }
    best
}

/// Condition number of the edge matrix of a (possibly lower-dimensional)
/// simplex given by `k + 1` points.
pub fn condition_number(points: &[Point]) -> Result<f64, GeometryError> {
    let (smax, smin) = check_rank(&edge_matrix(points))?;
    Ok((smax / smin).max(1.0))
}

/// k-dimensional measure of the simplex spanned by `k + 1` points (Gram
/// determinant); zero when affinely dependent.
pub fn hull_measure(points: &[Point]) -> f64 {
    let k = points.len() - 1;
    if k == 0 {
        return 0.0;
    }
    let e = edge_matrix(points);
    let g = e.transpose() * &e;
    g.determinant().max(0.0).sqrt() / factorial(k)
}

/// Weights of `theta` relative to the affine hull of `points` (least squares
/// when `theta` is off the hull).
pub fn hull_weights(points: &[Point], theta: &Point) -> Result<DVector<f64>, GeometryError> {
    let e = edge_matrix(points);
    check_rank(&e)?;
    let rhs = theta - &points[0];
    let g = e.transpose() * &e;
    let lambda = g
        .lu()
        .solve(&(e.transpose() * rhs))
        .ok_or(GeometryError::DegenerateSimplex)?;
    let mut alpha = DVector::zeros(points.len());
    alpha[0] = 1.0 - lambda.sum();
    for (k, l) in lambda.iter().enumerate() {
        alpha[k + 1] = *l;
    }
    Ok(alpha)
}

/// Point split of a lower-dimensional simplex within its own affine hull.
pub fn split_hull_at_point(
    points: &[Point],
    theta: &Point,
) -> Result<Vec<Vec<Point>>, GeometryError> {
    let alpha = hull_weights(points, theta)?;
    if alpha.iter().any(|&a| a < MEMBERSHIP_TOL) {
        return Err(GeometryError::PointOutside);
    }
    Ok(alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > CHILD_WEIGHT_TOL)
        .map(|(i, _)| {
            let mut verts = points.to_vec();
            verts[i] = theta.clone();
            verts
        })
        .collect())
}

pub fn sample_in_hull<R: Rng + ?Sized>(points: &[Point], rng: &mut R) -> Point {
    let mut w: Vec<f64> = (0..points.len())
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let mut out = DVector::zeros(points[0].len());
    for (v, a) in points.iter().zip(&w) {
        out.axpy(*a, v, 1.0);
    }
    out
}
