//! Vertex-representation simplices and polytopes.

mod delaunay;
mod simplex;

use nalgebra::DVector;
use thiserror::Error;

pub use delaunay::delaunay_triangulate;
pub use simplex::{
    barycenter, condition_number, edge_matrix, hull_measure, hull_weights, longest_edge,
    sample_in_hull, split_hull_at_point, BarycentricCoords, LongestEdge, Simplex, SimplexMetrics,
    MEMBERSHIP_TOL,
};

pub type Point = DVector<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("simplex is degenerate (edge matrix is rank deficient)")]
    DegenerateSimplex,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("point lies outside the simplex")]
    PointOutside,
    #[error("dimension mismatch")]
    DimensionMismatch,
}

/// Convex polytope given by its vertex list.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    vertices: Vec<Point>,
}

impl Polytope {
    /// Accepts at least `p + 1` points of a common dimension `p` that affinely
    /// span R^p.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let Some(first) = vertices.first() else {
            return Err(GeometryError::DegenerateInput("empty vertex list".into()));
        };
        let p = first.len();
        if p == 0 {
            return Err(GeometryError::DegenerateInput("zero-dimensional points".into()));
        }
        if vertices.iter().any(|v| v.len() != p) {
            return Err(GeometryError::DimensionMismatch);
        }
        if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(GeometryError::DegenerateInput("non-finite coordinate".into()));
        }
        if vertices.len() < p + 1 || affine_rank(&vertices) < p {
            return Err(GeometryError::DegenerateInput(format!(
                "{} points do not span R^{p}",
                vertices.len()
            )));
        }
        Ok(Self { vertices })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, GeometryError> {
        Self::new(rows.iter().map(|r| DVector::from_row_slice(r)).collect())
    }

    /// Axis-aligned box `[lo_i, hi_i]` as its 2^p corners.
    pub fn bounding_box(lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        let p = lo.len();
        if hi.len() != p {
            return Err(GeometryError::DimensionMismatch);
        }
        let verts = (0..1usize << p)
            .map(|mask| {
                DVector::from_fn(p, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
            })
            .collect();
        Self::new(verts)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn barycenter(&self) -> Point {
        barycenter(&self.vertices)
    }

    /// Volume as the sum over a triangulation.
    pub fn volume(&self) -> Result<f64, GeometryError> {
        delaunay_triangulate(self)?
            .iter()
            .map(|s| s.volume())
            .sum::<Result<f64, _>>()
    }

    pub fn as_simplex(&self) -> Option<Simplex> {
        (self.vertices.len() == self.dim() + 1)
            .then(|| Simplex::new(self.vertices.clone()).ok())
            .flatten()
    }
}

impl From<Simplex> for Polytope {
    fn from(s: Simplex) -> Self {
        Self { vertices: s.into_vertices() }
    }
}

/// Affine rank of a point set via singular values of the centered cloud.
pub fn affine_rank(points: &[Point]) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let c = barycenter(points);
    let p = c.len();
    let m = nalgebra::DMatrix::from_fn(p, points.len(), |r, k| points[k][r] - c[r]);
    let sv = m.singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * smax).count()
}
