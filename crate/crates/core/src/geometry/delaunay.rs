//! Delaunay triangulation as the lower convex hull of points lifted onto a
//! paraboloid. The lifted heights carry a small deterministic perturbation so
//! cospherical inputs (squares, boxes) produce a valid regular triangulation.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{affine_rank, GeometryError, Point, Polytope, Simplex};

const PERTURBATION: f64 = 1e-6;
const VISIBILITY_TOL: f64 = 1e-11;

struct Facet {
    verts: Vec<usize>,
    normal: DVector<f64>,
    offset: f64,
    alive: bool,
}

/// Triangulates a full-dimensional polytope. The returned simplices use only
/// input vertices, cover the polytope and have disjoint interiors.
pub fn delaunay_triangulate(poly: &Polytope) -> Result<Vec<Simplex>, GeometryError> {
    let pts = poly.vertices();
    let p = poly.dim();
    if affine_rank(pts) < p {
        return Err(GeometryError::DegenerateInput("polytope is not full-dimensional".into()));
    }
    if pts.len() == p + 1 {
        return Ok(vec![Simplex::new(pts.to_vec())?]);
    }

    // Normalize to a unit-radius cloud before lifting.
    let center = super::barycenter(pts);
    let radius = pts
        .iter()
        .map(|v| (v - &center).norm())
        .fold(0.0, f64::max);
    let lifted: Vec<DVector<f64>> = pts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let u = (v - &center) / radius;
            let h = u.norm_squared() + PERTURBATION * jitter(i);
            DVector::from_fn(p + 1, |k, _| if k < p { u[k] } else { h })
        })
        .collect();

    let hull = convex_hull(&lifted)?;
    let full_volume_scale = radius.powi(p as i32);
    let mut out = Vec::new();
    for f in hull.iter().filter(|f| f.alive && f.normal[p] < 0.0) {
        let mut verts = f.verts.clone();
        verts.sort_unstable();
        let s = Simplex::new(verts.iter().map(|&i| pts[i].clone()).collect())?;
        let e = s.edge_matrix();
        if e.determinant().abs() > 1e-12 * full_volume_scale {
            out.push(s);
        }
    }
    out.sort_by(|a, b| cmp_vertices(a.vertices(), b.vertices()));
    Ok(out)
}

fn cmp_vertices(a: &[Point], b: &[Point]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        for (s, t) in x.iter().zip(y.iter()) {
            match s.total_cmp(t) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
    }
    std::cmp::Ordering::Equal
}

/// Deterministic value in [0, 1) from the point index.
fn jitter(i: usize) -> f64 {
    let mut z = (i as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Hyperplane through `d` points in R^d, oriented so `inside` lies below.
fn hyperplane(points: &[&DVector<f64>], inside: &DVector<f64>) -> (DVector<f64>, f64) {
    let d = points[0].len();
    let edges = DMatrix::from_fn(d - 1, d, |r, c| points[r + 1][c] - points[0][c]);
    let mut normal = DVector::zeros(d);
    for k in 0..d {
        let minor = edges.clone().remove_column(k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        normal[k] = sign * minor.determinant();
    }
    let norm = normal.norm();
    normal /= norm;
    let mut offset = normal.dot(points[0]);
    if normal.dot(inside) > offset {
        normal = -normal;
        offset = -offset;
    }
    (normal, offset)
}

/// Incremental (beneath-beyond) convex hull in R^d.
fn convex_hull(points: &[DVector<f64>]) -> Result<Vec<Facet>, GeometryError> {
    let d = points[0].len();
    let start = initial_simplex(points)?;
    let inside = start
        .iter()
        .fold(DVector::zeros(d), |acc, &i| acc + &points[i])
        / (d + 1) as f64;

    let mut facets: Vec<Facet> = Vec::new();
    let make = |verts: Vec<usize>, facets: &mut Vec<Facet>| {
        let refs: Vec<&DVector<f64>> = verts.iter().map(|&i| &points[i]).collect();
        let (normal, offset) = hyperplane(&refs, &inside);
        facets.push(Facet { verts, normal, offset, alive: true });
    };
    for skip in 0..=d {
        let verts: Vec<usize> = start
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != skip)
            .map(|(_, &i)| i)
            .collect();
        make(verts, &mut facets);
    }

    for (idx, q) in points.iter().enumerate() {
        if start.contains(&idx) {
            continue;
        }
        let visible: Vec<usize> = facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.normal.dot(q) - f.offset > VISIBILITY_TOL)
            .map(|(k, _)| k)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut ridges: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut order: Vec<Vec<usize>> = Vec::new();
        for &k in &visible {
            let fv = &facets[k].verts;
            for skip in 0..fv.len() {
                let mut r: Vec<usize> = fv
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != skip)
                    .map(|(_, &v)| v)
                    .collect();
                r.sort_unstable();
                let c = ridges.entry(r.clone()).or_insert(0);
                if *c == 0 {
                    order.push(r);
                }
                *c += 1;
            }
        }
        for &k in &visible {
            facets[k].alive = false;
        }
        for r in order {
            if ridges[&r] == 1 {
                let mut verts = r;
                verts.push(idx);
                make(verts, &mut facets);
            }
        }
    }
    Ok(facets)
}

/// Greedy choice of d+1 affinely independent points.
fn initial_simplex(points: &[DVector<f64>]) -> Result<Vec<usize>, GeometryError> {
    let d = points[0].len();
    let mut chosen = vec![0usize];
    // Farthest point from the first.
    let far = (0..points.len())
        .max_by(|&a, &b| {
            (&points[a] - &points[0])
                .norm()
                .total_cmp(&(&points[b] - &points[0]).norm())
        })
        .unwrap();
    chosen.push(far);
    while chosen.len() < d + 1 {
        let base = &points[chosen[0]];
        let basis = DMatrix::from_fn(d, chosen.len() - 1, |r, c| points[chosen[c + 1]][r] - base[r]);
        let q = basis.clone().qr().q();
        let mut best = (0.0, usize::MAX);
        for (i, v) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let w = v - base;
            let resid = &w - &q * (q.transpose() * &w);
            let dist = resid.norm();
            if dist > best.0 {
                best = (dist, i);
            }
        }
        if best.1 == usize::MAX || best.0 < 1e-9 {
            return Err(GeometryError::DegenerateInput("points are affinely dependent".into()));
        }
        chosen.push(best.1);
    }
    Ok(chosen)
}
