//! Splitting a cell at its point of largest error while keeping the pieces
//! well conditioned.

use super::bounds::{constrained_split_point, OverApproximator};
use super::Phase2Error;
use crate::geometry::{condition_number, hull_weights, Point, Simplex};
use crate::mi::MiSolver;
use crate::problem::Commutation;

/// Barycentric weight below which a split child is dropped as degenerate.
const CHILD_WEIGHT_TOL: f64 = 1e-12;

struct Snap<'s, 'a> {
    solver: &'s MiSolver<'a>,
    oa: &'s OverApproximator,
    delta: &'s Commutation,
    rho_max: f64,
    keep_out: f64,
}

impl Snap<'_, '_> {
    /// Pieces of the hull of `points`, or `None` when no split helps.
    fn hull(&self, points: &[Point]) -> Result<Option<Vec<Vec<Point>>>, Phase2Error> {
        let Some(theta) = constrained_split_point(self.solver, self.delta, self.oa, points)? else {
            return Ok(None);
        };
        if points.iter().any(|v| (v - &theta).norm() <= self.keep_out) {
            return Ok(None);
        }
        let alpha = hull_weights(points, &theta)?;
        let mut pieces: Vec<(usize, Vec<Point>, f64)> = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            if a > CHILD_WEIGHT_TOL {
                let mut verts = points.to_vec();
                verts[i] = theta.clone();
                let rho = condition_number(&verts).unwrap_or(f64::INFINITY);
                pieces.push((i, verts, rho));
            }
        }
        if pieces.len() < 2 {
            return Ok(None);
        }
        let (worst, _, rho) = pieces.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        if *rho <= self.rho_max {
            return Ok(Some(pieces.into_iter().map(|(_, v, _)| v).collect()));
        }
        // Drop the split point's piece boundary onto the facet opposite the
        // worst piece's replaced vertex and cone the facet's split back.
        let i = *worst;
        if points.len() <= 2 {
            return Ok(None);
        }
        let mut facet = points.to_vec();
        let apex = facet.remove(i);
        Ok(self.hull(&facet)?.map(|sub| {
            sub.into_iter()
                .map(|mut d| {
                    d.insert(i, apex.clone());
                    d
                })
                .collect()
        }))
    }
}

/// Splits `r` at the maximizer of `oa - V*_delta`, recursing onto a facet
/// when a piece would exceed `rho_max`. Returns `[r]` when that fails to
/// give pieces within `rho_max`, or when a split point comes within
/// `keep_out` of a vertex.
pub fn triangulate_snap(
    solver: &MiSolver,
    oa: &OverApproximator,
    r: &Simplex,
    delta: &Commutation,
    rho_max: f64,
    keep_out: f64,
) -> Result<Vec<Simplex>, Phase2Error> {
    let snap = Snap { solver, oa, delta, rho_max, keep_out };
    let Some(pieces) = snap.hull(r.vertices())? else {
        return Ok(vec![r.clone()]);
    };
    let mut out = Vec::with_capacity(pieces.len());
    for verts in pieces {
        match Simplex::new(verts) {
            Ok(s) if s.condition_number().is_ok_and(|rho| rho <= rho_max) => out.push(s),
            _ => return Ok(vec![r.clone()]),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::toy_program_2d;
    use crate::mi::MiSettings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn covered_once(cells: &[Simplex], parent: &Simplex, rng: &mut ChaCha8Rng) {
        let total: f64 = cells.iter().map(|s| s.volume().unwrap()).sum();
        assert!((total - parent.volume().unwrap()).abs() < 1e-9 * parent.volume().unwrap());
        for _ in 0..2000 {
            let x = parent.sample_uniform(rng);
            let hits = cells.iter().filter(|s| s.contains(&x)).count();
            assert!(hits >= 1);
        }
    }

    fn vertex_values(prog: &crate::problem::ParametricProgram, s: &Simplex, d: &Commutation) -> Vec<f64> {
        s.vertices().iter().map(|v| prog.solve_fixed(v, d).unwrap().value.unwrap()).collect()
    }

    #[test]
    fn well_conditioned_split_gives_three_children() {
        let prog = toy_program_2d();
        let solver = MiSolver::new(&prog, MiSettings::default());
        let d = prog.admissible()[0].clone();
        let r = Simplex::from_rows(&[&[-0.2, -0.5], &[0.2, -0.5], &[0.0, 0.5]]).unwrap();
        let oa = OverApproximator::new(r.clone(), vertex_values(&prog, &r, &d)).unwrap();
        let cells = triangulate_snap(&solver, &oa, &r, &d, 1e6, 0.0).unwrap();
        assert_eq!(cells.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        covered_once(&cells, &r, &mut rng);
    }

    #[test]
    fn segment_splits_in_two() {
        let toy = crate::instance::toy1d_offset();
        let solver = MiSolver::new(&toy.program, MiSettings::default());
        let one: Commutation = "1".parse().unwrap();
        let r = Simplex::from_rows(&[&[0.0], &[0.2]]).unwrap();
        let oa = OverApproximator::new(r.clone(), vec![0.1, 0.14]).unwrap();
        let cells = triangulate_snap(&solver, &oa, &r, &one, 1.0, 0.0).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert_eq!(c.condition_number().unwrap(), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        covered_once(&cells, &r, &mut rng);
    }

    #[test]
    fn near_facet_split_is_snapped() {
        // Raising the interpolant on one edge pushes the largest gap onto
        // that edge, so a direct split would leave a flat piece.
        let prog = toy_program_2d();
        let solver = MiSolver::new(&prog, MiSettings::default());
        let r = Simplex::from_rows(&[&[-0.15, -0.3], &[0.15, -0.3], &[0.0, 0.1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut snapped = 0;
        for d in prog.admissible() {
            if !r.vertices().iter().all(|v| prog.solve_fixed(v, &d).unwrap().is_optimal()) {
                continue;
            }
            let mut vals = vertex_values(&prog, &r, &d);
            vals[0] += 5.0;
            vals[1] += 5.0;
            let oa = OverApproximator::new(r.clone(), vals).unwrap();
            let cells = triangulate_snap(&solver, &oa, &r, &d, 10.0, 0.0).unwrap();
            if cells.len() > 1 {
                snapped += 1;
                assert!(cells.iter().all(|c| c.condition_number().unwrap() <= 10.0));
                assert!(cells.iter().all(|c| c.vertices().contains(&r.vertices()[2])));
                covered_once(&cells, &r, &mut rng);
            } else {
                assert_eq!(cells[0], r);
            }
        }
        assert!(snapped > 0);
    }
}
