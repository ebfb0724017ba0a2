//! Feasible partition: simplicial cells each carrying one commutation that is
//! feasible throughout the cell.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{delaunay_triangulate, GeometryError, Point, Polytope, Simplex};
use crate::mi::{CacheEntry, FixedResult, MiError, MiSettings, MiSolver};
use crate::problem::{scale_to_unit_box, Commutation, ParametricProgram, ProblemError};
use crate::tree::{Event, EventLog, NodeStatus, PartitionTree};

#[derive(Debug, Error)]
pub enum Phase1Error {
    #[error("Theta is not contained in the feasible parameter set; no commutation is feasible at {witness:?}")]
    ThetaExceedsFeasibleSet { witness: Vec<f64> },
    #[error("iteration cap of {0} reached")]
    IterationCapExceeded(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Debug)]
pub struct Phase1Config {
    pub max_iterations: usize,
    /// Process one cell at a time; output is then reproducible bit for bit.
    pub deterministic: bool,
    /// Worker threads for the parallel mode; 0 uses the rayon default.
    pub workers: usize,
    pub mi: MiSettings,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self { max_iterations: 1_000_000, deterministic: true, workers: 0, mi: MiSettings::default() }
    }
}

#[derive(Debug)]
pub struct Phase1Output {
    pub tree: PartitionTree,
    pub events: EventLog,
    pub iterations: usize,
    pub runtime: Duration,
    pub cache: Vec<CacheEntry>,
}

enum Decision {
    Close(Commutation, Vec<FixedResult>),
    Split([Simplex; 2]),
}

fn decide(solver: &MiSolver, cell: &Simplex) -> Result<Result<Decision, Point>, Phase1Error> {
    let bary = cell.barycenter();
    if solver.find_feasible_commutation(&bary)?.is_none() {
        return Ok(Err(bary));
    }
    Ok(Ok(match solver.find_common_feasible_commutation(cell.vertices(), None)? {
        Some((d, rs)) => Decision::Close(d, rs),
        None => Decision::Split(cell.bisect()),
    }))
}

/// Builds the feasible partition of `theta`. The returned tree lives in the
/// scaled coordinates described by its `scaling`.
pub fn build_partition(
    prog: &ParametricProgram,
    theta: &Polytope,
    cfg: &Phase1Config,
) -> Result<Phase1Output, Phase1Error> {
    let start = Instant::now();
    if theta.dim() != prog.p {
        return Err(Phase1Error::InvalidInput(format!("Theta is in R^{}, program has p = {}", theta.dim(), prog.p)));
    }
    if let Some(d) = prog.validate().first() {
        return Err(Phase1Error::InvalidInput(d.clone()));
    }
    let (sprog, spoly, tf) = scale_to_unit_box(prog, theta)?;
    let solver = MiSolver::new(&sprog, cfg.mi.clone());
    let mut tree = PartitionTree::new(&spoly, prog.m, tf.clone());
    let total = spoly.volume()?;
    let cells = delaunay_triangulate(&spoly)?;
    let first = tree.add_children(0, cells, None);
    let mut stack: Vec<usize> = first.into_iter().rev().collect();

    let pool = if cfg.deterministic {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Phase1Error::InvalidInput(e.to_string()))?,
        )
    };
    let batch = pool.as_ref().map_or(1, |p| p.current_num_threads().max(1));

    let mut events = EventLog::default();
    let mut iterations = 0usize;
    let mut closed = 0.0;
    while !stack.is_empty() {
        let take = batch.min(stack.len());
        let ids: Vec<usize> = (0..take).map(|_| stack.pop().unwrap()).collect();
        if iterations + ids.len() > cfg.max_iterations {
            return Err(Phase1Error::IterationCapExceeded(cfg.max_iterations));
        }
        let cells = ids.iter().map(|&id| tree.nodes[id].simplex()).collect::<Result<Vec<_>, _>>()?;
        let decisions: Vec<_> = match &pool {
            None => cells.iter().map(|c| decide(&solver, c)).collect(),
            Some(pool) => pool.install(|| cells.par_iter().map(|c| decide(&solver, c)).collect()),
        };
        // Children go back on the stack so the batch's first cell is refined
        // first, matching the sequential order.
        let mut pushed = Vec::new();
        for ((id, cell), decision) in ids.into_iter().zip(cells).zip(decisions) {
            iterations += 1;
            let volume = cell.volume()?;
            let action = match decision? {
                Err(bary) => {
                    log::info!("no commutation feasible at the barycenter of cell {id}");
                    return Err(Phase1Error::ThetaExceedsFeasibleSet {
                        witness: tf.unapply(&bary).iter().copied().collect(),
                    });
                }
                Ok(Decision::Close(d, rs)) => {
                    let node = &mut tree.nodes[id];
                    node.status = NodeStatus::ClosedFeasible;
                    node.delta = Some(d);
                    node.vertex_values = Some(rs.iter().map(|r| r.value.unwrap_or(f64::NAN)).collect());
                    closed += volume;
                    "close"
                }
                Ok(Decision::Split([a, b])) => {
                    let kids = tree.add_children(id, vec![a, b], None);
                    pushed.push(kids);
                    "split"
                }
            };
            log::debug!("iter {iterations}: {action} cell {id} (volume {volume:e})");
            events.push(Event {
                iter: iterations,
                t_wall: start.elapsed().as_secs_f64(),
                action,
                cell_volume: volume,
                closed_fraction: closed / total,
            });
        }
        for kids in pushed.into_iter().rev() {
            stack.extend(kids.into_iter().rev());
        }
    }
    log::info!("feasible partition: {} leaves after {iterations} iterations", tree.leaves().count());
    Ok(Phase1Output { tree, events, iterations, runtime: start.elapsed(), cache: solver.cache().entries() })
}

/// Depth bound `ceil(p (p + 1) / 2 * log2(l0 / kappa))` for longest-edge
/// bisection to bring edge lengths from `l0` below `kappa`.
pub fn estimate_depth_bound(p: usize, l0: f64, kappa: f64) -> Result<usize, Phase1Error> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Phase1Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    if !(l0 > 0.0) || !l0.is_finite() {
        return Err(Phase1Error::InvalidInput(format!("l0 must be positive, got {l0}")));
    }
    if l0 <= kappa {
        return Ok(0);
    }
    let d = (p * (p + 1)) as f64 / 2.0 * (l0 / kappa).log2();
    Ok(d.ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{toy1d, toy1d_kappa, toy2d};
    use nalgebra::DVector;

    fn leaf_summary(out: &Phase1Output) -> Vec<(f64, f64, String)> {
        let mut v: Vec<_> = out
            .tree
            .leaves()
            .map(|n| {
                let s = n.simplex().unwrap();
                let xs: Vec<f64> = s.vertices().iter().map(|v| out.tree.scaling.unapply(v)[0]).collect();
                (xs[0].min(xs[1]), xs[0].max(xs[1]), n.delta.as_ref().unwrap().to_string())
            })
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    #[test]
    fn toy1d_gives_two_cells() {
        let toy = toy1d();
        let out = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        assert_eq!(leaf_summary(&out), vec![(-1.0, 0.0, "1".into()), (0.0, 1.0, "0".into())]);
        assert_eq!(out.tree.max_depth(), 2);
        assert!(out.tree.is_finalized());
        assert_eq!(out.events.count("split"), 1);
        assert_eq!(out.events.count("close"), 2);
    }

    #[test]
    fn small_theta_closes_at_once() {
        let toy = toy1d();
        let theta = Polytope::from_rows(&[&[-0.1], &[0.1]]).unwrap();
        let out = build_partition(&toy.program, &theta, &Phase1Config::default()).unwrap();
        assert_eq!(out.tree.leaves().count(), 1);
        assert_eq!(out.tree.max_depth(), 1);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn oversized_theta_reports_witness() {
        let toy = toy1d();
        let theta = Polytope::from_rows(&[&[-1.0], &[1.5]]).unwrap();
        match build_partition(&toy.program, &theta, &Phase1Config::default()) {
            Err(Phase1Error::ThetaExceedsFeasibleSet { witness }) => {
                assert!(witness[0] > 1.0 && witness[0] <= 1.5, "{witness:?}");
                let w = DVector::from_vec(witness);
                for d in toy.program.admissible() {
                    assert!(!toy.program.solve_fixed(&w, &d).unwrap().is_optimal());
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_bound_formula() {
        assert_eq!(estimate_depth_bound(1, 2.0, 0.2).unwrap(), 4);
        assert_eq!(estimate_depth_bound(2, 2.0, 4.0).unwrap(), 0);
        assert!(estimate_depth_bound(1, 2.0, 0.0).is_err());
        assert!(estimate_depth_bound(1, 2.0, -1.0).is_err());
    }

    #[test]
    fn kappa_family_respects_depth_bound() {
        for kappa in [0.4, 0.2, 0.1, 0.05] {
            let toy = toy1d_kappa(kappa);
            let out = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
            let bound = estimate_depth_bound(1, 2.0, kappa).unwrap();
            assert!(out.tree.max_depth() - 1 <= bound, "kappa {kappa}: depth {}", out.tree.max_depth());
        }
    }

    #[test]
    fn cells_are_feasible_everywhere() {
        let toy = toy2d();
        let out = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        let sprog = out.tree.scaling.rewrite_program(&toy.program);
        for leaf in out.tree.leaves() {
            let s = leaf.simplex().unwrap();
            let d = leaf.delta.as_ref().unwrap();
            for probe in [s.barycenter(), s.vertices()[0].clone()] {
                assert!(sprog.solve_fixed(&probe, d).unwrap().is_optimal());
            }
        }
    }

    #[test]
    fn parallel_mode_matches_leaf_volume() {
        let toy = toy2d();
        let seq = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        let cfg = Phase1Config { deterministic: false, workers: 3, ..Default::default() };
        let par = build_partition(&toy.program, &toy.theta, &cfg).unwrap();
        let vol = |o: &Phase1Output| o.tree.leaves().map(|n| o.tree.node_volume(n.id).unwrap()).sum::<f64>();
        assert!((vol(&seq) - vol(&par)).abs() < 1e-9);
        assert!(par.tree.is_finalized());
    }
}
