//! Refinement of a feasible partition until every leaf's commutation is
//! certified suboptimal by at most the requested tolerance.

mod bounds;
mod snap;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::conic::ConicError;
use crate::geometry::{delaunay_triangulate, GeometryError, Simplex};
use crate::mi::{MiError, MiSettings, MiSolver};
use crate::problem::{Commutation, ParametricProgram, ProblemError};
use crate::tree::{Event, EventLog, Node, NodeStatus, PartitionTree};

pub use bounds::{
    compute_error_bounds, constrained_split_point, over_approx_value, BoundStatus, ErrorBounds, OverApproximator,
};
pub use snap::triangulate_snap;

use bounds::{finish_bounds, strongest_competitor, Competition};

#[derive(Debug, Error)]
pub enum Phase2Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("iteration cap of {0} reached")]
    IterationCapExceeded(usize),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Clone, Debug)]
pub struct Phase2Config {
    /// Absolute tolerance in cost units.
    pub eps_abs: f64,
    /// Relative tolerance.
    pub eps_rel: f64,
    /// Largest simplex condition number a split may produce.
    pub rho_max: f64,
    /// Absolute keep-out radius (scaled parameter units).
    pub pi_abs: f64,
    /// Keep-out radius as a fraction of the longest edge.
    pub pi_rel: f64,
    /// Cell minima at or below this skip the relative bound.
    pub denom_floor: f64,
    pub max_iterations: usize,
    /// Before closing a leaf, check every admissible competitor and not only
    /// the cached ones (needs the enumeration backend).
    pub full_sweep: bool,
    pub deterministic: bool,
    pub workers: usize,
    pub mi: MiSettings,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            eps_abs: 1e-2,
            eps_rel: 0.0,
            rho_max: 50.0,
            pi_abs: 1e-4,
            pi_rel: 0.05,
            denom_floor: 1e-9,
            max_iterations: 1_000_000,
            full_sweep: true,
            deterministic: true,
            workers: 0,
            mi: MiSettings::default(),
        }
    }
}

impl Phase2Config {
    pub fn validate(&self) -> Result<(), Phase2Error> {
        let bad = |m: &str| Err(Phase2Error::InvalidInput(m.into()));
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0) || !(self.eps_abs > 0.0 || self.eps_rel > 0.0) {
            return bad("need eps_abs > 0 or eps_rel > 0, both nonnegative");
        }
        if !(self.rho_max >= 1.0) {
            return bad("rho_max must be at least 1");
        }
        if !(self.pi_abs >= 0.0) {
            return bad("pi_abs must be nonnegative");
        }
        if !(0.0..0.5).contains(&self.pi_rel) {
            return bad("pi_rel must lie in [0, 0.5)");
        }
        if !(self.denom_floor > 0.0) {
            return bad("denom_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Phase2Output {
    pub tree: PartitionTree,
    pub events: EventLog,
    pub iterations: usize,
    pub runtime: Duration,
    /// Children that received a different commutation than their parent.
    pub reassignments: usize,
}

enum Outcome {
    Close {
        status: NodeStatus,
        e_abs: Option<f64>,
        e_rel: Option<f64>,
    },
    Split {
        cells: Vec<(Simplex, Commutation, Vec<f64>)>,
        action: &'static str,
        e_abs: Option<f64>,
        e_rel: Option<f64>,
    },
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Optimal values of `delta` at the vertices, or `None` if it is not
/// feasible at all of them.
fn values_at(solver: &MiSolver, verts: &[crate::geometry::Point], delta: &Commutation) -> Result<Option<Vec<f64>>, Phase2Error> {
    let mut out = Vec::with_capacity(verts.len());
    for v in verts {
        let r = solver.fixed(v, delta)?;
        match r.value.filter(|_| r.feasible()) {
            Some(x) => out.push(x),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

struct Refiner<'s, 'a> {
    solver: &'s MiSolver<'a>,
    cfg: &'s Phase2Config,
    /// Every admissible commutation, when enumerable.
    all: Option<Vec<Commutation>>,
}

impl Refiner<'_, '_> {
    fn certified(&self, b: &ErrorBounds) -> bool {
        b.status == BoundStatus::NoCompetitor
            || b.e_abs <= self.cfg.eps_abs
            || b.e_rel.is_some_and(|r| r <= self.cfg.eps_rel)
    }

    fn bounds(&self, oa: &OverApproximator, delta: &Commutation) -> Result<ErrorBounds, Phase2Error> {
        let prog = self.solver.program();
        let cached: Vec<Commutation> =
            self.solver.cache().deltas().into_iter().filter(|d| d != delta && prog.is_admissible(d)).collect();
        let best = strongest_competitor(self.solver, oa, delta, &cached)?;
        let b = finish_bounds(self.solver, oa, delta, best.clone(), self.cfg.denom_floor)?;
        let Some(all) = self.all.as_ref().filter(|_| self.cfg.full_sweep && self.certified(&b)) else {
            return Ok(b);
        };
        let rest: Vec<Commutation> = all.iter().filter(|d| *d != delta && !cached.contains(d)).cloned().collect();
        let more = strongest_competitor(self.solver, oa, delta, &rest)?;
        let merged = match (best, more) {
            (Some(a), Some(b)) => Some(if b.gap > a.gap { b } else { a }),
            (a, b) => a.or(b),
        };
        let unchanged = |m: &Option<Competition>| m.as_ref().map(|c| c.gap) == finite(b.e_abs);
        if unchanged(&merged) {
            return Ok(b);
        }
        finish_bounds(self.solver, oa, delta, merged, self.cfg.denom_floor)
    }

    fn process(&self, node: &Node) -> Result<Outcome, Phase2Error> {
        let simplex = node.simplex()?;
        let delta = node
            .delta
            .clone()
            .ok_or_else(|| Phase2Error::InvalidInput(format!("leaf {} has no commutation", node.id)))?;
        let values = match &node.vertex_values {
            Some(v) => v.clone(),
            None => values_at(self.solver, simplex.vertices(), &delta)?.ok_or_else(|| {
                Phase2Error::InvalidInput(format!("commutation {delta} is not feasible at every vertex of leaf {}", node.id))
            })?,
        };
        let oa = OverApproximator::new(simplex.clone(), values)?;
        let b = self.bounds(&oa, &delta)?;
        let (e_abs, e_rel) = (finite(b.e_abs), b.e_rel);
        if b.status == BoundStatus::NoCompetitor {
            return Ok(Outcome::Close { status: NodeStatus::OnlyFeasible, e_abs, e_rel });
        }
        if self.certified(&b) {
            return Ok(Outcome::Close { status: NodeStatus::CertifiedEpsSuboptimal, e_abs, e_rel });
        }

        let arg = b.arg_theta.expect("bounded error has a maximizer");
        let challenger = b.arg_delta.expect("bounded error has a competitor");
        let metrics = simplex.metrics()?;
        // Below twice the absolute keep-out radius every split point sits
        // inside it, so refining further cannot respect the keep-out.
        if metrics.longest_edge.length <= 2.0 * self.cfg.pi_abs {
            return Ok(Outcome::Close { status: NodeStatus::WarnedIllConditioned, e_abs, e_rel });
        }
        let r_ko = self.cfg.pi_abs.max(self.cfg.pi_rel * metrics.longest_edge.length);
        let near_vertex = simplex.vertices().iter().any(|v| (v - &arg).norm() <= r_ko);
        let mut pieces = if near_vertex {
            vec![simplex.clone()]
        } else {
            triangulate_snap(self.solver, &oa, &simplex, &challenger, self.cfg.rho_max, r_ko)?
        };
        let mut action = "snap";
        if pieces.len() <= 1 {
            pieces = simplex.bisect().to_vec();
            action = "bisect";
            let worst = pieces.iter().map(|s| s.condition_number().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
            if worst > self.cfg.rho_max {
                return Ok(Outcome::Close { status: NodeStatus::WarnedIllConditioned, e_abs, e_rel });
            }
        }
        let mut cells = Vec::with_capacity(pieces.len());
        for s in pieces {
            let (d, vals) = match values_at(self.solver, s.vertices(), &challenger)? {
                Some(v) => (challenger.clone(), v),
                None => {
                    let v = values_at(self.solver, s.vertices(), &delta)?.ok_or_else(|| {
                        Phase2Error::InvalidInput(format!("commutation {delta} lost feasibility inside leaf {}", node.id))
                    })?;
                    (delta.clone(), v)
                }
            };
            cells.push((s, d, vals));
        }
        Ok(Outcome::Split { cells, action, e_abs, e_rel })
    }
}

/// Refines a feasible partition (as produced by the first phase) of the
/// program `prog`, given in original coordinates.
pub fn refine_partition(
    tree: &PartitionTree,
    prog: &ParametricProgram,
    cfg: &Phase2Config,
) -> Result<Phase2Output, Phase2Error> {
    let start = Instant::now();
    cfg.validate()?;
    if prog.p != tree.p || prog.m != tree.m {
        return Err(Phase2Error::InvalidInput(format!(
            "tree has p = {}, m = {} but the program has p = {}, m = {}",
            tree.p, tree.m, prog.p, prog.m
        )));
    }
    let sprog = tree.scaling.rewrite_program(prog);
    let solver = MiSolver::new(&sprog, cfg.mi.clone());
    let all = solver.uses_enumeration().then(|| sprog.admissible());
    let refiner = Refiner { solver: &solver, cfg, all };

    let mut tree = tree.clone();
    if tree.first_layer() == 0 {
        let delta = tree.nodes[0].delta.clone().ok_or_else(|| {
            Phase2Error::InvalidInput("tree has neither cells nor a commutation on its root".into())
        })?;
        let cells = delaunay_triangulate(&tree.theta())?;
        tree.add_children(0, cells, Some(delta));
    }
    let total = tree.node_volume(0)?;
    let mut stack: Vec<usize> = tree.leaf_ids().into_iter().rev().collect();
    for &id in &stack {
        tree.nodes[id].status = NodeStatus::Open;
    }
    // Seed the cache with the commutations already in use.
    for &id in stack.iter().rev() {
        let n = &tree.nodes[id];
        if let Some(d) = &n.delta {
            solver.cache().record(d, &n.vertices[0]);
        }
    }

    let pool = if cfg.deterministic {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Phase2Error::InvalidInput(e.to_string()))?,
        )
    };
    let batch = pool.as_ref().map_or(1, |p| p.current_num_threads().max(1));

    let mut events = EventLog::default();
    let mut iterations = 0usize;
    let mut reassignments = 0usize;
    let mut closed = 0.0;
    while !stack.is_empty() {
        let take = batch.min(stack.len());
        let ids: Vec<usize> = (0..take).map(|_| stack.pop().unwrap()).collect();
        if iterations + ids.len() > cfg.max_iterations {
            return Err(Phase2Error::IterationCapExceeded(cfg.max_iterations));
        }
        let nodes: Vec<Node> = ids.iter().map(|&id| tree.nodes[id].clone()).collect();
        let outcomes: Vec<_> = match &pool {
            None => nodes.iter().map(|n| refiner.process(n)).collect(),
            Some(pool) => pool.install(|| nodes.par_iter().map(|n| refiner.process(n)).collect()),
        };
        let mut pushed = Vec::new();
        for (node, outcome) in nodes.iter().zip(outcomes) {
            iterations += 1;
            let id = node.id;
            let volume = tree.node_volume(id)?;
            let action = match outcome? {
                Outcome::Close { status, e_abs, e_rel } => {
                    let n = &mut tree.nodes[id];
                    n.status = status;
                    n.e_abs = e_abs;
                    n.e_rel = e_rel;
                    closed += volume;
                    match status {
                        NodeStatus::OnlyFeasible => "only-feasible",
                        NodeStatus::WarnedIllConditioned => "warn",
                        _ => "certify",
                    }
                }
                Outcome::Split { cells, action, e_abs, e_rel } => {
                    let parent_delta = node.delta.clone();
                    tree.nodes[id].e_abs = e_abs;
                    tree.nodes[id].e_rel = e_rel;
                    let simplices = cells.iter().map(|(s, _, _)| s.clone()).collect();
                    let kids = tree.add_children(id, simplices, None);
                    for (&k, (_, d, vals)) in kids.iter().zip(cells) {
                        if Some(&d) != parent_delta.as_ref() {
                            reassignments += 1;
                            log::debug!("cell {k} reassigned to commutation {d}");
                        }
                        tree.nodes[k].delta = Some(d);
                        tree.nodes[k].vertex_values = Some(vals);
                    }
                    pushed.push(kids);
                    action
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
    log::info!(
        "refined partition: {} leaves after {iterations} iterations, {reassignments} reassignments",
        tree.leaves().count()
    );
    Ok(Phase2Output { tree, events, iterations, runtime: start.elapsed(), reassignments })
}

/// Per-leaf certification table followed by the warned volume fraction.
pub fn certification_report(tree: &PartitionTree) -> Result<String, GeometryError> {
    let total = tree.node_volume(0)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:e}"));
    let mut out = String::from("leaf,status,e_abs,e_rel,rho,depth\n");
    let mut warned = 0.0;
    for n in tree.leaves() {
        let s = n.simplex()?;
        if n.status == NodeStatus::WarnedIllConditioned {
            warned += s.volume()?;
        }
        writeln!(
            out,
            "{},{},{},{},{:e},{}",
            n.id,
            n.status,
            opt(n.e_abs),
            opt(n.e_rel),
            s.condition_number().unwrap_or(f64::INFINITY),
            n.depth
        )
        .unwrap();
    }
    writeln!(out, "# warned_volume_fraction {:.9}", warned / total).unwrap();
    Ok(out)
}
