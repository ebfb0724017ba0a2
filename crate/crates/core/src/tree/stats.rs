use std::fmt;
use std::fmt::Write as _;

use super::{NodeStatus, PartitionTree};
use crate::geometry::GeometryError;

/// One row of an algorithm's event log.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub iter: usize,
    /// Seconds since the run started.
    pub t_wall: f64,
    pub action: &'static str,
    pub cell_volume: f64,
    /// Fraction of the root volume covered by closed leaves.
    pub closed_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, action: &str) -> usize {
        self.events.iter().filter(|e| e.action == action).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,t_wall,action,cell_volume,closed_fraction\n");
        for e in &self.events {
            writeln!(out, "{},{:.6},{},{:e},{:.9}", e.iter, e.t_wall, e.action, e.cell_volume, e.closed_fraction)
                .unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeStats {
    /// Leaf count.
    pub leaves: usize,
    pub first_layer: usize,
    /// Maximum depth with the root at depth 0.
    pub max_depth: usize,
    /// Maximum depth counted from the first-layer cells.
    pub depth_below_first_layer: usize,
    /// Nodes other than the root.
    pub nodes: usize,
    pub theta_volume: f64,
    /// Fraction of the root volume held by leaves of each status.
    pub volume_fraction: Vec<(NodeStatus, f64)>,
    pub max_e_abs: Option<f64>,
    pub max_e_rel: Option<f64>,
    pub kappa_hat: Option<f64>,
    /// Iteration count and wall time of the run that built the tree, when known.
    pub iterations: Option<usize>,
    pub runtime_s: Option<f64>,
}

/// Effective tolerance inferred from a leaf count and a fitted leaf count
/// `fitted`, `exp(-log2(actual) / log2(fitted))`, clamped to (0, 1].
pub fn kappa_hat(actual: usize, fitted: f64) -> Option<f64> {
    if !(fitted > 1.0) || actual == 0 {
        return None;
    }
    let k = (-(actual as f64).log2() / fitted.log2()).exp();
    Some(k.clamp(f64::MIN_POSITIVE, 1.0))
}

pub fn statistics(tree: &PartitionTree, fitted_leaves: Option<f64>) -> Result<TreeStats, GeometryError> {
    let theta_volume = tree.node_volume(0)?;
    let mut volume_fraction: Vec<(NodeStatus, f64)> =
        NodeStatus::ALL.iter().filter(|s| **s != NodeStatus::Branch).map(|s| (*s, 0.0)).collect();
    let mut max_e_abs: Option<f64> = None;
    let mut max_e_rel: Option<f64> = None;
    let mut leaves = 0;
    for n in tree.leaves() {
        leaves += 1;
        let v = tree.node_volume(n.id)?;
        if let Some(slot) = volume_fraction.iter_mut().find(|(s, _)| *s == n.status) {
            slot.1 += v / theta_volume;
        }
        if let Some(e) = n.e_abs {
            max_e_abs = Some(max_e_abs.map_or(e, |m| m.max(e)));
        }
        if let Some(e) = n.e_rel {
            max_e_rel = Some(max_e_rel.map_or(e, |m| m.max(e)));
        }
    }
    let max_depth = tree.max_depth();
    Ok(TreeStats {
        leaves,
        first_layer: tree.first_layer(),
        max_depth,
        depth_below_first_layer: max_depth.saturating_sub(1),
        nodes: tree.nodes.len() - 1,
        theta_volume,
        volume_fraction,
        max_e_abs,
        max_e_rel,
        kappa_hat: fitted_leaves.and_then(|f| kappa_hat(leaves, f)),
        iterations: None,
        runtime_s: None,
    })
}

impl TreeStats {
    /// Node count bound for trees whose internal nodes below the root all
    /// have at least two children.
    pub fn node_bound(&self) -> usize {
        self.first_layer + 2 * (self.leaves - self.first_layer)
    }

    pub fn with_run(mut self, iterations: usize, runtime_s: f64) -> Self {
        self.iterations = Some(iterations);
        self.runtime_s = Some(runtime_s);
        self
    }

    /// The same key/value lines as the text form, as `key,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        for line in self.to_string().lines() {
            if let Some((k, v)) = line.split_once(' ') {
                writeln!(out, "{k},{v}").unwrap();
            }
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:e}"))
}

impl fmt::Display for TreeStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "leaves {}", self.leaves)?;
        writeln!(f, "first_layer {}", self.first_layer)?;
        writeln!(f, "max_depth {}", self.max_depth)?;
        writeln!(f, "depth_below_first_layer {}", self.depth_below_first_layer)?;
        writeln!(f, "nodes {}", self.nodes)?;
        writeln!(f, "theta_volume {:e}", self.theta_volume)?;
        for (s, v) in &self.volume_fraction {
            writeln!(f, "volume_fraction.{s} {v:.9}")?;
        }
        writeln!(f, "max_e_abs {}", opt(self.max_e_abs))?;
        writeln!(f, "max_e_rel {}", opt(self.max_e_rel))?;
        writeln!(f, "kappa_hat {}", opt(self.kappa_hat))?;
        writeln!(f, "iterations {}", self.iterations.map_or_else(|| "-".into(), |i| i.to_string()))?;
        write!(f, "runtime_s {}", opt(self.runtime_s))
    }
}
