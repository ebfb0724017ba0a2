//! Partition tree of simplicial cells and point location.

mod format;
mod stats;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{GeometryError, Point, Polytope, Simplex, MEMBERSHIP_TOL};
use crate::problem::{Commutation, ScalingTransform};

pub use format::{read_tree, write_tree};
pub use stats::{kappa_hat, statistics, Event, EventLog, TreeStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("parameter lies outside Theta")]
    OutsideTheta,
    #[error("parameter has {0} entries, tree has p = {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeStatus {
    Open,
    /// Internal node.
    Branch,
    ClosedFeasible,
    CertifiedEpsSuboptimal,
    OnlyFeasible,
    WarnedIllConditioned,
}

impl NodeStatus {
    pub const ALL: [NodeStatus; 6] = [
        NodeStatus::Open,
        NodeStatus::Branch,
        NodeStatus::ClosedFeasible,
        NodeStatus::CertifiedEpsSuboptimal,
        NodeStatus::OnlyFeasible,
        NodeStatus::WarnedIllConditioned,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            NodeStatus::Open => "open",
            NodeStatus::Branch => "branch",
            NodeStatus::ClosedFeasible => "feasible",
            NodeStatus::CertifiedEpsSuboptimal => "certified",
            NodeStatus::OnlyFeasible => "only-feasible",
            NodeStatus::WarnedIllConditioned => "warned",
        }
    }

    pub fn is_closed(self) -> bool {
        !matches!(self, NodeStatus::Open | NodeStatus::Branch)
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NodeStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeStatus::ALL.into_iter().find(|t| t.tag() == s).ok_or_else(|| format!("unknown status '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Simplex vertices (the root holds the vertices of Theta).
    pub vertices: Vec<Point>,
    pub status: NodeStatus,
    pub delta: Option<Commutation>,
    /// Optimal values of `delta` at the vertices, when known.
    pub vertex_values: Option<Vec<f64>>,
    pub e_abs: Option<f64>,
    pub e_rel: Option<f64>,
    /// Root has depth 0, first-layer cells depth 1.
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn simplex(&self) -> Result<Simplex, GeometryError> {
        Simplex::new(self.vertices.clone())
    }
}

/// Tree over a scaled parameter space; `scaling` maps original parameters
/// into the stored coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTree {
    pub p: usize,
    pub m: usize,
    pub scaling: ScalingTransform,
    pub nodes: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub leaf: usize,
    pub delta: Option<Commutation>,
    pub status: NodeStatus,
    /// Simplex membership tests performed.
    pub tests: usize,
}

impl PartitionTree {
    /// Tree holding only the root region `theta` (in scaled coordinates).
    pub fn new(theta: &Polytope, m: usize, scaling: ScalingTransform) -> Self {
        let root = Node {
            id: 0,
            parent: None,
            children: Vec::new(),
            vertices: theta.vertices().to_vec(),
            status: NodeStatus::Open,
            delta: None,
            vertex_values: None,
            e_abs: None,
            e_rel: None,
            depth: 0,
        };
        Self { p: theta.dim(), m, scaling, nodes: vec![root] }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn theta(&self) -> Polytope {
        Polytope::new(self.nodes[0].vertices.clone()).expect("root region is full-dimensional")
    }

    /// Appends children to `parent` (marking it a branch) and returns their ids.
    pub fn add_children(&mut self, parent: usize, cells: Vec<Simplex>, delta: Option<Commutation>) -> Vec<usize> {
        let depth = self.nodes[parent].depth + 1;
        let mut ids = Vec::with_capacity(cells.len());
        for s in cells {
            let id = self.nodes.len();
            self.nodes.push(Node {
                id,
                parent: Some(parent),
                children: Vec::new(),
                vertices: s.into_vertices(),
                status: NodeStatus::Open,
                delta: delta.clone(),
                vertex_values: None,
                e_abs: None,
                e_rel: None,
                depth,
            });
            ids.push(id);
        }
        let node = &mut self.nodes[parent];
        node.children.extend(&ids);
        node.status = NodeStatus::Branch;
        ids
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf() && n.id != 0)
    }

    pub fn leaf_ids(&self) -> Vec<usize> {
        self.leaves().map(|n| n.id).collect()
    }

    /// Number of first-layer cells.
    pub fn first_layer(&self) -> usize {
        self.nodes[0].children.len()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn is_finalized(&self) -> bool {
        self.first_layer() > 0 && self.leaves().all(|n| n.status.is_closed() && n.delta.is_some())
    }

    pub fn node_volume(&self, id: usize) -> Result<f64, GeometryError> {
        if id == 0 {
            self.theta().volume()
        } else {
            self.nodes[id].simplex()?.volume()
        }
    }

    /// Point location for a parameter in original coordinates.
    pub fn query(&self, theta: &Point) -> Result<QueryResult, TreeError> {
        if theta.len() != self.p {
            return Err(TreeError::DimensionMismatch(theta.len(), self.p));
        }
        self.query_scaled(&self.scaling.apply(theta))
    }

    /// Point location in stored (scaled) coordinates. The first-layer cells
    /// are all tested; below that the last child is taken without a test
    /// when the others reject the point, since children cover their parent.
    pub fn query_scaled(&self, theta: &Point) -> Result<QueryResult, TreeError> {
        let mut tests = 0usize;
        let contains = |id: usize, tests: &mut usize| -> Result<bool, TreeError> {
            *tests += 1;
            let bc = self.nodes[id].simplex()?.barycentric(theta)?;
            Ok(bc.min_weight() >= MEMBERSHIP_TOL)
        };
        let mut current = None;
        for &c in &self.nodes[0].children {
            if contains(c, &mut tests)? {
                current = Some(c);
                break;
            }
        }
        let mut id = current.ok_or(TreeError::OutsideTheta)?;
        while !self.nodes[id].is_leaf() {
            let kids = &self.nodes[id].children;
            let mut next = *kids.last().unwrap();
            for &c in &kids[..kids.len() - 1] {
                if contains(c, &mut tests)? {
                    next = c;
                    break;
                }
            }
            id = next;
        }
        let n = &self.nodes[id];
        Ok(QueryResult { leaf: id, delta: n.delta.clone(), status: n.status, tests })
    }

    /// First leaf (in id order) containing the scaled point.
    pub fn locate_linear_scaled(&self, theta: &Point) -> Option<usize> {
        self.leaves()
            .find(|n| {
                n.simplex()
                    .and_then(|s| s.barycentric(theta))
                    .map(|b| b.min_weight() >= MEMBERSHIP_TOL)
                    .unwrap_or(false)
            })
            .map(|n| n.id)
    }

    /// Upper bound on membership tests per query.
    pub fn query_test_bound(&self) -> usize {
        (self.first_layer() + self.max_depth()) * (self.p + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    pub(crate) fn toy_tree() -> PartitionTree {
        let theta = Polytope::from_rows(&[&[-1.0], &[1.0]]).unwrap();
        let mut t = PartitionTree::new(&theta, 1, ScalingTransform::identity(1));
        let cell = Simplex::from_rows(&[&[-1.0], &[1.0]]).unwrap();
        let first = t.add_children(0, vec![cell.clone()], None)[0];
        let [a, b] = cell.bisect();
        let kids = t.add_children(first, vec![a, b], None);
        for (k, bits) in kids.iter().zip(["0", "1"]) {
            t.nodes[*k].status = NodeStatus::ClosedFeasible;
            t.nodes[*k].delta = Some(bits.parse().unwrap());
        }
        t
    }

    #[test]
    fn toy_queries() {
        let t = toy_tree();
        assert!(t.is_finalized());
        let q = t.query(&DVector::from_element(1, 0.5)).unwrap();
        assert_eq!(q.delta.unwrap().to_string(), "0");
        assert_eq!(t.nodes[q.leaf].vertices.iter().map(|v| v[0]).sum::<f64>(), 1.0);
        let q = t.query(&DVector::from_element(1, -1.0)).unwrap();
        assert_eq!(q.delta.unwrap().to_string(), "1");
        assert!(q.tests <= t.query_test_bound());
        assert_eq!(t.query(&DVector::from_element(1, 2.0)), Err(TreeError::OutsideTheta));
    }

    #[test]
    fn status_tags_round_trip() {
        for s in NodeStatus::ALL {
            assert_eq!(s.tag().parse::<NodeStatus>().unwrap(), s);
        }
    }
}
