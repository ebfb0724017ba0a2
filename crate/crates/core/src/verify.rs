//! Post-hoc checks of a finished partition against the solver: vertex and
//! sampled feasibility of every leaf, sampled suboptimality of certified
//! leaves, volume conservation and point location.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::Point;
use crate::mi::{MiError, MiSettings, MiSolver};
use crate::problem::ParametricProgram;
use crate::tree::{Node, NodeStatus, PartitionTree};

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub samples_per_leaf: usize,
    pub seed: u64,
    /// Suboptimality targets. When both are `None` each certified leaf is
    /// held to its own stored bounds.
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
    /// Slack on every suboptimality comparison.
    pub tol: f64,
    pub volume_rtol: f64,
    pub mi: MiSettings,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples_per_leaf: 100,
            seed: 0,
            eps_abs: None,
            eps_rel: None,
            tol: 1e-6,
            volume_rtol: 1e-6,
            mi: MiSettings::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckKind {
    Open,
    Admissible,
    VertexFeasible,
    SampleFeasible,
    Suboptimality,
    Volume,
    Query,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Open => "open-leaf",
            Self::Admissible => "admissible",
            Self::VertexFeasible => "vertex-feasible",
            Self::SampleFeasible => "sample-feasible",
            Self::Suboptimality => "suboptimality",
            Self::Volume => "volume",
            Self::Query => "query",
        })
    }
}

/// One violated check. `theta` is in the original parameter coordinates.
#[derive(Clone, Debug)]
pub struct Violation {
    pub check: CheckKind,
    pub leaf: Option<usize>,
    pub theta: Option<Vec<f64>>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.check)?;
        if let Some(l) = self.leaf {
            write!(f, " leaf {l}")?;
        }
        if let Some(t) = &self.theta {
            write!(f, " theta {t:?}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub leaves: usize,
    pub vertex_solves: usize,
    pub samples: usize,
    pub suboptimality_samples: usize,
    /// Largest sampled `V*_f(theta) - V*(theta)` over certified leaves.
    pub max_gap: f64,
    pub volume_error: f64,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "leaves {}", self.leaves)?;
        writeln!(f, "vertex_solves {}", self.vertex_solves)?;
        writeln!(f, "samples {}", self.samples)?;
        writeln!(f, "suboptimality_samples {}", self.suboptimality_samples)?;
        writeln!(f, "max_gap {:e}", self.max_gap)?;
        writeln!(f, "volume_relative_error {:e}", self.volume_error)?;
        writeln!(f, "violations {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "violation {v}")?;
        }
        write!(f, "result {}", if self.passed() { "pass" } else { "fail" })
    }
}

#[derive(Default)]
struct LeafOutcome {
    vertex_solves: usize,
    samples: usize,
    sub_samples: usize,
    max_gap: f64,
    violations: Vec<Violation>,
}

struct Checker<'a> {
    tree: &'a PartitionTree,
    solver: MiSolver<'a>,
    cfg: &'a VerifyConfig,
}

impl Checker<'_> {
    fn violation(&self, check: CheckKind, leaf: &Node, theta: Option<&Point>, detail: String) -> Violation {
        Violation {
            check,
            leaf: Some(leaf.id),
            theta: theta.map(|t| self.tree.scaling.unapply(t).iter().copied().collect()),
            detail,
        }
    }

    fn allowed_gap(&self, leaf: &Node, v_star: f64) -> f64 {
        let (abs, rel) = if self.cfg.eps_abs.is_some() || self.cfg.eps_rel.is_some() {
            (self.cfg.eps_abs, self.cfg.eps_rel)
        } else {
            (leaf.e_abs, leaf.e_rel)
        };
        let a = abs.unwrap_or(f64::NEG_INFINITY);
        let r = rel.map_or(f64::NEG_INFINITY, |r| r * v_star.abs());
        a.max(r) + self.cfg.tol
    }

    fn leaf(&self, leaf: &Node) -> Result<LeafOutcome, MiError> {
        let mut out = LeafOutcome::default();
        if !leaf.status.is_closed() {
            out.violations.push(self.violation(CheckKind::Open, leaf, None, format!("status {}", leaf.status)));
            return Ok(out);
        }
        let Some(delta) = &leaf.delta else {
            out.violations.push(self.violation(CheckKind::Admissible, leaf, None, "closed leaf without commutation".into()));
            return Ok(out);
        };
        if !self.solver.program().is_admissible(delta) {
            out.violations.push(self.violation(CheckKind::Admissible, leaf, None, format!("commutation {delta} is not admissible")));
            return Ok(out);
        }
        let simplex = match leaf.simplex() {
            Ok(s) => s,
            Err(e) => {
                out.violations.push(self.violation(CheckKind::VertexFeasible, leaf, None, e.to_string()));
                return Ok(out);
            }
        };
        for v in simplex.vertices() {
            out.vertex_solves += 1;
            if !self.solver.fixed(v, delta)?.feasible() {
                out.violations.push(self.violation(CheckKind::VertexFeasible, leaf, Some(v), format!("{delta} infeasible")));
            }
        }
        if !out.violations.is_empty() {
            return Ok(out);
        }
        let certified = leaf.status == NodeStatus::CertifiedEpsSuboptimal;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (leaf.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..self.cfg.samples_per_leaf {
            let theta = simplex.sample_uniform(&mut rng);
            out.samples += 1;
            let fixed = self.solver.fixed(&theta, delta)?;
            if !fixed.feasible() {
                out.violations.push(self.violation(CheckKind::SampleFeasible, leaf, Some(&theta), format!("{delta} infeasible")));
                continue;
            }
            match self.tree.query_scaled(&theta) {
                Ok(q) if q.leaf == leaf.id => {}
                Ok(q) => {
                    let inside = self.tree.nodes[q.leaf]
                        .simplex()
                        .and_then(|s| s.barycentric(&theta))
                        .is_ok_and(|b| b.min_weight() >= -1e-9);
                    if !inside {
                        out.violations.push(self.violation(
                            CheckKind::Query,
                            leaf,
                            Some(&theta),
                            format!("query returned leaf {} which does not contain the point", q.leaf),
                        ));
                    }
                }
                Err(e) => out.violations.push(self.violation(CheckKind::Query, leaf, Some(&theta), e.to_string())),
            }
            if !certified {
                continue;
            }
            let best = self.solver.solve_minlp(&theta)?;
            let (Some(v_delta), Some(v_star)) = (fixed.value, best.value) else { continue };
            out.sub_samples += 1;
            let gap = v_delta - v_star;
            out.max_gap = out.max_gap.max(gap);
            let allowed = self.allowed_gap(leaf, v_star);
            if gap > allowed {
                out.violations.push(self.violation(
                    CheckKind::Suboptimality,
                    leaf,
                    Some(&theta),
                    format!("gap {gap:e} exceeds {allowed:e}"),
                ));
            }
        }
        Ok(out)
    }
}

/// Runs every check. `prog` is in the original parameter coordinates.
pub fn verify_tree(
    prog: &ParametricProgram,
    tree: &PartitionTree,
    cfg: &VerifyConfig,
) -> Result<VerifyReport, MiError> {
    let sprog = tree.scaling.rewrite_program(prog);
    let checker = Checker { tree, solver: MiSolver::new(&sprog, cfg.mi.clone()), cfg };
    let leaves: Vec<&Node> = tree.leaves().collect();
    let outcomes: Vec<Result<LeafOutcome, MiError>> = leaves.par_iter().map(|l| checker.leaf(l)).collect();

    let mut report = VerifyReport { leaves: leaves.len(), ..Default::default() };
    for o in outcomes {
        let o = o?;
        report.vertex_solves += o.vertex_solves;
        report.samples += o.samples;
        report.suboptimality_samples += o.sub_samples;
        report.max_gap = report.max_gap.max(o.max_gap);
        report.violations.extend(o.violations);
    }

    let total = tree.node_volume(0);
    let sum: Result<f64, _> = leaves.iter().map(|l| tree.node_volume(l.id)).sum();
    match (total, sum) {
        (Ok(t), Ok(s)) => {
            report.volume_error = (s - t).abs() / t;
            if report.volume_error > cfg.volume_rtol {
                report.violations.push(Violation {
                    check: CheckKind::Volume,
                    leaf: None,
                    theta: None,
                    detail: format!("leaf volumes sum to {s:e}, Theta has {t:e}"),
                });
            }
        }
        (Err(e), _) | (_, Err(e)) => report.violations.push(Violation {
            check: CheckKind::Volume,
            leaf: None,
            theta: None,
            detail: e.to_string(),
        }),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{toy1d, toy1d_offset};
    use crate::phase1::{build_partition, Phase1Config};
    use crate::phase2::{refine_partition, Phase2Config};

    #[test]
    fn sound_phase1_tree_passes() {
        let toy = toy1d();
        let out = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        let rep = verify_tree(&toy.program, &out.tree, &VerifyConfig::default()).unwrap();
        assert!(rep.passed(), "{rep}");
        assert_eq!(rep.samples, 200);
        assert_eq!(rep.suboptimality_samples, 0);
    }

    #[test]
    fn flipped_commutation_is_reported() {
        let toy = toy1d();
        let mut tree = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap().tree;
        let id = tree.leaf_ids()[0];
        let d = tree.nodes[id].delta.clone().unwrap();
        tree.nodes[id].delta = Some(crate::problem::Commutation::new(d.bits().iter().map(|b| !b).collect()));
        let cfg = VerifyConfig { samples_per_leaf: 0, ..Default::default() };
        let rep = verify_tree(&toy.program, &tree, &cfg).unwrap();
        assert!(!rep.passed());
        assert!(rep.violations.iter().all(|v| v.leaf == Some(id)));
        assert!(rep.violations.iter().any(|v| v.check == CheckKind::VertexFeasible));
    }

    #[test]
    fn certified_tree_meets_its_bounds() {
        let toy = toy1d_offset();
        let p1 = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        let cfg = Phase2Config { eps_abs: 0.05, ..Default::default() };
        let p2 = refine_partition(&p1.tree, &toy.program, &cfg).unwrap();
        let vcfg = VerifyConfig { samples_per_leaf: 50, eps_abs: Some(0.05), ..Default::default() };
        let rep = verify_tree(&toy.program, &p2.tree, &vcfg).unwrap();
        assert!(rep.passed(), "{rep}");
        assert!(rep.suboptimality_samples > 0);
        assert!(rep.max_gap <= 0.05 + 1e-6);
    }

    #[test]
    fn tight_target_catches_uncertified_gap() {
        // Phase II at 0.2 leaves gaps above 0.01 that a stricter target flags.
        let toy = toy1d_offset();
        let p1 = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
        let cfg = Phase2Config { eps_abs: 0.2, ..Default::default() };
        let p2 = refine_partition(&p1.tree, &toy.program, &cfg).unwrap();
        let vcfg = VerifyConfig { samples_per_leaf: 200, eps_abs: Some(0.01), ..Default::default() };
        let rep = verify_tree(&toy.program, &p2.tree, &vcfg).unwrap();
        if rep.max_gap > 0.01 + 1e-6 {
            assert!(rep.violations.iter().any(|v| v.check == CheckKind::Suboptimality));
        }
    }

    #[test]
    fn open_leaf_fails() {
        let toy = toy1d();
        let mut tree = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap().tree;
        let id = tree.leaf_ids()[1];
        tree.nodes[id].status = NodeStatus::Open;
        let rep = verify_tree(&toy.program, &tree, &VerifyConfig::default()).unwrap();
        assert!(rep.violations.iter().any(|v| v.check == CheckKind::Open && v.leaf == Some(id)));
    }
}
