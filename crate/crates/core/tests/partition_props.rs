use std::sync::OnceLock;

use commutree::geometry::Point;
use commutree::instance::{toy2d, toy2d_with_offset, NamedInstance};
use commutree::mi::{MiSettings, MiSolver};
use commutree::phase1::{build_partition, Phase1Config};
use commutree::phase2::{over_approx_value, refine_partition, OverApproximator, Phase2Config};
use commutree::tree::{read_tree, write_tree, NodeStatus, PartitionTree};
use nalgebra::DVector;
use proptest::prelude::*;

struct Fixture {
    toy: NamedInstance,
    phase1: PartitionTree,
    phase2: PartitionTree,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let toy = toy2d_with_offset(0.05);
        let phase1 = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap().tree;
        let cfg = Phase2Config { eps_abs: 0.1, ..Default::default() };
        let phase2 = refine_partition(&phase1, &toy.program, &cfg).unwrap().tree;
        Fixture { toy, phase1, phase2 }
    })
}

fn theta_point(tree: &PartitionTree, x: f64, y: f64) -> Point {
    // Theta of the 2-D toys is the box [-1, 1]^2.
    let p = DVector::from_vec(vec![x, y]);
    assert_eq!(tree.p, 2);
    p
}

fn min_weight_in(tree: &PartitionTree, leaf: usize, scaled: &Point) -> f64 {
    tree.nodes[leaf].simplex().unwrap().barycentric(scaled).unwrap().min_weight()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn query_agrees_with_linear_scan(x in -0.999f64..0.999, y in -0.999f64..0.999) {
        let f = fixture();
        for tree in [&f.phase1, &f.phase2] {
            let theta = theta_point(tree, x, y);
            let q = tree.query(&theta).unwrap();
            let scaled = tree.scaling.apply(&theta);
            prop_assert!(tree.nodes[q.leaf].is_leaf());
            prop_assert!(min_weight_in(tree, q.leaf, &scaled) >= -1e-9);
            prop_assert!(q.tests <= tree.query_test_bound());
            let lin = tree.locate_linear_scaled(&scaled).unwrap();
            if lin != q.leaf {
                // Only possible on a shared facet.
                prop_assert!(min_weight_in(tree, lin, &scaled).abs() < 1e-9
                    || min_weight_in(tree, q.leaf, &scaled).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn certified_leaves_are_feasible_at_samples(x in -0.999f64..0.999, y in -0.999f64..0.999) {
        let f = fixture();
        let theta = theta_point(&f.phase2, x, y);
        let q = f.phase2.query(&theta).unwrap();
        let out = f.toy.program.solve_fixed(&theta, q.delta.as_ref().unwrap()).unwrap();
        prop_assert!(out.is_optimal());
    }

    #[test]
    fn phase1_conserves_volume_for_any_offset(offset in 0.0f64..0.5) {
        let toy = toy2d_with_offset(offset);
        let tree = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap().tree;
        let total = tree.node_volume(0).unwrap();
        let sum: f64 = tree.leaves().map(|n| tree.node_volume(n.id).unwrap()).sum();
        prop_assert!((sum - total).abs() <= 1e-9 * total);
        prop_assert!(tree.is_finalized());
    }
}

#[test]
fn tree_files_round_trip() {
    let f = fixture();
    for tree in [&f.phase1, &f.phase2] {
        let text = write_tree(tree);
        let back = read_tree(&text).unwrap();
        assert_eq!(&back, tree);
        assert_eq!(write_tree(&back), text);
    }
}

#[test]
fn interpolant_dominates_leaf_values() {
    let f = fixture();
    let tree = &f.phase2;
    let sprog = tree.scaling.rewrite_program(&f.toy.program);
    let solver = MiSolver::new(&sprog, MiSettings::default());
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for leaf in tree.leaves() {
        let s = leaf.simplex().unwrap();
        let d = leaf.delta.as_ref().unwrap();
        let vals = leaf.vertex_values.clone().unwrap();
        let oa = OverApproximator::new(s.clone(), vals.clone()).unwrap();
        for (v, val) in s.vertices().iter().zip(&vals) {
            let exact = solver.fixed(v, d).unwrap().value.unwrap();
            assert!((exact - val).abs() <= 1e-7);
            assert!((over_approx_value(&oa, v).unwrap() - exact).abs() <= 1e-7);
        }
        for _ in 0..50 {
            let th = s.sample_uniform(&mut rng);
            let exact = solver.fixed(&th, d).unwrap().value.unwrap();
            assert!(oa.value(&th).unwrap() >= exact - 1e-7);
        }
    }
}

#[test]
fn parallel_phase2_matches_volume() {
    let toy = toy2d();
    let p1 = build_partition(&toy.program, &toy.theta, &Phase1Config::default()).unwrap();
    let cfg = Phase2Config { eps_abs: 0.05, deterministic: false, workers: 3, ..Default::default() };
    let p2 = refine_partition(&p1.tree, &toy.program, &cfg).unwrap();
    let total = p2.tree.node_volume(0).unwrap();
    let sum: f64 = p2.tree.leaves().map(|n| p2.tree.node_volume(n.id).unwrap()).sum();
    assert!((sum - total).abs() <= 1e-9 * total);
    assert!(p2.tree.leaves().all(|n| n.status != NodeStatus::Open));
}
