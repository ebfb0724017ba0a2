use commutree::conic::{solve, ConeSpec, ConicProblem, SolveStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `min c'x s.t. G x <= h`.
fn lp(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> ConicProblem {
    ConicProblem {
        c: c.clone(),
        a: g.clone(),
        b: h.clone(),
        cone: ConeSpec::new(vec![ConeSpec::nonneg(h.len())]),
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

/// Minimum over all basic feasible points.
fn vertex_enumeration(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Option<f64> {
    let n = c.len();
    let mut best: Option<f64> = None;
    for rows in subsets(g.nrows(), n) {
        let sub = g.select_rows(rows.iter());
        let rhs = DVector::from_iterator(n, rows.iter().map(|&i| h[i]));
        if sub.determinant().abs() < 1e-10 {
            continue;
        }
        let lu = sub.lu();
        let Some(x) = lu.solve(&rhs) else { continue };
        if (g * &x - h).max() <= 1e-9 {
            let v = c.dot(&x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

fn random_bounded_lp(rng: &mut ChaCha8Rng) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = rng.random_range(1..=4);
    let extra = rng.random_range(0..=4);
    let d = 2 * n + extra;
    let mut g = DMatrix::zeros(d, n);
    let mut h = DVector::zeros(d);
    for j in 0..n {
        g[(2 * j, j)] = 1.0;
        h[2 * j] = 5.0;
        g[(2 * j + 1, j)] = -1.0;
        h[2 * j + 1] = 5.0;
    }
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    for i in 2 * n..d {
        for j in 0..n {
            g[(i, j)] = rng.random_range(-1.0..1.0);
        }
        h[i] = g.row(i).dot(&x0.transpose()) + rng.random_range(0.0..1.0);
    }
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    (c, g, h)
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let (c, g, h) = random_bounded_lp(&mut rng);
        let expected = vertex_enumeration(&c, &g, &h).expect("constructed feasible");
        let out = solve(&lp(&c, &g, &h)).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal, "{out:?}");
        assert!((out.value.unwrap() - expected).abs() <= 1e-4, "{} vs {expected}", out.value.unwrap());
        let x = out.x.unwrap();
        assert!((&g * &x - &h).max() <= 1e-6);
    }
}

#[test]
fn constructed_infeasible_instances_have_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..20 {
        let (c, mut g, mut h) = random_bounded_lp(&mut rng);
        let n = c.len();
        // Append a^T x <= beta and -a^T x <= -beta - gap.
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let beta = rng.random_range(-1.0..1.0);
        let gap = rng.random_range(0.1..1.0);
        let d = g.nrows();
        g = g.insert_rows(d, 2, 0.0);
        h = h.insert_rows(d, 2, 0.0);
        for j in 0..n {
            g[(d, j)] = a[j];
            g[(d + 1, j)] = -a[j];
        }
        h[d] = beta;
        h[d + 1] = -beta - gap;
        let prob = if k % 2 == 0 {
            lp(&c, &g, &h)
        } else {
            // Same rows followed by an unrelated second-order block.
            let mut a2 = g.clone().insert_rows(d + 2, 3, 0.0);
            a2[(d + 2, 0)] = -1.0;
            let mut b2 = h.clone().insert_rows(d + 2, 3, 0.0);
            b2[d + 3] = 1.0;
            ConicProblem {
                c: c.clone(),
                a: a2,
                b: b2,
                cone: ConeSpec::new(vec![ConeSpec::nonneg(d + 2), ConeSpec::soc(3)]),
            }
        };
        let out = solve(&prob).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible, "instance {k}");
        let z = out.z.unwrap();
        // Certificate: A'z ~ 0, b'z < 0, z in the dual cone.
        let btz = prob.b.dot(&z);
        assert!(btz < 0.0);
        assert!((prob.a.transpose() * &z).amax() <= 1e-6 * btz.abs());
        assert!(prob.cone.contains(&z, 1e-9));
    }
}

#[test]
fn least_norm_socp_matches_projection() {
    // min ||x - a|| over the box [-1, 1]^n  =  distance from a to the box.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let n = rng.random_range(1..=4);
        let a = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        // variables (t, x); rows: box 2n, then SOC (t, x - a).
        let mut am = DMatrix::zeros(2 * n + n + 1, n + 1);
        let mut b = DVector::zeros(2 * n + n + 1);
        for j in 0..n {
            am[(2 * j, j + 1)] = 1.0;
            b[2 * j] = 1.0;
            am[(2 * j + 1, j + 1)] = -1.0;
            b[2 * j + 1] = 1.0;
        }
        am[(2 * n, 0)] = -1.0;
        for j in 0..n {
            am[(2 * n + 1 + j, j + 1)] = -1.0;
            b[2 * n + 1 + j] = -a[j];
        }
        let mut c = DVector::zeros(n + 1);
        c[0] = 1.0;
        let prob = ConicProblem {
            c,
            a: am,
            b,
            cone: ConeSpec::new(vec![ConeSpec::nonneg(2 * n), ConeSpec::soc(n + 1)]),
        };
        let out = solve(&prob).unwrap();
        let expected = a.map(|v: f64| (v.abs() - 1.0).max(0.0)).norm();
        assert_eq!(out.status, SolveStatus::Optimal, "{out:?}");
        assert!((out.value.unwrap() - expected).abs() <= 1e-6);
    }
}
