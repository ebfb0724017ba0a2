//! Hand-built instances with closed-form value functions.
//!
//! All toys use `u = -theta` (equality rows) and the cost `t >= ||u||^2`
//! written as a rotated second-order cone, so `V*_delta(theta) = ||theta||^2`
//! plus any commutation-dependent offset on the set where `delta` is feasible.

use crate::conic::ConeSpec;
use crate::geometry::Polytope;
use crate::problem::{AffineEncoding, ParametricProgram, ProgramData};

/// A program bundled with its parameter polytope.
#[derive(Clone, Debug)]
pub struct NamedInstance {
    pub program: ParametricProgram,
    pub theta: Polytope,
}

/// One-parameter toy: `delta = 0` allows `u in [-1, hi0]`, `delta = 1`
/// allows `u in [lo1, 1]`.
fn toy1d_with(name: &str, hi0: f64, lo1: f64, offset1: f64) -> NamedInstance {
    // x = (u, t); rows: Z(u + theta = 0), L(u <= .., -u <= ..), Q3 epigraph.
    let cone = ConeSpec::new(vec![ConeSpec::zero(1), ConeSpec::nonneg(2), ConeSpec::soc(3)]);
    let mut enc = AffineEncoding::zeros(1, 2, 1, cone);
    enc.c[1] = 1.0;
    enc.c0[1] = offset1;
    // u + s = -theta
    enc.a[(0, 0)] = 1.0;
    enc.b_theta[0][(0, 0)] = -1.0;
    // u <= hi0 + delta (1 - hi0)
    enc.a[(1, 0)] = 1.0;
    enc.b[(1, 0)] = hi0;
    enc.b[(1, 1)] = 1.0 - hi0;
    // -u <= 1 + delta (-lo1 - 1)
    enc.a[(2, 0)] = -1.0;
    enc.b[(2, 0)] = 1.0;
    enc.b[(2, 1)] = -lo1 - 1.0;
    // ((t + 1) / 2, (t - 1) / 2, u) in Q3
    enc.a[(3, 1)] = -0.5;
    enc.b[(3, 0)] = 0.5;
    enc.a[(4, 1)] = -0.5;
    enc.b[(4, 0)] = -0.5;
    enc.a[(5, 0)] = -1.0;
    let program = ParametricProgram {
        name: name.into(),
        p: 1,
        n: 2,
        m: 1,
        one_hot: vec![],
        data: ProgramData::Affine(enc),
    };
    NamedInstance { program, theta: Polytope::from_rows(&[&[-1.0], &[1.0]]).unwrap() }
}

/// `Theta*_0 = [-0.2, 1]`, `Theta*_1 = [-1, 0.2]`, overlap 0.2.
pub fn toy1d() -> NamedInstance {
    toy1d_with("toy1d", 0.2, -0.2, 0.0)
}

/// As [`toy1d`] with `+0.1` added to the cost when `delta = 1`.
pub fn toy1d_offset() -> NamedInstance {
    toy1d_with("toy1d-offset", 0.2, -0.2, 0.1)
}

/// Center of the overlap interval in the [`toy1d_kappa`] family.
pub const KAPPA_SHIFT: f64 = 0.3;

/// Overlap interval `[0.3 - kappa, 0.3 + kappa]`.
pub fn toy1d_kappa(kappa: f64) -> NamedInstance {
    toy1d_with(&format!("toy1d-kappa-{kappa}"), kappa - KAPPA_SHIFT, -(KAPPA_SHIFT + kappa), 0.0)
}

/// Two-parameter toy over `[-1, 1]^2`: `delta = 0` requires `u_1 <= 0.2`,
/// `delta = 1` requires `u_1 >= -0.2`; the offset is added when `delta = 1`.
pub fn toy2d_with_offset(offset1: f64) -> NamedInstance {
    // x = (u1, u2, t); rows: Z2, L2, Q4.
    let cone = ConeSpec::new(vec![ConeSpec::zero(2), ConeSpec::nonneg(2), ConeSpec::soc(4)]);
    let mut enc = AffineEncoding::zeros(2, 3, 1, cone);
    enc.c[2] = 1.0;
    enc.c0[1] = offset1;
    for i in 0..2 {
        enc.a[(i, i)] = 1.0;
        enc.b_theta[0][(i, i)] = -1.0;
    }
    // u1 <= 0.2 + 0.8 delta ; -u1 <= 1 - 0.8 delta
    enc.a[(2, 0)] = 1.0;
    enc.b[(2, 0)] = 0.2;
    enc.b[(2, 1)] = 0.8;
    enc.a[(3, 0)] = -1.0;
    enc.b[(3, 0)] = 1.0;
    enc.b[(3, 1)] = -0.8;
    enc.a[(4, 2)] = -0.5;
    enc.b[(4, 0)] = 0.5;
    enc.a[(5, 2)] = -0.5;
    enc.b[(5, 0)] = -0.5;
    enc.a[(6, 0)] = -1.0;
    enc.a[(7, 1)] = -1.0;
    let program = ParametricProgram {
        name: "toy2d".into(),
        p: 2,
        n: 3,
        m: 1,
        one_hot: vec![],
        data: ProgramData::Affine(enc),
    };
    let theta = Polytope::bounding_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
    NamedInstance { program, theta }
}

pub fn toy2d() -> NamedInstance {
    toy2d_with_offset(0.0)
}

#[cfg(test)]
pub(crate) fn toy_program_2d() -> ParametricProgram {
    toy2d().program
}

/// All named toys.
pub fn toy_instances() -> Vec<NamedInstance> {
    vec![toy1d(), toy1d_offset(), toy2d(), toy2d_with_offset(0.05)]
}

/// Closed-form `V*_delta` of the one-parameter toys, `None` when infeasible.
pub fn toy1d_value(hi0: f64, lo1: f64, offset1: f64, theta: f64, delta: bool) -> Option<f64> {
    let u = -theta;
    let (lo, hi, off) = if delta { (lo1, 1.0, offset1) } else { (-1.0, hi0, 0.0) };
    (lo <= u && u <= hi).then_some(theta * theta + off)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;
    use super::*;
    use crate::problem::Commutation;

    #[test]
    fn toy_values_match_closed_form() {
        let cases = [(toy1d(), 0.2, -0.2, 0.0), (toy1d_offset(), 0.2, -0.2, 0.1)];
        for (inst, hi0, lo1, off) in cases {
            assert!(inst.program.validate().is_empty());
            for k in 0..=40 {
                let t = -1.0 + 0.05 * k as f64;
                for d in [false, true] {
                    let out = inst
                        .program
                        .solve_fixed(&DVector::from_element(1, t), &Commutation::new(vec![d]))
                        .unwrap();
                    let expected = toy1d_value(hi0, lo1, off, t, d);
                    // Points within solver tolerance of the boundary may go either way.
                    let near_edge = [hi0, lo1].iter().any(|b| (t + b).abs() < 1e-9);
                    if near_edge {
                        continue;
                    }
                    match expected {
                        Some(v) => assert!((out.value.unwrap() - v).abs() < 1e-7, "{t} {d}"),
                        None => assert!(!out.is_optimal(), "{t} {d}"),
                    }
                }
            }
        }
    }

    #[test]
    fn toy2d_is_valid() {
        for inst in toy_instances() {
            assert!(inst.program.validate().is_empty(), "{}", inst.program.name);
        }
    }
}
