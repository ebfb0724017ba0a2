//! Hybrid MPC benchmark: a generated oscillator under LQR defines the
//! parameter set, and a short-horizon MPC with a non-convex input set is
//! written as a parametric mixed-integer conic program.
//!
//! Everything the program sees is in normalized units: states and inputs are
//! divided by `scale` (the largest vertex coordinate of the invariant set),
//! so the parameter set has unit extent and costs are divided by `scale^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::mdof::{generate_mdof, lqr_synthesis, MdofSystem};
use super::theta::{construct_theta, ThetaSet};
use super::InstanceError;
use crate::conic::ConeSpec;
use crate::geometry::{Point, Polytope};
use crate::mi::{MiSettings, MiSolver};
use crate::problem::{AffineEncoding, ParametricProgram, ProgramData, ProgramFile};

/// Disturbance bound `|w|_inf`.
pub const W_MAX: f64 = 1e-3;
/// Ratio of the inner excluded input box to the outer one.
pub const INNER_RATIO: f64 = 1e-3;
pub const STATE_WEIGHT: f64 = 0.1;
pub const INPUT_WEIGHT: f64 = 1.0;
pub const DEFAULT_HORIZON: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RobustMode {
    Nominal,
    BoxTightened,
}

impl fmt::Display for RobustMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nominal => "nominal",
            Self::BoxTightened => "box-tightened",
        })
    }
}

impl FromStr for RobustMode {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "box-tightened" => Ok(Self::BoxTightened),
            _ => Err(InstanceError::InvalidInput(format!("unknown robust mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct McInstance {
    pub seed: u64,
    pub system: MdofSystem,
    pub horizon: usize,
    pub mode: RobustMode,
    pub k_lqr: DMatrix<f64>,
    /// Invariant set in physical units.
    pub theta_set: ThetaSet,
    /// Physical per unit of normalized state or input.
    pub scale: f64,
    /// Parameter set in normalized units.
    pub theta: Polytope,
    /// Rows of `h x <= 1` describing `theta`.
    pub h: DMatrix<f64>,
    /// Outer input bounds in normalized units.
    pub u_max: DVector<f64>,
    pub program: ParametricProgram,
}

/// Generates a system, its LQR loop and invariant set, and the MPC program.
pub fn generate_instance(
    n_r: usize,
    seed: u64,
    horizon: usize,
    mode: RobustMode,
) -> Result<McInstance, InstanceError> {
    if horizon == 0 {
        return Err(InstanceError::InvalidInput("horizon must be at least 1".into()));
    }
    let system = generate_mdof(n_r, seed)?;
    let nx = 2 * n_r;
    let q = DMatrix::identity(nx, nx) * STATE_WEIGHT;
    let r = DMatrix::identity(n_r, n_r) * INPUT_WEIGHT;
    let (k_lqr, _) = lqr_synthesis(&system.ad, &system.bd, &q, &r)?;
    let a_cl = &system.ad - &system.bd * &k_lqr;
    let theta_set = construct_theta(&a_cl, &system.ed, W_MAX)?;

    let scale = theta_set.vertices().iter().map(|v| v.amax()).fold(0.0, f64::max);
    let vertices: Vec<Point> = theta_set.vertices().iter().map(|v| v / scale).collect();
    let theta = Polytope::new(vertices)?;
    let mut h = theta_set.h.clone();
    for (j, mut row) in h.row_iter_mut().enumerate() {
        row *= scale / theta_set.g[j];
    }
    let u_max = DVector::from_fn(n_r, |i, _| {
        theta.vertices().iter().map(|v| (k_lqr.row(i) * v)[0].abs()).fold(0.0, f64::max)
    });
    let mut inst = McInstance {
        seed,
        system,
        horizon,
        mode,
        k_lqr,
        theta_set,
        scale,
        theta,
        h,
        u_max,
        program: ParametricProgram {
            name: String::new(),
            p: nx,
            n: 0,
            m: 0,
            one_hot: Vec::new(),
            data: ProgramData::Table(Vec::new()),
        },
    };
    inst.program = assemble_mpc_program(&inst, horizon, mode)?;
    Ok(inst)
}

/// Stacked prediction `x_k = A^k theta + G_k u` for `k = 1..=N`, as the
/// list of `(A^k, G_k)`.
fn predictions(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let (nx, nu) = b.shape();
    let mut out = Vec::with_capacity(horizon);
    let mut ak = DMatrix::identity(nx, nx);
    let mut g = DMatrix::zeros(nx, nu * horizon);
    for k in 0..horizon {
        // x_{k+1} = A x_k + B u_k
        g = a * g;
        g.view_mut((0, k * nu), (nx, nu)).copy_from(b);
        ak = a * ak;
        out.push((ak.clone(), g.clone()));
    }
    out
}

/// Per-row tightening of `h x_k <= 1` for `k = 1..=N` against the box of
/// disturbances: `w sum_{j<k} |h A^{k-1-j} E|_1`.
pub fn tightening(h: &DMatrix<f64>, a: &DMatrix<f64>, e: &DMatrix<f64>, w: f64, horizon: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(horizon);
    let mut acc = DVector::zeros(h.nrows());
    let mut hai = h.clone();
    for _ in 0..horizon {
        let he = &hai * e;
        acc += DVector::from_iterator(he.nrows(), he.row_iter().map(|r| w * r.iter().map(|v| v.abs()).sum::<f64>()));
        out.push(acc.clone());
        hai = &hai * a;
    }
    out
}

/// Writes the MPC for `inst` as a parametric program over `x_0 = theta`.
///
/// Decision variables are the stacked inputs `u_0..u_{N-1}` and an epigraph
/// variable `t`. Each step has a one-hot group of `2 n_r + 1` bits: bit 0
/// forces `u_k = 0`, bit `2i + 1` selects `u_i >= eps u_max,i` and bit
/// `2i + 2` selects `u_i <= -eps u_max,i`, all inside `|u| <= u_max`.
pub fn assemble_mpc_program(
    inst: &McInstance,
    horizon: usize,
    mode: RobustMode,
) -> Result<ParametricProgram, InstanceError> {
    let sys = &inst.system;
    let n_r = sys.n_r;
    let nx = 2 * n_r;
    let group = 2 * n_r + 1;
    let m = horizon * group;
    let nu = horizon * n_r;
    let n = nu + 1;
    let rows_h = inst.h.nrows();
    let n_state = horizon * rows_h;
    let n_input = horizon * 4 * n_r;
    let n_soc = 2 + nu + horizon * nx;
    let cone = ConeSpec::new(vec![ConeSpec::nonneg(n_state + n_input), ConeSpec::soc(n_soc)]);
    let mut enc = AffineEncoding::zeros(nx, n, m, cone);
    enc.c[nu] = 1.0;

    let preds = predictions(&sys.ad, &sys.bd, horizon);
    let tight = match mode {
        RobustMode::Nominal => vec![DVector::zeros(rows_h); horizon],
        RobustMode::BoxTightened => tightening(&inst.h, &sys.ad, &sys.ed, W_MAX / inst.scale, horizon),
    };

    // State constraints h x_k <= 1 - tightening.
    for (k, (ak, gk)) in preds.iter().enumerate() {
        let ha = &inst.h * ak;
        let hg = &inst.h * gk;
        for j in 0..rows_h {
            let row = k * rows_h + j;
            enc.a.view_mut((row, 0), (1, nu)).copy_from(&hg.row(j));
            enc.b[(row, 0)] = 1.0 - tight[k][j];
            enc.b_theta[0].row_mut(row).copy_from(&(-ha.row(j)));
        }
    }

    // Input selection.
    let eps = INNER_RATIO;
    for k in 0..horizon {
        let bit0 = 1 + k * group;
        for i in 0..n_r {
            let col = k * n_r + i;
            let um = inst.u_max[i];
            let base = n_state + k * 4 * n_r + 4 * i;
            for (off, sign) in [(0, 1.0), (1, -1.0)] {
                // +-u_i <= u_max (1 - delta_zero)
                enc.a[(base + off, col)] = sign;
                enc.b[(base + off, 0)] = um;
                enc.b[(base + off, bit0)] = -um;
            }
            for (off, sign, bit) in [(2, -1.0, bit0 + 2 * i + 1), (3, 1.0, bit0 + 2 * i + 2)] {
                // Selected sign slab: -sign u_i >= eps u_max.
                enc.a[(base + off, col)] = sign;
                enc.b[(base + off, 0)] = um;
                enc.b[(base + off, bit)] = -(1.0 + eps) * um;
            }
        }
    }

    // t >= sum |R^1/2 u|^2 + |Q^1/2 x_k|^2 as a rotated cone.
    let s0 = n_state + n_input;
    enc.a[(s0, nu)] = -0.5;
    enc.b[(s0, 0)] = 0.5;
    enc.a[(s0 + 1, nu)] = -0.5;
    enc.b[(s0 + 1, 0)] = -0.5;
    let rs = INPUT_WEIGHT.sqrt();
    for j in 0..nu {
        enc.a[(s0 + 2 + j, j)] = -rs;
    }
    let qs = STATE_WEIGHT.sqrt();
    for (k, (ak, gk)) in preds.iter().enumerate() {
        let r0 = s0 + 2 + nu + k * nx;
        enc.a.view_mut((r0, 0), (nx, nu)).copy_from(&(gk * -qs));
        enc.b_theta[0].view_mut((r0, 0), (nx, nx)).copy_from(&(ak * qs));
    }

    let prog = ParametricProgram {
        name: format!("mdof-nr{n_r}-seed{}-N{horizon}-{mode}", inst.seed),
        p: nx,
        n,
        m,
        one_hot: (0..horizon).map(|k| (k * group..(k + 1) * group).collect()).collect(),
        data: ProgramData::Affine(enc),
    };
    if let Some(d) = prog.validate().first() {
        return Err(InstanceError::InvalidInput(format!("assembled program is malformed: {d}")));
    }
    let solver = MiSolver::new(&prog, MiSettings::default());
    let bary = inst.theta.barycenter();
    if solver.find_feasible_commutation(&bary)?.is_none() {
        return Err(InstanceError::HorizonInfeasible(format!("no commutation is feasible at {:?}", bary.as_slice())));
    }
    Ok(prog)
}

impl McInstance {
    pub fn to_file(&self) -> ProgramFile {
        let mut meta = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("n_r".to_string(), self.system.n_r.to_string()),
            ("horizon".to_string(), self.horizon.to_string()),
            ("mode".to_string(), self.mode.to_string()),
            ("state_scale".to_string(), format!("{:e}", self.scale)),
            ("theta_halving_scale".to_string(), format!("{:e}", self.theta_set.c)),
            ("w_max".to_string(), format!("{W_MAX:e}")),
            ("omega_s".to_string(), format!("{:e}", self.system.omega_s)),
        ];
        for (i, md) in self.system.modes.iter().enumerate() {
            meta.push((
                format!("pole{i}"),
                format!(
                    "sigma={:.6} omega_d={:.6} omega_n={:.6} zeta={:.6} mass={:.6}",
                    md.sigma, md.omega_d, md.omega_n, md.zeta, self.system.mass[i]
                ),
            ));
        }
        ProgramFile { program: self.program.clone(), theta: Some(self.theta.clone()), meta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Commutation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dimensions_follow_horizon_and_modes() {
        let one = generate_instance(1, 1, 3, RobustMode::BoxTightened).unwrap();
        assert_eq!((one.program.p, one.program.m), (2, 9));
        assert!(one.program.validate().is_empty());
        let three = generate_instance(3, 1, 3, RobustMode::BoxTightened).unwrap();
        assert_eq!((three.program.p, three.program.m), (6, 21));
        assert!(three.program.validate().is_empty());
        assert_eq!(three.program.one_hot.len(), 3);
    }

    #[test]
    fn theta_is_invariant_at_every_vertex_pair() {
        for seed in 0..5 {
            let inst = generate_instance(1, seed, 3, RobustMode::Nominal).unwrap();
            let sys = &inst.system;
            let a_cl = &sys.ad - &sys.bd * &inst.k_lqr;
            let w = W_MAX / inst.scale;
            for v in inst.theta.vertices() {
                for s in [-1.0, 1.0] {
                    let next = &a_cl * v + &sys.ed * DVector::from_element(1, s * w);
                    assert!((&inst.h * next).max() <= 1.0 + 1e-9, "seed {seed}");
                }
            }
            assert!(inst.theta.vertices().iter().all(|v| v.amax() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn input_bound_is_largest_lqr_input() {
        let inst = generate_instance(2, 4, 3, RobustMode::Nominal).unwrap();
        for i in 0..2 {
            let brute = inst
                .theta_set
                .vertices()
                .iter()
                .map(|v| (inst.k_lqr.row(i) * v)[0].abs())
                .fold(0.0, f64::max);
            assert!((inst.u_max[i] * inst.scale - brute).abs() <= 1e-12 * brute.max(1.0));
        }
    }

    #[test]
    fn origin_costs_nothing() {
        let inst = generate_instance(1, 2, 3, RobustMode::Nominal).unwrap();
        let solver = MiSolver::new(&inst.program, MiSettings::default());
        let out = solver.solve_minlp(&DVector::zeros(2)).unwrap();
        assert!(out.value.unwrap().abs() < 1e-7);
    }

    #[test]
    fn zero_input_group_forces_zero() {
        let inst = generate_instance(1, 3, 1, RobustMode::Nominal).unwrap();
        let zero: Commutation = "100".parse().unwrap();
        let theta = inst.theta.barycenter() * 0.5 + &inst.theta.vertices()[0] * 0.5;
        let out = inst.program.solve_fixed(&theta, &zero).unwrap();
        assert!(out.is_optimal());
        assert!(out.x.unwrap()[0].abs() < 1e-6);
        let pos: Commutation = "010".parse().unwrap();
        let out = inst.program.solve_fixed(&theta, &pos).unwrap();
        if out.is_optimal() {
            let x = out.x.unwrap();
            assert!(x[0] >= INNER_RATIO * inst.u_max[0] - 1e-7);
        }
    }

    #[test]
    fn tightened_plans_stay_in_theta_under_disturbance() {
        let inst = generate_instance(1, 5, 3, RobustMode::BoxTightened).unwrap();
        let sys = &inst.system;
        let solver = MiSolver::new(&inst.program, MiSettings::default());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = W_MAX / inst.scale;
        let verts = inst.theta.vertices();
        let mut sequences = 0;
        while sequences < 1000 {
            let lam: Vec<f64> = (0..verts.len()).map(|_| rng.random::<f64>()).collect();
            let total: f64 = lam.iter().sum();
            let theta = verts.iter().zip(&lam).fold(DVector::zeros(2), |acc, (v, l)| acc + v * (l / total));
            let out = solver.solve_minlp(&theta).unwrap();
            let Some(delta) = out.delta else { continue };
            let plan = inst.program.solve_fixed(&theta, &delta).unwrap().x.unwrap();
            for _ in 0..20 {
                let mut x = theta.clone();
                for k in 0..3 {
                    let wk = DVector::from_element(1, w * rng.random_range(-1.0..=1.0));
                    x = &sys.ad * &x + &sys.bd * DVector::from_element(1, plan[k]) + &sys.ed * wk;
                    assert!((&inst.h * &x).max() <= 1.0 + 1e-6);
                }
                sequences += 1;
            }
        }
    }

    #[test]
    fn file_metadata_lists_poles() {
        let inst = generate_instance(2, 8, 3, RobustMode::BoxTightened).unwrap();
        let file = inst.to_file();
        let keys: Vec<&str> = file.meta.iter().map(|(k, _)| k.as_str()).collect();
        for k in ["seed", "n_r", "horizon", "mode", "pole0", "pole1"] {
            assert!(keys.contains(&k));
        }
        let text = crate::problem::write_program_file(&file);
        let back = crate::problem::read_program_file(&text).unwrap();
        assert_eq!(back.program, inst.program);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [RobustMode::Nominal, RobustMode::BoxTightened] {
            assert_eq!(m.to_string().parse::<RobustMode>().unwrap(), m);
        }
        assert!("tube".parse::<RobustMode>().is_err());
    }
}
