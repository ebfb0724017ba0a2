//! Random multi-degree-of-freedom oscillators, their exact discretization and
//! LQR gains.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::InstanceError;

/// Probability that a generated mode is critically damped.
pub const CRITICAL_PROBABILITY: f64 = 0.2;
/// Range of the damping rate `sigma` (poles at `-sigma +- i omega_d`).
pub const DAMPING_RATE: (f64, f64) = (1.0, 10.0);
/// Largest damped frequency in rad/s.
pub const MAX_DAMPED_FREQUENCY: f64 = 2.0 * PI;

/// One modal oscillator `eta'' + 2 sigma eta' + omega_n^2 eta = u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub sigma: f64,
    pub omega_d: f64,
    pub omega_n: f64,
    pub zeta: f64,
}

impl Mode {
    pub fn from_poles(sigma: f64, omega_d: f64) -> Self {
        let omega_n = (sigma * sigma + omega_d * omega_d).sqrt();
        let zeta = if omega_n > 0.0 { sigma / omega_n } else { 1.0 };
        Self { sigma, omega_d, omega_n, zeta }
    }

    /// Zero-order-hold discretization of the mode with unit input gain:
    /// the 2x2 transition matrix and the input column.
    pub fn zoh(&self, h: f64) -> (DMatrix<f64>, DVector<f64>) {
        let (s, c) = if self.omega_d > 0.0 {
            ((self.omega_d * h).sin() / self.omega_d, (self.omega_d * h).cos())
        } else {
            (h, 1.0)
        };
        let e = (-self.sigma * h).exp();
        let w2 = self.omega_n * self.omega_n;
        let phi = DMatrix::from_row_slice(2, 2, &[
            e * (c + self.sigma * s),
            e * s,
            -w2 * e * s,
            e * (c - self.sigma * s),
        ]);
        // First entry integrates the (1,2) transition entry, using
        // phi22' = -w^2 phi12 - 2 sigma phi22.
        let first = if w2 > 0.0 {
            (1.0 - phi[(1, 1)] - 2.0 * self.sigma * phi[(0, 1)]) / w2
        } else if self.sigma > 0.0 {
            (h - (1.0 - (-2.0 * self.sigma * h).exp()) / (2.0 * self.sigma)) / (2.0 * self.sigma)
        } else {
            h * h / 2.0
        };
        let second = phi[(0, 1)];
        (phi, DVector::from_vec(vec![first, second]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdofSystem {
    pub n_r: usize,
    /// Diagonal of the mass matrix.
    pub mass: DVector<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Orthogonal modal matrix.
    pub t: DMatrix<f64>,
    pub modes: Vec<Mode>,
    /// Continuous state space in `x = (r, r')`.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// Sampling rate in rad/s and the resulting period `2 pi / omega_s`.
    pub omega_s: f64,
    pub h: f64,
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub ed: DMatrix<f64>,
}

fn draw_mode(rng: &mut ChaCha8Rng) -> Mode {
    let sigma = rng.random_range(DAMPING_RATE.0..=DAMPING_RATE.1);
    if rng.random_bool(CRITICAL_PROBABILITY) {
        Mode::from_poles(sigma, 0.0)
    } else {
        // Uniform on (0, 2 pi].
        let omega_d = MAX_DAMPED_FREQUENCY * (1.0 - rng.random::<f64>());
        Mode::from_poles(sigma, omega_d)
    }
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random system with `n_r` modes, reproducible from `seed`.
pub fn generate_mdof(n_r: usize, seed: u64) -> Result<MdofSystem, InstanceError> {
    if n_r == 0 {
        return Err(InstanceError::InvalidInput("n_r must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass = DVector::from_fn(n_r, |_, _| rng.random_range(0.1..=1.0));
    let t = random_orthogonal(n_r, &mut rng);
    let modes: Vec<Mode> = (0..n_r).map(|_| draw_mode(&mut rng)).collect();
    Ok(system_from_modes(mass, t, modes))
}

/// Assembles the physical matrices from modal data and discretizes.
pub fn system_from_modes(mass: DVector<f64>, t: DMatrix<f64>, modes: Vec<Mode>) -> MdofSystem {
    let n = mass.len();
    let msqrt = DMatrix::from_diagonal(&mass.map(f64::sqrt));
    let lam = DMatrix::from_diagonal(&DVector::from_iterator(n, modes.iter().map(|m| 2.0 * m.sigma)));
    let om = DMatrix::from_diagonal(&DVector::from_iterator(n, modes.iter().map(|m| m.omega_n * m.omega_n)));
    let c = &msqrt * &t * lam * t.transpose() * &msqrt;
    let k = &msqrt * &t * om * t.transpose() * &msqrt;
    let l = &msqrt * &t;
    let minv = DMatrix::from_diagonal(&mass.map(|m| 1.0 / m));

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(-&minv * &k));
    a.view_mut((n, n), (n, n)).copy_from(&(-&minv * &c));
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).copy_from(&(&minv * &l));
    let mut e = DMatrix::zeros(2 * n, n);
    e.view_mut((n, 0), (n, n)).fill_with_identity();

    let fastest = modes.iter().map(|m| m.omega_n).fold(0.0, f64::max);
    let omega_s = 10.0 * fastest;
    let h = 2.0 * PI / omega_s;
    let (ad, bd, ed) = discretize_modal(&mass, &t, &modes, h);
    MdofSystem { n_r: n, mass, c, k, l, t, modes, a, b, e, omega_s, h, ad, bd, ed }
}

/// Exact zero-order hold built from the per-mode closed forms. The modal
/// state is `z = (eta, eta')` with `r = S eta`, `S = M^{-1/2} T`.
pub fn discretize_modal(
    mass: &DVector<f64>,
    t: &DMatrix<f64>,
    modes: &[Mode],
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = mass.len();
    let s = DMatrix::from_diagonal(&mass.map(|m| 1.0 / m.sqrt())) * t;
    let s_inv = t.transpose() * DMatrix::from_diagonal(&mass.map(f64::sqrt));
    let mut phi = DMatrix::zeros(2 * n, 2 * n);
    // Integral of the transition matrix applied to the velocity inputs.
    let mut psi = DMatrix::zeros(2 * n, n);
    for (i, m) in modes.iter().enumerate() {
        let (p, col) = m.zoh(h);
        for (r, rr) in [i, n + i].into_iter().enumerate() {
            for (cidx, cc) in [i, n + i].into_iter().enumerate() {
                phi[(rr, cc)] = p[(r, cidx)];
            }
        }
        psi[(i, i)] = col[0];
        psi[(n + i, i)] = col[1];
    }
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&s);
    p.view_mut((n, n), (n, n)).copy_from(&s);
    let mut p_inv = DMatrix::zeros(2 * n, 2 * n);
    p_inv.view_mut((0, 0), (n, n)).copy_from(&s_inv);
    p_inv.view_mut((n, n), (n, n)).copy_from(&s_inv);
    let ad = &p * phi * &p_inv;
    let bd = &p * &psi;
    let ed = &p * psi * s_inv;
    (ad, bd, ed)
}

/// Residual at which the Riccati iteration stops.
pub const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 1_000_000;

/// Infinite-horizon discrete LQR gain `K` (control `u = -K x`) and the
/// Riccati solution, by fixed-point iteration from `P = Q`.
pub fn lqr_synthesis(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), InstanceError> {
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let Some(gain) = gram.clone().lu().solve(&(&btp * a)) else {
            return Err(InstanceError::RiccatiDivergence("singular input weighting".into()));
        };
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) || next.amax() > 1e100 {
            return Err(InstanceError::RiccatiDivergence("Riccati iterate blew up".into()));
        }
        let diff = (&next - &p).amax();
        p = next;
        if diff <= RICCATI_TOL * p.amax().max(1.0) {
            let btp = b.transpose() * &p;
            let k = (r + &btp * b).lu().solve(&(&btp * a)).expect("checked above");
            return Ok((k, p));
        }
    }
    Err(InstanceError::RiccatiDivergence(format!("no convergence in {RICCATI_MAX_ITER} iterations")))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
