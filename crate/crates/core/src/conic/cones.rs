//! Cone blocks and their Nesterov-Todd scalings.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConeKind {
    /// `s = 0`; equality rows.
    Zero,
    NonnegOrthant,
    /// `s_0 >= ||s_1..||`.
    SecondOrder,
}

impl ConeKind {
    pub fn tag(self) -> &'static str {
        match self {
            ConeKind::Zero => "Z",
            ConeKind::NonnegOrthant => "L",
            ConeKind::SecondOrder => "Q",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "Z" => Some(ConeKind::Zero),
            "L" => Some(ConeKind::NonnegOrthant),
            "Q" => Some(ConeKind::SecondOrder),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConeFactor {
    pub kind: ConeKind,
    pub size: usize,
}

/// Ordered product of cone factors over the constraint rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConeSpec {
    pub factors: Vec<ConeFactor>,
}

impl ConeSpec {
    pub fn new(factors: Vec<ConeFactor>) -> Self {
        Self { factors }
    }

    pub fn zero(size: usize) -> ConeFactor {
        ConeFactor { kind: ConeKind::Zero, size }
    }

    pub fn nonneg(size: usize) -> ConeFactor {
        ConeFactor { kind: ConeKind::NonnegOrthant, size }
    }

    pub fn soc(size: usize) -> ConeFactor {
        ConeFactor { kind: ConeKind::SecondOrder, size }
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.size).sum()
    }

    /// Barrier degree: one per orthant row, one per second-order block.
    pub fn degree(&self) -> usize {
        self.factors
            .iter()
            .map(|f| match f.kind {
                ConeKind::Zero => 0,
                ConeKind::NonnegOrthant => f.size,
                ConeKind::SecondOrder => 1,
            })
            .sum()
    }

    pub fn blocks(&self) -> Vec<(ConeKind, Range<usize>)> {
        let mut start = 0;
        self.factors
            .iter()
            .map(|f| {
                let r = start..start + f.size;
                start += f.size;
                (f.kind, r)
            })
            .collect()
    }

    /// Structural problems with the spec itself (empty factors, tiny SOCs).
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, f) in self.factors.iter().enumerate() {
            if f.size == 0 {
                out.push(format!("cone factor {k} has size 0"));
            }
            if f.kind == ConeKind::SecondOrder && f.size < 2 {
                out.push(format!("second-order cone factor {k} has size {} < 2", f.size));
            }
        }
        out
    }

    /// Merges adjacent factors of the same non-SOC kind.
    pub fn compact(&self) -> ConeSpec {
        let mut out: Vec<ConeFactor> = Vec::new();
        for f in &self.factors {
            if f.size == 0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.kind == f.kind && f.kind != ConeKind::SecondOrder => {
                    last.size += f.size
                }
                _ => out.push(*f),
            }
        }
        ConeSpec { factors: out }
    }

    /// True when `s` lies in the cone up to `tol`.
    pub fn contains(&self, s: &DVector<f64>, tol: f64) -> bool {
        self.blocks().into_iter().all(|(kind, r)| match kind {
            ConeKind::Zero => s.rows_range(r).iter().all(|v| v.abs() <= tol),
            ConeKind::NonnegOrthant => s.rows_range(r).iter().all(|&v| v >= -tol),
            ConeKind::SecondOrder => {
                let b = s.rows_range(r);
                b[0] + tol >= b.rows_range(1..).norm()
            }
        })
    }
}

/// Per-block NT scaling data.
#[derive(Clone, Debug)]
pub(crate) enum BlockScaling {
    Zero,
    Nonneg { w: DVector<f64> },
    Soc { w: DMatrix<f64>, winv: DMatrix<f64> },
}

pub(crate) struct Scaling {
    pub blocks: Vec<(BlockScaling, Range<usize>)>,
    /// Scaled point `W z = W^{-1} s`.
    pub lambda: DVector<f64>,
}

fn soc_jnorm_sq(v: &[f64]) -> f64 {
    v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>()
}

impl Scaling {
    pub fn new(spec: &ConeSpec, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut lambda = DVector::zeros(s.len());
        let mut blocks = Vec::new();
        for (kind, r) in spec.blocks() {
            let bs = match kind {
                ConeKind::Zero => BlockScaling::Zero,
                ConeKind::NonnegOrthant => {
                    let mut w = DVector::zeros(r.len());
                    for (k, i) in r.clone().enumerate() {
                        if !(s[i] > 0.0 && z[i] > 0.0) {
                            return None;
                        }
                        w[k] = (s[i] / z[i]).sqrt();
                        lambda[i] = (s[i] * z[i]).sqrt();
                    }
                    BlockScaling::Nonneg { w }
                }
                ConeKind::SecondOrder => {
                    let sb = s.as_slice()[r.clone()].to_vec();
                    let zb = z.as_slice()[r.clone()].to_vec();
                    let sn = soc_jnorm_sq(&sb);
                    let zn = soc_jnorm_sq(&zb);
                    if !(sn > 0.0 && zn > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (sn.sqrt(), zn.sqrt());
                    let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
                    let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
                    let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
                    let gamma = ((1.0 + dot) / 2.0).sqrt();
                    let mut wbar: Vec<f64> = vec![0.0; sb.len()];
                    wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                    for k in 1..sb.len() {
                        wbar[k] = (sbar[k] - zbar[k]) / (2.0 * gamma);
                    }
                    let eta = (sn / zn).sqrt();
                    let q = sb.len();
                    let mut w = DMatrix::zeros(q, q);
                    let mut winv = DMatrix::zeros(q, q);
                    w[(0, 0)] = wbar[0];
                    winv[(0, 0)] = wbar[0];
                    for k in 1..q {
                        w[(0, k)] = wbar[k];
                        w[(k, 0)] = wbar[k];
                        winv[(0, k)] = -wbar[k];
                        winv[(k, 0)] = -wbar[k];
                        for l in 1..q {
                            let v = wbar[k] * wbar[l] / (1.0 + wbar[0]);
                            let id = if k == l { 1.0 } else { 0.0 };
                            w[(k, l)] = id + v;
                            winv[(k, l)] = id + v;
                        }
                    }
                    w *= eta;
                    winv /= eta;
                    let lz = &w * DVector::from_column_slice(&zb);
                    lambda.rows_range_mut(r.clone()).copy_from(&lz);
                    BlockScaling::Soc { w, winv }
                }
            };
            blocks.push((bs, r));
        }
        Some(Self { blocks, lambda })
    }

    pub fn apply_w(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, false)
    }

    pub fn apply_winv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply(v, true)
    }

    fn apply(&self, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (bs, r) in &self.blocks {
            match bs {
                BlockScaling::Zero => {}
                BlockScaling::Nonneg { w } => {
                    for (k, i) in r.clone().enumerate() {
                        out[i] = if inverse { v[i] / w[k] } else { v[i] * w[k] };
                    }
                }
                BlockScaling::Soc { w, winv } => {
                    let m = if inverse { winv } else { w };
                    let res = m * v.rows_range(r.clone());
                    out.rows_range_mut(r.clone()).copy_from(&res);
                }
            }
        }
        out
    }

    /// Writes `-W^2` into the lower-right block of `k` starting at `offset`.
    pub fn fill_neg_w2(&self, k: &mut DMatrix<f64>, offset: usize) {
        for (bs, r) in &self.blocks {
            match bs {
                BlockScaling::Zero => {}
                BlockScaling::Nonneg { w } => {
                    for (j, i) in r.clone().enumerate() {
                        k[(offset + i, offset + i)] = -w[j] * w[j];
                    }
                }
                BlockScaling::Soc { w, .. } => {
                    let w2 = w * w;
                    for (a, i) in r.clone().enumerate() {
                        for (b, j) in r.clone().enumerate() {
                            k[(offset + i, offset + j)] = -w2[(a, b)];
                        }
                    }
                }
            }
        }
    }
}

/// Jordan product `u o v` over all blocks (zero rows give 0).
pub(crate) fn jordan_product(spec: &ConeSpec, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for (kind, r) in spec.blocks() {
        match kind {
            ConeKind::Zero => {}
            ConeKind::NonnegOrthant => {
                for i in r {
                    out[i] = u[i] * v[i];
                }
            }
            ConeKind::SecondOrder => {
                let (i0, rest) = (r.start, r.start + 1..r.end);
                out[i0] = u.rows_range(r.clone()).dot(&v.rows_range(r.clone()));
                for i in rest {
                    out[i] = u[i0] * v[i] + v[i0] * u[i];
                }
            }
        }
    }
    out
}

/// Solves `lambda o x = r` for `x`.
pub(crate) fn jordan_div(spec: &ConeSpec, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(r.len());
    for (kind, rg) in spec.blocks() {
        match kind {
            ConeKind::Zero => {}
            ConeKind::NonnegOrthant => {
                for i in rg {
                    out[i] = r[i] / lambda[i];
                }
            }
            ConeKind::SecondOrder => {
                let i0 = rg.start;
                let l0 = lambda[i0];
                let l1 = lambda.rows_range(i0 + 1..rg.end);
                let r1 = r.rows_range(i0 + 1..rg.end);
                let det = l0 * l0 - l1.norm_squared();
                let x0 = (l0 * r[i0] - l1.dot(&r1)) / det;
                out[i0] = x0;
                for (k, i) in (i0 + 1..rg.end).enumerate() {
                    out[i] = (r1[k] - x0 * l1[k]) / l0;
                }
            }
        }
    }
    out
}

/// Identity element `e` (zero on equality rows).
pub(crate) fn identity(spec: &ConeSpec) -> DVector<f64> {
    let mut e = DVector::zeros(spec.dim());
    for (kind, r) in spec.blocks() {
        match kind {
            ConeKind::Zero => {}
            ConeKind::NonnegOrthant => r.for_each(|i| e[i] = 1.0),
            ConeKind::SecondOrder => e[r.start] = 1.0,
        }
    }
    e
}

/// Largest `alpha` (capped at `cap`) keeping `x + alpha d` in the cone.
pub(crate) fn max_step(spec: &ConeSpec, x: &DVector<f64>, d: &DVector<f64>, cap: f64) -> f64 {
    let mut alpha = cap;
    for (kind, r) in spec.blocks() {
        match kind {
            ConeKind::Zero => {}
            ConeKind::NonnegOrthant => {
                for i in r {
                    if d[i] < 0.0 {
                        alpha = alpha.min(-x[i] / d[i]);
                    }
                }
            }
            ConeKind::SecondOrder => {
                let xb = x.rows_range(r.clone());
                let db = d.rows_range(r.clone());
                if db[0] < 0.0 {
                    alpha = alpha.min(-xb[0] / db[0]);
                }
                let x1 = xb.rows_range(1..);
                let d1 = db.rows_range(1..);
                let a = db[0] * db[0] - d1.norm_squared();
                let b = xb[0] * db[0] - x1.dot(&d1);
                let c = (xb[0] * xb[0] - x1.norm_squared()).max(0.0);
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    let q = -(b + b.signum() * sq);
                    let mut roots = Vec::with_capacity(2);
                    if a != 0.0 {
                        roots.push(q / a);
                    }
                    if q != 0.0 {
                        roots.push(c / q);
                    }
                    for t in roots {
                        if t > 0.0 {
                            alpha = alpha.min(t);
                        }
                    }
                }
            }
        }
    }
    alpha.max(0.0)
}
