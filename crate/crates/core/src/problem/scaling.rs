use nalgebra::{DMatrix, DVector};

use super::{AffineEncoding, ConicTemplate, ParametricProgram, ProblemError, ProgramData};
use crate::geometry::{Point, Polytope};

/// Per-axis affine map `theta' = scale .* (theta - offset)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingTransform {
    pub scale: DVector<f64>,
    pub offset: DVector<f64>,
}

impl ScalingTransform {
    pub fn identity(p: usize) -> Self {
        Self { scale: DVector::from_element(p, 1.0), offset: DVector::zeros(p) }
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.offset.iter().all(|&o| o == 0.0)
    }

    pub fn apply(&self, theta: &Point) -> Point {
        (theta - &self.offset).component_mul(&self.scale)
    }

    pub fn unapply(&self, scaled: &Point) -> Point {
        scaled.component_div(&self.scale) + &self.offset
    }

    /// Rewrites template data given in original coordinates so it takes the
    /// scaled parameter: `theta = offset + D theta'` with `D = diag(1/scale)`.
    fn rewrite(&self, c0: &mut f64, c_theta: &mut DVector<f64>, b: &mut DVector<f64>, b_theta: &mut DMatrix<f64>) {
        *c0 += c_theta.dot(&self.offset);
        *b += &*b_theta * &self.offset;
        for (j, s) in self.scale.iter().enumerate() {
            c_theta[j] /= s;
            b_theta.column_mut(j).scale_mut(1.0 / s);
        }
    }

    pub fn rewrite_template(&self, t: &ConicTemplate) -> ConicTemplate {
        let mut out = t.clone();
        self.rewrite(&mut out.c0, &mut out.c_theta, &mut out.b, &mut out.b_theta);
        out
    }

    pub fn rewrite_program(&self, prog: &ParametricProgram) -> ParametricProgram {
        let data = match &prog.data {
            ProgramData::Table(rows) => {
                ProgramData::Table(rows.iter().map(|(d, t)| (d.clone(), self.rewrite_template(t))).collect())
            }
            ProgramData::Affine(enc) => {
                let mut out: AffineEncoding = enc.clone();
                for k in 0..enc.c0.len() {
                    let mut c0 = enc.c0[k];
                    let mut ct = enc.c_theta.column(k).into_owned();
                    let mut b = enc.b.column(k).into_owned();
                    let mut bt = enc.b_theta[k].clone();
                    // The offset contributions of bit terms stay attached to
                    // their bit.
                    self.rewrite(&mut c0, &mut ct, &mut b, &mut bt);
                    out.c0[k] = c0;
                    out.c_theta.set_column(k, &ct);
                    out.b.set_column(k, &b);
                    out.b_theta[k] = bt;
                }
                ProgramData::Affine(out)
            }
        };
        ParametricProgram { data, ..prog.clone() }
    }
}

/// Maps `theta_poly` so that every axis has `max |coord| = 1` over its
/// vertices and rewrites the program accordingly. A polytope that already
/// satisfies this gets the identity transform.
pub fn scale_to_unit_box(
    prog: &ParametricProgram,
    theta_poly: &Polytope,
) -> Result<(ParametricProgram, Polytope, ScalingTransform), ProblemError> {
    let p = theta_poly.dim();
    if p != prog.p {
        return Err(ProblemError::DimensionMismatch(format!("polytope is in R^{p}, program has p = {}", prog.p)));
    }
    let verts = theta_poly.vertices();
    let mut lo = DVector::from_element(p, f64::INFINITY);
    let mut hi = DVector::from_element(p, f64::NEG_INFINITY);
    for v in verts {
        for i in 0..p {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    for i in 0..p {
        if !(hi[i] - lo[i] > 0.0) {
            return Err(ProblemError::DegenerateInput(format!("axis {i} has zero extent")));
        }
    }
    let already_unit = (0..p).all(|i| (lo[i].abs().max(hi[i].abs()) - 1.0).abs() <= 1e-12);
    let tf = if already_unit {
        ScalingTransform::identity(p)
    } else {
        let offset = (&lo + &hi) * 0.5;
        let scale = DVector::from_fn(p, |i, _| 1.0 / ((hi[i] - lo[i]) * 0.5));
        ScalingTransform { scale, offset }
    };
    let scaled = Polytope::new(verts.iter().map(|v| tf.apply(v)).collect())
        .map_err(|e| ProblemError::DegenerateInput(e.to_string()))?;
    Ok((tf.rewrite_program(prog), scaled, tf))
}
