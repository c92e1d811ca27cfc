//! Thin-plate-spline interpolation in two dimensions.
//!
//! A transform maps points of the plane through an affine part plus a sum of
//! radial kernels `U(r) = r² log r²` centred on the source control points.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    src: Vec<[f64; 2]>,
    dst: Vec<[f64; 2]>,
    /// Kernel weights followed by the affine coefficients `(a0, ax, ay)`; one column per axis.
    coeffs: [Vec<f64>; 2],
    regularization: f64,
}

fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

impl TpsTransform {
    /// Solves for the spline that carries `src[i]` to `dst[i]`.
    ///
    /// With `regularization == 0` the spline interpolates exactly; larger
    /// values trade exactness for smoothness.
    pub fn fit(src: &[[f64; 2]], dst: &[[f64; 2]], regularization: f64) -> Result<Self> {
        let k = src.len();
        if k != dst.len() {
            return Err(Error::InvalidInput(format!(
                "{k} source points but {} targets",
                dst.len()
            )));
        }
        if k < 3 {
            return Err(Error::Singular(format!(
                "{k} control points, need at least 3"
            )));
        }
        if !(regularization >= 0.0) {
            return Err(Error::InvalidInput("negative regularization".into()));
        }
        if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite control point".into()));
        }
        check_not_collinear(src)?;

        let n = k + 3;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                let dx = src[i][0] - src[j][0];
                let dy = src[i][1] - src[j][1];
                a[(i, j)] = kernel(dx * dx + dy * dy);
            }
            a[(i, i)] += regularization;
            let p = [1.0, src[i][0], src[i][1]];
            for (c, &v) in p.iter().enumerate() {
                a[(i, k + c)] = v;
                a[(k + c, i)] = v;
            }
        }
        let lu = a.lu();
        let mut coeffs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (axis, out) in coeffs.iter_mut().enumerate() {
            let mut rhs = DVector::<f64>::zeros(n);
            for i in 0..k {
                rhs[i] = dst[i][axis];
            }
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("thin-plate-spline system is singular".into()))?;
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular(
                    "thin-plate-spline solution is not finite".into(),
                ));
            }
            *out = sol.iter().copied().collect();
        }
        Ok(Self {
            src: src.to_vec(),
            dst: dst.to_vec(),
            coeffs,
            regularization,
        })
    }

    pub fn identity(points: &[[f64; 2]]) -> Result<Self> {
        Self::fit(points, points, 0.0)
    }

    pub fn source_points(&self) -> &[[f64; 2]] {
        &self.src
    }

    pub fn target_points(&self) -> &[[f64; 2]] {
        &self.dst
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let k = self.src.len();
        let mut out = [0.0; 2];
        for (axis, c) in self.coeffs.iter().enumerate() {
            let mut v = c[k] + c[k + 1] * p[0] + c[k + 2] * p[1];
            for (i, s) in self.src.iter().enumerate() {
                let dx = p[0] - s[0];
                let dy = p[1] - s[1];
                v += c[i] * kernel(dx * dx + dy * dy);
            }
            out[axis] = v;
        }
        out
    }
}

fn check_not_collinear(pts: &[[f64; 2]]) -> Result<()> {
    let mut m = Matrix3::<f64>::zeros();
    for p in pts {
        let row = [1.0, p[0], p[1]];
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += row[i] * row[j];
            }
        }
    }
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if max <= 0.0 || min / max < 1e-12 {
        return Err(Error::Singular("control points are collinear".into()));
    }
    Ok(())
}

/// `n × n` lattice covering `[0, 1]²`, row-major.
pub fn regular_grid(n: usize) -> Vec<[f64; 2]> {
    let step = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .flat_map(|r| (0..n).map(move |c| [c as f64 * step, r as f64 * step]))
        .collect()
}
