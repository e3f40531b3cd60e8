//! Spline height-function level sets and analytic line level sets.
//!
//! The moving shock interface is the zero set of phi(x, y) = x - S(y) where
//! S is a linear or cubic Hermite spline with knots at the background-grid
//! vertex y coordinates. Cubic splines carry two DOFs per knot (value and
//! derivative), linear splines one. Fixed immersed boundaries (the wedge
//! surface) use the same height-function form with an analytic straight line.
//!
//! Sign convention: phi < 0 left of the interface (x < S(y)), phi > 0 right.
//! Interface normals point towards phi > 0.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LevelSetError {
    #[error("y = {0} outside knot range [{1}, {2}]; no extrapolation")]
    OutOfRange(f64, f64, f64),
    #[error("knots must be strictly increasing")]
    BadKnots,
    #[error("dof vector has length {got}, expected {expected}")]
    BadDofLength { got: usize, expected: usize },
    #[error("parse error in spline text: {0}")]
    Parse(String),
}

/// Spline polynomial degree per segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplineKind {
    Linear,
    Cubic,
}

/// A polynomial piece of a height function: S(y) = sum_k coeffs[k] (y - y_start)^k
/// on [y_start, y_end].
#[derive(Clone, Copy, Debug)]
pub struct Piece {
    pub y_start: f64,
    pub y_end: f64,
    pub coeffs: [f64; 4],
}

impl Piece {
    pub fn eval(&self, y: f64) -> f64 {
        let t = y - self.y_start;
        ((self.coeffs[3] * t + self.coeffs[2]) * t + self.coeffs[1]) * t + self.coeffs[0]
    }

    pub fn deriv(&self, y: f64) -> f64 {
        let t = y - self.y_start;
        (3.0 * self.coeffs[3] * t + 2.0 * self.coeffs[2]) * t + self.coeffs[1]
    }

    /// Re-express the same polynomial about a new origin `y0` (y0 inside the piece).
    pub fn shifted(&self, y0: f64) -> Piece {
        let d = y0 - self.y_start;
        let [a0, a1, a2, a3] = self.coeffs;
        // p(t + d) expanded in t
        let b0 = ((a3 * d + a2) * d + a1) * d + a0;
        let b1 = (3.0 * a3 * d + 2.0 * a2) * d + a1;
        let b2 = 3.0 * a3 * d + a2;
        let b3 = a3;
        Piece {
            y_start: y0,
            y_end: self.y_end,
            coeffs: [b0, b1, b2, b3],
        }
    }
}

/// Height functions x = S(y): the geometric interface description shared by
/// spline and analytic level sets. `pieces` must cover [y0, y1].
pub trait HeightFunction {
    fn height(&self, y: f64) -> f64;
    fn slope(&self, y: f64) -> f64;
    /// Polynomial pieces covering [y0, y1], clipped to it.
    fn pieces(&self, y0: f64, y1: f64) -> Vec<Piece>;
}

/// Spline height-function level set phi(x, y) = x - S(y).
#[derive(Clone, Debug, PartialEq)]
pub struct SplineLevelSet {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Knot derivatives, present only for cubic splines.
    derivs: Option<Vec<f64>>,
}

impl SplineLevelSet {
    pub fn linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, LevelSetError> {
        check_knots(&knots)?;
        assert_eq!(knots.len(), values.len());
        Ok(SplineLevelSet {
            knots,
            values,
            derivs: None,
        })
    }

    pub fn cubic(
        knots: Vec<f64>,
        values: Vec<f64>,
        derivs: Vec<f64>,
    ) -> Result<Self, LevelSetError> {
        check_knots(&knots)?;
        assert_eq!(knots.len(), values.len());
        assert_eq!(knots.len(), derivs.len());
        Ok(SplineLevelSet {
            knots,
            values,
            derivs: Some(derivs),
        })
    }

    /// Interpolate a height function f (and its slope, for cubic splines) at
    /// the given knots.
    pub fn fit(
        kind: SplineKind,
        knots: &[f64],
        f: impl Fn(f64) -> f64,
        fp: impl Fn(f64) -> f64,
    ) -> Result<Self, LevelSetError> {
        let values: Vec<f64> = knots.iter().map(|&y| f(y)).collect();
        match kind {
            SplineKind::Linear => Self::linear(knots.to_vec(), values),
            SplineKind::Cubic => {
                let derivs: Vec<f64> = knots.iter().map(|&y| fp(y)).collect();
                Self::cubic(knots.to_vec(), values, derivs)
            }
        }
    }

    pub fn kind(&self) -> SplineKind {
        if self.derivs.is_some() {
            SplineKind::Cubic
        } else {
            SplineKind::Linear
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// phi(x, y) = x - S(y). Errors for y outside the knot range.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, LevelSetError> {
        let (lo, hi) = (self.knots[0], *self.knots.last().unwrap());
        if y < lo || y > hi {
            return Err(LevelSetError::OutOfRange(y, lo, hi));
        }
        Ok(x - self.height(y))
    }

    /// Unit normal of the zero set at height y, pointing towards phi > 0.
    pub fn interface_normal(&self, y: f64) -> [f64; 2] {
        let sp = self.slope(y);
        let s = (1.0 + sp * sp).sqrt();
        [1.0 / s, -sp / s]
    }

    /// Number of scalar DOFs: one per knot (linear) or two (cubic).
    pub fn num_dofs(&self) -> usize {
        match self.kind() {
            SplineKind::Linear => self.knots.len(),
            SplineKind::Cubic => 2 * self.knots.len(),
        }
    }

    /// DOF vector, layout [x_0..x_N, c_0..c_N].
    pub fn dofs(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        if let Some(d) = &self.derivs {
            v.extend_from_slice(d);
        }
        v
    }

    pub fn set_dofs(&mut self, dofs: &[f64]) -> Result<(), LevelSetError> {
        if dofs.len() != self.num_dofs() {
            return Err(LevelSetError::BadDofLength {
                got: dofs.len(),
                expected: self.num_dofs(),
            });
        }
        let n = self.knots.len();
        self.values.copy_from_slice(&dofs[..n]);
        if let Some(d) = &mut self.derivs {
            d.copy_from_slice(&dofs[n..]);
        }
        Ok(())
    }

    /// Copy with dofs[k] += delta.
    pub fn perturbed(&self, k: usize, delta: f64) -> Self {
        let mut dofs = self.dofs();
        dofs[k] += delta;
        let mut out = self.clone();
        out.set_dofs(&dofs).unwrap();
        out
    }

    /// Knot spacing around DOF k, used to scale finite-difference steps.
    pub fn dof_scale(&self, k: usize) -> f64 {
        let n = self.knots.len();
        let i = k % n;
        let lo = if i == 0 { 0 } else { i - 1 };
        let hi = (i + 1).min(n - 1);
        (self.knots[hi] - self.knots[lo]) / (hi - lo).max(1) as f64
    }

    fn segment(&self, y: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&y).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    fn segment_piece(&self, i: usize) -> Piece {
        let y0 = self.knots[i];
        let y1 = self.knots[i + 1];
        let h = y1 - y0;
        let x0 = self.values[i];
        let x1 = self.values[i + 1];
        let coeffs = match &self.derivs {
            None => [x0, (x1 - x0) / h, 0.0, 0.0],
            Some(c) => {
                let (c0, c1) = (c[i], c[i + 1]);
                let d = x1 - x0;
                let a2 = (3.0 * d / h - 2.0 * c0 - c1) / h;
                let a3 = (c0 + c1 - 2.0 * d / h) / (h * h);
                [x0, c0, a2, a3]
            }
        };
        Piece {
            y_start: y0,
            y_end: y1,
            coeffs,
        }
    }

    /// Plain-text form, one line per knot: "y x" or "y x c".
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.knots.len() {
            match &self.derivs {
                None => s.push_str(&format!("{:.16e} {:.16e}\n", self.knots[i], self.values[i])),
                Some(c) => s.push_str(&format!(
                    "{:.16e} {:.16e} {:.16e}\n",
                    self.knots[i], self.values[i], c[i]
                )),
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, LevelSetError> {
        let mut knots = Vec::new();
        let mut values = Vec::new();
        let mut derivs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| LevelSetError::Parse(e.to_string()))
                })
                .collect::<Result<_, _>>()?;
            match fields.len() {
                2 => {
                    knots.push(fields[0]);
                    values.push(fields[1]);
                }
                3 => {
                    knots.push(fields[0]);
                    values.push(fields[1]);
                    derivs.push(fields[2]);
                }
                n => return Err(LevelSetError::Parse(format!("{n} fields in line '{line}'"))),
            }
        }
        if derivs.is_empty() {
            Self::linear(knots, values)
        } else if derivs.len() == knots.len() {
            Self::cubic(knots, values, derivs)
        } else {
            Err(LevelSetError::Parse("mixed 2- and 3-field lines".into()))
        }
    }
}

fn check_knots(knots: &[f64]) -> Result<(), LevelSetError> {
    if knots.len() < 2 || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LevelSetError::BadKnots);
    }
    Ok(())
}

impl HeightFunction for SplineLevelSet {
    fn height(&self, y: f64) -> f64 {
        self.segment_piece(self.segment(y)).eval(y)
    }

    fn slope(&self, y: f64) -> f64 {
        self.segment_piece(self.segment(y)).deriv(y)
    }

    fn pieces(&self, y0: f64, y1: f64) -> Vec<Piece> {
        let mut out = Vec::new();
        for i in 0..self.knots.len() - 1 {
            let p = self.segment_piece(i);
            if p.y_end <= y0 || p.y_start >= y1 {
                continue;
            }
            let mut q = if p.y_start < y0 { p.shifted(y0) } else { p };
            q.y_end = q.y_end.min(y1);
            out.push(q);
        }
        out
    }
}

/// Analytic level set for a fixed immersed boundary: the straight line
/// x = intercept + slope y, i.e. phi(x, y) = x - intercept - slope y.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticLevelSet {
    pub intercept: f64,
    pub slope: f64,
}

impl AnalyticLevelSet {
    pub fn line(intercept: f64, slope: f64) -> Self {
        AnalyticLevelSet { intercept, slope }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        x - self.intercept - self.slope * y
    }

    /// Gradient of phi; constant and nonzero for a line.
    pub fn gradient(&self, _x: f64, _y: f64) -> [f64; 2] {
        [1.0, -self.slope]
    }
}

impl HeightFunction for AnalyticLevelSet {
    fn height(&self, y: f64) -> f64 {
        self.intercept + self.slope * y
    }

    fn slope(&self, _y: f64) -> f64 {
        self.slope
    }

    fn pieces(&self, y0: f64, y1: f64) -> Vec<Piece> {
        vec![Piece {
            y_start: y0,
            y_end: y1,
            coeffs: [self.intercept + self.slope * y0, self.slope, 0.0, 0.0],
        }]
    }
}

/// Real roots of a polynomial (degree <= 3, monomial coefficients about 0)
/// inside [lo, hi], ascending and deduplicated. The interval is split at the
/// polynomial's critical points (exact quadratic roots); on each monotone
/// piece a sign change brackets exactly one root, found by bisection and
/// polished with Newton steps. Close root pairs cannot be missed this way.
pub(crate) fn poly_roots_in(coeffs: [f64; 4], lo: f64, hi: f64, edge_tol: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || hi <= lo {
        return Vec::new(); // identically zero: tangency handled by measure
    }
    let [a0, a1, a2, a3] = coeffs;
    let eval = |t: f64| ((a3 * t + a2) * t + a1) * t + a0;
    let deriv = |t: f64| (3.0 * a3 * t + 2.0 * a2) * t + a1;
    // monotone breakpoints: roots of the derivative quadratic
    let mut brk = vec![lo, hi];
    let (qa, qb, qc) = (3.0 * a3, 2.0 * a2, a1);
    if qa.abs() > 1e-300 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let sign = if qb >= 0.0 { 1.0 } else { -1.0 };
            let q = -0.5 * (qb + sign * sq);
            let t1 = q / qa;
            let t2 = if q.abs() > 1e-300 { qc / q } else { f64::NAN };
            for t in [t1, t2] {
                if t.is_finite() && t > lo && t < hi {
                    brk.push(t);
                }
            }
        }
    } else if qb.abs() > 1e-300 {
        let t = -qc / qb;
        if t > lo && t < hi {
            brk.push(t);
        }
    }
    brk.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::new();
    let push = |t: f64, out: &mut Vec<f64>| {
        if out.iter().all(|&r| (r - t).abs() > edge_tol) {
            out.push(t);
        }
    };
    for w in brk.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (mut fa, fb) = (eval(a), eval(b));
        if fa == 0.0 {
            push(a, &mut out);
            continue;
        }
        if fb == 0.0 {
            push(b, &mut out);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            let fm = eval(m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
            if b - a <= 1e-16 * (hi - lo).abs().max(1.0) {
                break;
            }
        }
        let mut t = 0.5 * (a + b);
        for _ in 0..2 {
            let d = deriv(t);
            if d.abs() > 1e-300 {
                let step = eval(t) / d;
                if step.is_finite() && step.abs() < (hi - lo).abs() {
                    t -= step;
                }
            }
        }
        push(t.clamp(lo, hi), &mut out);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}
