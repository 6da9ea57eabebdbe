//! Compactly supported test functions on the plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// exp(-|u-c|²/2σ²), cut off smoothly between 2σ and 3σ.
    Gaussian { center: [f64; 2], width: f64 },
    /// exp(1 - 1/(1 - |u-c|²/ρ²)); value 1 at the center.
    Bump { center: [f64; 2], radius: f64 },
    /// Product of cubic B-splines of knot spacing h.
    TensorSpline { center: [f64; 2], h: f64 },
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    Smooth,
    C2,
}

fn f_smooth(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn df_smooth(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

/// Smooth step from 0 (t ≤ 0) to 1 (t ≥ 1) and its derivative.
fn smooth_step(t: f64) -> (f64, f64) {
    let a = f_smooth(t);
    let b = f_smooth(1.0 - t);
    if a + b == 0.0 {
        return (0.0, 0.0);
    }
    let da = df_smooth(t);
    let db = -df_smooth(1.0 - t);
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

fn bspline(x: f64) -> (f64, f64) {
    let ax = x.abs();
    let sg = x.signum();
    if ax >= 2.0 {
        (0.0, 0.0)
    } else if ax >= 1.0 {
        let u = 2.0 - ax;
        (u * u * u / 6.0, -sg * u * u / 2.0)
    } else {
        (2.0 / 3.0 - ax * ax + ax * ax * ax / 2.0, sg * (-2.0 * ax + 1.5 * ax * ax))
    }
}

impl TestFunction {
    pub fn gaussian(center: [f64; 2], width: f64) -> Self {
        Self::Gaussian { center, width }
    }

    pub fn bump(center: [f64; 2], radius: f64) -> Self {
        Self::Bump { center, radius }
    }

    pub fn tensor_spline(center: [f64; 2], h: f64) -> Self {
        Self::TensorSpline { center, h }
    }

    /// `gaussian:cx,cy,σ`, `bump:cx,cy,ρ`, `spline:cx,cy,h`.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, args) = text.split_once(':').unwrap_or((text, ""));
        let v: Vec<f64> = args
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{text}: {e}"))))
            .collect::<Result<_>>()?;
        let need = |k: usize| -> Result<()> {
            if v.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("{text}: expected {k} parameters")))
            }
        };
        match kind {
            "gaussian" => {
                need(3)?;
                Ok(Self::gaussian([v[0], v[1]], v[2]))
            }
            "bump" => {
                need(3)?;
                Ok(Self::bump([v[0], v[1]], v[2]))
            }
            "spline" => {
                need(3)?;
                Ok(Self::tensor_spline([v[0], v[1]], v[2]))
            }
            "zero" => Ok(Self::Zero),
            _ => Err(Error::Parse(format!("unknown test function {kind}"))),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        match *self {
            Self::Gaussian { center, .. } | Self::Bump { center, .. } | Self::TensorSpline { center, .. } => center,
            Self::Zero => [0.0, 0.0],
        }
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            Self::Gaussian { width, .. } => 3.0 * width,
            Self::Bump { radius, .. } => radius,
            Self::TensorSpline { h, .. } => 2.0 * std::f64::consts::SQRT_2 * h,
            Self::Zero => 0.0,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Self::TensorSpline { .. } => Smoothness::C2,
            _ => Smoothness::Smooth,
        }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_grad(p).0
    }

    pub fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        self.eval_grad(p).1
    }

    /// Value and gradient.
    pub fn eval_grad(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let c = self.center();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let r2 = dx * dx + dy * dy;
        match *self {
            Self::Gaussian { width, .. } => {
                let r = r2.sqrt();
                if r >= 3.0 * width {
                    return (0.0, [0.0, 0.0]);
                }
                let g = (-r2 / (2.0 * width * width)).exp();
                let (chi, dchi) = smooth_step((3.0 * width - r) / width);
                let v = g * chi;
                // d/dr of g·χ, then radial projection
                let dg = -r / (width * width) * g;
                let dv = dg * chi - g * dchi / width;
                if r == 0.0 {
                    (v, [0.0, 0.0])
                } else {
                    (v, [dv * dx / r, dv * dy / r])
                }
            }
            Self::Bump { radius, .. } => {
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    return (0.0, [0.0, 0.0]);
                }
                let v = (1.0 - 1.0 / (1.0 - s)).exp();
                let dvds = -v / ((1.0 - s) * (1.0 - s));
                let k = dvds * 2.0 / (radius * radius);
                (v, [k * dx, k * dy])
            }
            Self::TensorSpline { h, .. } => {
                let (bx, dbx) = bspline(dx / h);
                let (by, dby) = bspline(dy / h);
                (bx * by, [dbx * by / h, bx * dby / h])
            }
            Self::Zero => (0.0, [0.0, 0.0]),
        }
    }

    /// ∫ f over the plane on a uniform grid of `per_radius` points per support radius.
    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64, per_radius: usize) -> f64 {
        let r = self.support_radius();
        if r == 0.0 {
            return 0.0;
        }
        let c = self.center();
        let h = r / per_radius as f64;
        let n = per_radius as i64;
        let mut s = 0.0;
        for i in -n..=n {
            for j in -n..=n {
                s += f([c[0] + i as f64 * h, c[1] + j as f64 * h]);
            }
        }
        s * h * h
    }

    pub fn l2_squared(&self) -> f64 {
        self.integrate(|p| self.eval(p).powi(2), 400)
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|p| self.eval(p), 400)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_grad(f: TestFunction, p: [f64; 2]) {
        let h = 1e-6;
        let g = f.grad(p);
        let gx = (f.eval([p[0] + h, p[1]]) - f.eval([p[0] - h, p[1]])) / (2.0 * h);
        let gy = (f.eval([p[0], p[1] + h]) - f.eval([p[0], p[1] - h])) / (2.0 * h);
        assert!((g[0] - gx).abs() < 1e-6 && (g[1] - gy).abs() < 1e-6, "{f:?} {p:?}");
    }

    #[test]
    fn gradients_match_differences() {
        for f in [
            TestFunction::gaussian([0.1, -0.2], 0.3),
            TestFunction::bump([0.0, 0.0], 1.0),
            TestFunction::tensor_spline([0.2, 0.2], 0.25),
        ] {
            for p in [[0.05, 0.1], [0.5, -0.3], [-0.6, 0.55], [0.3, 0.31]] {
                check_grad(f, p);
            }
        }
    }

    #[test]
    fn compact_support() {
        let f = TestFunction::gaussian([0.0, 0.0], 0.2);
        assert_eq!(f.eval([0.61, 0.0]), 0.0);
        assert!(f.eval([0.39, 0.0]) > 0.0);
        assert_eq!(TestFunction::bump([0.0, 0.0], 1.0).eval([0.0, 0.0]), 1.0);
    }

    #[test]
    fn gaussian_l2_between_truncations() {
        // cutoff between 2σ and 3σ
        let s = 0.25;
        let f = TestFunction::gaussian([0.0, 0.0], s);
        let full = std::f64::consts::PI * s * s;
        let v = f.l2_squared();
        assert!(v < full * (1.0 - (-9.0f64).exp()) && v > full * (1.0 - (-4.0f64).exp()));
    }

    #[test]
    fn parse_forms() {
        assert_eq!(TestFunction::parse("gaussian:0,0,1").unwrap(), TestFunction::gaussian([0.0, 0.0], 1.0));
        assert!(TestFunction::parse("gaussian:0,0").is_err());
    }
}
