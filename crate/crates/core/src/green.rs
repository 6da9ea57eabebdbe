//! The Green pairing (1/π) ∬ ∂_{v1}φ1(u) G(u,v) ∂_{v2}φ2(v) du dv with
//! G(u,v) = -(1/2π) log|u-v|, by zero-padded FFT convolution on a uniform grid.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::testfn::TestFunction;
use crate::C64;

/// Mean of log r over the unit square centred at the origin.
const LOG_CELL_MEAN: f64 = -1.5 + PI / 4.0 - 0.5 * std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug)]
pub struct GreenPairing {
    /// Grid points per support radius on the coarse level.
    pub per_radius: usize,
    /// Cap on grid points per axis before padding.
    pub max_points: usize,
}

impl Default for GreenPairing {
    fn default() -> Self {
        Self { per_radius: 24, max_points: 768 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PairingValue {
    pub value: f64,
    pub error: f64,
}

fn directional(f: &TestFunction, v: C64, p: [f64; 2]) -> f64 {
    let g = f.grad(p);
    v.re * g[0] + v.im * g[1]
}

fn fft2(data: &mut [C64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fx = if inverse { planner.plan_fft_inverse(nx) } else { planner.plan_fft_forward(nx) };
    let fy = if inverse { planner.plan_fft_inverse(ny) } else { planner.plan_fft_forward(ny) };
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![C64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

impl GreenPairing {
    /// Value at grid spacing h over the box [lo, lo + (n-1)h].
    fn level(&self, f1: &TestFunction, v1: C64, f2: &TestFunction, v2: C64, lo: [f64; 2], n: [usize; 2], h: f64) -> f64 {
        let (nx, ny) = (2 * n[0], 2 * n[1]);
        let mut a = vec![C64::new(0.0, 0.0); nx * ny];
        let mut k = vec![C64::new(0.0, 0.0); nx * ny];
        let mut b = vec![0.0; n[0] * n[1]];
        for j in 0..n[1] {
            for i in 0..n[0] {
                let p = [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
                a[j * nx + i] = C64::new(directional(f2, v2, p), 0.0);
                b[j * n[0] + i] = directional(f1, v1, p);
            }
        }
        let lh = h.ln();
        for j in 0..ny {
            let dy = if j < n[1] { j as f64 } else { j as f64 - ny as f64 };
            for i in 0..nx {
                let dx = if i < n[0] { i as f64 } else { i as f64 - nx as f64 };
                let g = if i == 0 && j == 0 {
                    -(lh + LOG_CELL_MEAN) / (2.0 * PI)
                } else {
                    -(lh + 0.5 * (dx * dx + dy * dy).ln()) / (2.0 * PI)
                };
                k[j * nx + i] = C64::new(g, 0.0);
            }
        }
        fft2(&mut a, nx, ny, false);
        fft2(&mut k, nx, ny, false);
        for (x, y) in a.iter_mut().zip(&k) {
            *x *= y;
        }
        fft2(&mut a, nx, ny, true);
        let norm = 1.0 / (nx * ny) as f64;
        let mut s = 0.0;
        for j in 0..n[1] {
            for i in 0..n[0] {
                s += b[j * n[0] + i] * a[j * nx + i].re * norm;
            }
        }
        s * h.powi(4) / PI
    }

    /// Richardson combination of grid spacings h and h/2.
    pub fn pair(&self, f1: &TestFunction, v1: C64, f2: &TestFunction, v2: C64) -> Result<PairingValue> {
        let (r1, r2) = (f1.support_radius(), f2.support_radius());
        if r1 == 0.0 || r2 == 0.0 || v1.norm() == 0.0 || v2.norm() == 0.0 {
            return Ok(PairingValue { value: 0.0, error: 0.0 });
        }
        let (c1, c2) = (f1.center(), f2.center());
        let lo = [(c1[0] - r1).min(c2[0] - r2), (c1[1] - r1).min(c2[1] - r2)];
        let hi = [(c1[0] + r1).max(c2[0] + r2), (c1[1] + r1).max(c2[1] + r2)];
        let h = r1.min(r2) / self.per_radius as f64;
        let n = |h: f64| [((hi[0] - lo[0]) / h).ceil() as usize + 1, ((hi[1] - lo[1]) / h).ceil() as usize + 1];
        let fine = n(h / 2.0);
        if fine[0].max(fine[1]) > self.max_points {
            return Err(Error::Convergence(format!(
                "pairing grid {}x{} exceeds budget {}",
                fine[0], fine[1], self.max_points
            )));
        }
        let coarse = self.level(f1, v1, f2, v2, lo, n(h), h);
        let finer = self.level(f1, v1, f2, v2, lo, fine, h / 2.0);
        Ok(PairingValue { value: (4.0 * finer - coarse) / 3.0, error: (finer - coarse).abs() / 3.0 })
    }
}

pub fn green_pairing(f1: &TestFunction, v1: C64, f2: &TestFunction, v2: C64) -> Result<PairingValue> {
    GreenPairing::default().pair(f1, v1, f2, v2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_function_pairs_to_zero() {
        let f = TestFunction::gaussian([0.0, 0.0], 0.3);
        assert_eq!(green_pairing(&f, C64::new(1.0, 0.0), &TestFunction::Zero, C64::new(1.0, 0.0)).unwrap().value, 0.0);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let f = TestFunction::gaussian([0.0, 0.0], 0.3);
        let g = TestFunction::bump([0.4, 0.1], 0.5);
        let (v, w) = (C64::new(1.0, 0.5), C64::new(-0.3, 1.0));
        let a = green_pairing(&f, v, &g, w).unwrap().value;
        let b = green_pairing(&g, w, &f, v).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
        assert!(green_pairing(&f, v, &f, v).unwrap().value > 0.0);
    }

    #[test]
    fn far_field_dipole_sign() {
        let f = TestFunction::bump([0.0, 0.0], 0.3);
        let g = TestFunction::bump([3.0, 0.0], 0.3);
        let v = C64::new(1.0, 0.0);
        let val = green_pairing(&f, v, &g, v).unwrap().value;
        let (m1, m2) = (f.mass(), g.mass());
        let far = -(m1 * m2) / (PI * 2.0 * PI * 9.0);
        assert!(val < 0.0);
        assert!((val - far).abs() / far.abs() < 0.02, "{val} {far}");
    }
}
