//! Special functions and quadrature rules.

use num_traits::{Float, FloatConst};

/// Complete elliptic integrals (K(m), E(m)) in the parameter convention
/// (m = k²), by the arithmetic-geometric mean.
pub fn elliptic_ke<T: Float + FloatConst>(m: T) -> (T, T) {
    let one = T::one();
    let two = one + one;
    let mut a = one;
    let mut b = (one - m).sqrt();
    let mut cn = m.sqrt();
    let mut sum = cn * cn / two;
    let mut pow = one / two;
    for _ in 0..64 {
        if cn.abs() <= T::epsilon() * a {
            break;
        }
        let an = (a + b) / two;
        let bn = (a * b).sqrt();
        cn = (a - b) / two;
        pow = pow * two;
        sum = sum + pow * cn * cn;
        a = an;
        b = bn;
    }
    let k = T::PI() / (two * a);
    (k, k * (one - sum))
}

/// F(a) = log(4 + e^a) - Σ_k (1/2k) (e^{a/2}/(4+e^a))^{2k} ((2k)!/(k!)²)²,
/// the free energy of the square-octagon graph as a function of the log-weight
/// of one connector edge.
pub fn square_octagon_series(a: f64) -> f64 {
    let x = (a / 2.0).exp() / (4.0 + a.exp());
    let x2 = x * x;
    let mut term = 1.0;
    let mut s = 0.0;
    for k in 1..100_000u64 {
        let kf = k as f64;
        let r = (2.0 * kf) * (2.0 * kf - 1.0) / (kf * kf);
        term *= r * r * x2;
        let add = term / (2.0 * kf);
        s += add;
        if add < 1e-19 * s {
            break;
        }
    }
    (4.0 + a.exp()).ln() - s
}

/// (F, F', F'') of the square-octagon series in the connector log-weight a.
pub fn square_octagon_series_derivatives(a: f64) -> (f64, f64, f64) {
    let ea = a.exp();
    let u = ea / ((4.0 + ea) * (4.0 + ea));
    // (log u)' and its derivative
    let g = 1.0 - 2.0 * ea / (4.0 + ea);
    let dg = -8.0 * ea / ((4.0 + ea) * (4.0 + ea));
    let mut binom_sq = 1.0;
    let mut uk = 1.0;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for k in 1..100_000u64 {
        let kf = k as f64;
        let r = (2.0 * kf) * (2.0 * kf - 1.0) / (kf * kf);
        binom_sq *= r * r;
        uk *= u;
        let c = binom_sq * uk / (2.0 * kf);
        s0 += c;
        s1 += c * kf * g;
        let add = c * (kf * kf * g * g + kf * dg);
        s2 += add;
        if c * kf * kf < 1e-19 * s2.abs().max(1e-300) {
            break;
        }
    }
    let f = (4.0 + ea).ln() - s0;
    let f1 = ea / (4.0 + ea) - s1;
    let f2 = 4.0 * ea / ((4.0 + ea) * (4.0 + ea)) - s2;
    (f, f1, f2)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre<T: Float + FloatConst>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut x = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let nf = T::from(n).unwrap();
    let one = T::one();
    let two = one + one;
    for i in 0..(n + 1) / 2 {
        let quarter = T::from(0.25).unwrap();
        let half = T::from(0.5).unwrap();
        let mut z = (T::PI() * (T::from(i).unwrap() + one - quarter) / (nf + half)).cos();
        let mut dp = one;
        for _ in 0..100 {
            let mut p0 = one;
            let mut p1 = z;
            for k in 2..=n {
                let kf = T::from(k).unwrap();
                let p2 = ((two * kf - one) * z * p1 - (kf - one) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = one;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - one);
            let dz = p1 / dp;
            z = z - dz;
            if dz.abs() <= T::epsilon() * two {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = two / ((one - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Bernoulli polynomial B_n(t) for n ≤ 6.
pub fn bernoulli_poly(n: usize, t: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => t - 0.5,
        2 => t * t - t + 1.0 / 6.0,
        3 => t * t * t - 1.5 * t * t + 0.5 * t,
        4 => t.powi(4) - 2.0 * t.powi(3) + t * t - 1.0 / 30.0,
        5 => t.powi(5) - 2.5 * t.powi(4) + 5.0 / 3.0 * t.powi(3) - t / 6.0,
        6 => t.powi(6) - 3.0 * t.powi(5) + 2.5 * t.powi(4) - 0.5 * t * t + 1.0 / 42.0,
        _ => panic!("bernoulli_poly: order {n} not tabulated"),
    }
}

/// Periodic function with unit jump in its m-th derivative at 0 and zero mean:
/// s_m(t) = (1/2π) Σ_{k≠0} e^{ikt} / (ik)^{m+1}.
pub fn sawtooth(m: usize, t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let u = (t / two_pi).rem_euclid(1.0);
    let mut fact = 1.0;
    for k in 2..=(m + 1) {
        fact *= k as f64;
    }
    -two_pi.powi(m as i32) / fact * bernoulli_poly(m + 1, u)
}
