//! Two-variable Laurent polynomials in (z, w) with complex coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::C64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Laurent2 {
    /// (z exponent, w exponent) -> coefficient
    terms: BTreeMap<(i32, i32), C64>,
}

impl Laurent2 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        Self::monomial(c, 0, 0)
    }

    pub fn monomial(c: C64, zexp: i32, wexp: i32) -> Self {
        let mut terms = BTreeMap::new();
        if c != C64::new(0.0, 0.0) {
            terms.insert((zexp, wexp), c);
        }
        Self { terms }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&(i32, i32), &C64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, zexp: i32, wexp: i32) -> C64 {
        self.terms.get(&(zexp, wexp)).copied().unwrap_or_default()
    }

    /// Sum of coefficient moduli.
    pub fn scale(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    fn add_term(&mut self, key: (i32, i32), c: C64) {
        let e = self.terms.entry(key).or_default();
        *e += c;
        if *e == C64::new(0.0, 0.0) {
            self.terms.remove(&key);
        }
    }

    /// Drops coefficients below `tol` times the largest one.
    pub fn pruned(mut self, tol: f64) -> Self {
        let m = self.terms.values().map(|c| c.norm()).fold(0.0, f64::max);
        self.terms.retain(|_, c| c.norm() > tol * m);
        self
    }

    pub fn eval(&self, z: C64, w: C64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (&(a, b), &c) in &self.terms {
            s += c * z.powi(a) * w.powi(b);
        }
        s
    }

    /// (P, dP/dz, dP/dw) at (z, w).
    pub fn eval_grad(&self, z: C64, w: C64) -> (C64, C64, C64) {
        let mut p = C64::new(0.0, 0.0);
        let mut pz = p;
        let mut pw = p;
        for (&(a, b), &c) in &self.terms {
            let m = c * z.powi(a) * w.powi(b);
            p += m;
            pz += m * a as f64 / z;
            pw += m * b as f64 / w;
        }
        (p, pz, pw)
    }

    pub fn z_range(&self) -> Option<(i32, i32)> {
        let lo = self.terms.keys().map(|k| k.0).min()?;
        let hi = self.terms.keys().map(|k| k.0).max()?;
        Some((lo, hi))
    }

    pub fn w_range(&self) -> Option<(i32, i32)> {
        let lo = self.terms.keys().map(|k| k.1).min()?;
        let hi = self.terms.keys().map(|k| k.1).max()?;
        Some((lo, hi))
    }

    /// Coefficients in z at fixed w: returns (lowest z exponent, coefficients).
    pub fn z_slice(&self, w: C64, zlo: i32, zhi: i32) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); (zhi - zlo + 1).max(0) as usize];
        for (&(a, b), &c) in &self.terms {
            out[(a - zlo) as usize] += c * w.powi(b);
        }
        out
    }

    pub fn exponents(&self) -> Vec<(i32, i32)> {
        self.terms.keys().copied().collect()
    }

    pub fn map_coefficients(&self, f: impl Fn(C64) -> C64) -> Self {
        let mut out = Self::zero();
        for (&k, &c) in &self.terms {
            out.add_term(k, f(c));
        }
        out
    }
}

impl Add for &Laurent2 {
    type Output = Laurent2;
    fn add(self, rhs: &Laurent2) -> Laurent2 {
        let mut out = self.clone();
        for (&k, &c) in &rhs.terms {
            out.add_term(k, c);
        }
        out
    }
}

impl Sub for &Laurent2 {
    type Output = Laurent2;
    fn sub(self, rhs: &Laurent2) -> Laurent2 {
        let mut out = self.clone();
        for (&k, &c) in &rhs.terms {
            out.add_term(k, -c);
        }
        out
    }
}

impl Neg for &Laurent2 {
    type Output = Laurent2;
    fn neg(self) -> Laurent2 {
        self.map_coefficients(|c| -c)
    }
}

impl Mul for &Laurent2 {
    type Output = Laurent2;
    fn mul(self, rhs: &Laurent2) -> Laurent2 {
        let mut out = Laurent2::zero();
        for (&(a1, b1), &c1) in &self.terms {
            for (&(a2, b2), &c2) in &rhs.terms {
                out.add_term((a1 + a2, b1 + b2), c1 * c2);
            }
        }
        out
    }
}

fn fmt_real(x: f64) -> String {
    if x == x.round() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Laurent2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut keys: Vec<_> = self.terms.keys().copied().collect();
        keys.sort_by_key(|&(a, b)| (a.abs() + b.abs(), -a, -b));
        let mut first = true;
        for k in keys {
            let c = self.terms[&k];
            let (neg, mag) = if c.im == 0.0 {
                (c.re < 0.0, fmt_real(c.re.abs()))
            } else {
                (false, format!("({}{:+}i)", fmt_real(c.re), c.im))
            };
            let mono = monomial_str(k);
            let body = match (mono.is_empty(), mag.as_str()) {
                (true, _) => mag.clone(),
                (false, "1") => mono,
                (false, _) => format!("{mag}*{mono}"),
            };
            if first {
                write!(f, "{}{}", if neg { "-" } else { "" }, body)?;
            } else {
                write!(f, " {} {}", if neg { "-" } else { "+" }, body)?;
            }
            first = false;
        }
        Ok(())
    }
}

fn monomial_str((a, b): (i32, i32)) -> String {
    let one = |v: &str, e: i32| match e {
        0 => String::new(),
        1 => v.to_string(),
        _ => format!("{v}^{e}"),
    };
    let zs = one("z", a);
    let ws = one("w", b);
    match (zs.is_empty(), ws.is_empty()) {
        (true, _) => ws,
        (_, true) => zs,
        _ => format!("{zs}*{ws}"),
    }
}

/// Determinant of a square matrix of Laurent polynomials by expansion over
/// column subsets (row-by-row Laplace with memoization).
pub fn det(m: &[Vec<Laurent2>]) -> Laurent2 {
    let n = m.len();
    if n == 0 {
        return Laurent2::constant(C64::new(1.0, 0.0));
    }
    // dp[mask] = determinant of the minor with rows 0..popcount(mask), columns in mask
    let mut dp: Vec<Option<Laurent2>> = vec![None; 1 << n];
    dp[0] = Some(Laurent2::constant(C64::new(1.0, 0.0)));
    for mask in 1usize..(1 << n) {
        let row = mask.count_ones() as usize - 1;
        let mut acc = Laurent2::zero();
        for col in 0..n {
            if mask & (1 << col) == 0 {
                continue;
            }
            // sign: number of selected columns greater than col
            let higher = (mask >> (col + 1)).count_ones() as usize;
            if m[row][col].is_zero() {
                continue;
            }
            if let Some(sub) = &dp[mask & !(1 << col)] {
                if sub.is_zero() {
                    continue;
                }
                let term = &m[row][col] * sub;
                acc = if higher % 2 == 0 { &acc + &term } else { &acc - &term };
            }
        }
        dp[mask] = Some(acc);
    }
    dp[(1 << n) - 1].take().unwrap()
}

/// Adjugate: adj[j][i] = (-1)^{i+j} det(minor removing row i and column j),
/// so that adj * m = det(m) * Id.
pub fn adjugate(m: &[Vec<Laurent2>]) -> Vec<Vec<Laurent2>> {
    let n = m.len();
    let mut adj = vec![vec![Laurent2::zero(); n]; n];
    if n == 1 {
        adj[0][0] = Laurent2::constant(C64::new(1.0, 0.0));
        return adj;
    }
    for i in 0..n {
        for j in 0..n {
            let minor: Vec<Vec<Laurent2>> = (0..n)
                .filter(|&r| r != i)
                .map(|r| (0..n).filter(|&c| c != j).map(|c| m[r][c].clone()).collect())
                .collect();
            let d = det(&minor);
            adj[j][i] = if (i + j) % 2 == 0 { d } else { -&d };
        }
    }
    adj
}
