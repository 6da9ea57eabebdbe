//! Empirical moments of the pattern fluctuation field from exact window
//! samples, compared with the predicted limit variance.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{joint_probability, pattern_probability};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::green::green_pairing;
use crate::kernel::KernelTable;
use crate::pattern::{Pattern, PatternEdge};
use crate::sampler::{sample_from, sample_rng, WindowState};
use crate::scaling::{gaseous_pattern_amplitude, normalized_dipole, white_noise_gaseous, white_noise_liquid, LiquidOptions};
use crate::spectral::{liquid_geometry, Embedding, Phase, SpectralData};
use crate::testfn::TestFunction;
use crate::C64;

pub const MIN_SAMPLES: usize = 1000;
pub const BOOTSTRAP_RESAMPLES: usize = 400;

/// Exact rational p/q, used for ε.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Parse(format!("{num}/{den}: epsilon must be a positive rational")));
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn halved(&self) -> Self {
        Self { num: self.num, den: self.den * 2 }
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("{s}: expected p/q"));
        let (p, q) = s.split_once('/').unwrap_or((s, "1"));
        Rational::new(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    /// Third and fourth cumulants.
    pub c3: f64,
    pub c4: f64,
    pub m4: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Moments { mean, var: m2, c3: m3, c4: m4 - 3.0 * m2 * m2, m4 }
}

/// Percentile bootstrap interval for a statistic.
pub fn bootstrap_ci(xs: &[f64], stat: impl Fn(&[f64]) -> f64, resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = sample_rng(seed, u64::MAX);
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut vals: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.gen_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    let lo = ((1.0 - level) / 2.0 * resamples as f64).floor() as usize;
    let hi = (((1.0 + level) / 2.0 * resamples as f64).ceil() as usize).min(resamples) - 1;
    (vals[lo], vals[hi])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CltRow {
    pub epsilon: Rational,
    pub phi_id: String,
    pub n_samples: usize,
    pub moments: Moments,
    pub ci_low: f64,
    pub ci_high: f64,
    pub predicted_var: f64,
    /// ε² Σ_x Σ_y φ φ Cov at this ε, from the kernel.
    pub exact_var: f64,
    pub skewness: f64,
    pub kurtosis_ratio: f64,
    pub window_size: usize,
}

impl CltRow {
    pub const CSV_HEADER: &'static str =
        "epsilon,phi_id,n_samples,mean,var,c3,c4,ci_low,ci_high,predicted_var,exact_var,skewness,kurtosis_ratio";

    pub fn csv(&self) -> String {
        let m = &self.moments;
        format!(
            "{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.6},{:.6}",
            self.epsilon,
            self.phi_id,
            self.n_samples,
            m.mean,
            m.var,
            m.c3,
            m.c4,
            self.ci_low,
            self.ci_high,
            self.predicted_var,
            self.exact_var,
            self.skewness,
            self.kurtosis_ratio
        )
    }

    /// Standard error of the sample skewness under normality.
    pub fn skewness_se(&self) -> f64 {
        (6.0 / self.n_samples as f64).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct CltConfig {
    pub pattern: Pattern,
    pub phis: Vec<(String, TestFunction)>,
    pub epsilons: Vec<Rational>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Limit variance A ∫φ² plus, in the liquid phase, the Green pairing of the dipole derivatives.
pub fn predicted_variance(t: &KernelTable, g: &GraphSpec, s: &SpectralData, p: &Pattern, phi: &TestFunction) -> Result<f64> {
    let l2 = phi.l2_squared();
    match s.phase {
        Phase::Gaseous => {
            let a = if p.edges.len() == 1 && p.edges[0].offset == (0, 0) {
                white_noise_gaseous(g, s, p.edges[0].edge)?.value
            } else {
                gaseous_pattern_amplitude(t, g, p, p)?
            };
            Ok(a * l2)
        }
        Phase::LiquidGeneric => {
            let geom = liquid_geometry(s, g)?;
            let pa = pattern_probability(t, g, s, p)?;
            let a = white_noise_liquid(t, g, s, &geom, &pa, &pa, &LiquidOptions::default())?;
            let d = normalized_dipole(&pa, &geom)?;
            Ok(a.value * l2 + green_pairing(phi, d, phi, d)?.value)
        }
        Phase::LiquidNongeneric => Err(Error::Resonant("variance diverges as log(1/eps)".into())),
        Phase::Solid => Err(Error::Phase("solid phase".into())),
    }
}

/// Offsets x with φ(ε u_x) ≠ 0, in a fixed order.
fn support_cells(emb: &Embedding, g: &GraphSpec, phi: &TestFunction, eps: f64) -> Vec<((i64, i64), f64)> {
    let e1 = emb.lattice(g, 1, 0);
    let e2 = emb.lattice(g, 0, 1);
    let c = phi.center();
    let det = (e1.conj() * e2).im.abs();
    let reach = ((c[0] * c[0] + c[1] * c[1]).sqrt() + phi.support_radius()) / eps;
    let rx = (reach * e2.norm() / det).ceil() as i64 + 1;
    let ry = (reach * e1.norm() / det).ceil() as i64 + 1;
    let mut out = Vec::new();
    for y in -ry..=ry {
        for x in -rx..=rx {
            let u: C64 = (e1 * x as f64 + e2 * y as f64) * eps;
            let v = phi.eval([u.re, u.im]);
            if v != 0.0 {
                out.push(((x, y), v));
            }
        }
    }
    out
}

pub fn clt_harness(t: &KernelTable, g: &GraphSpec, s: &SpectralData, cfg: &CltConfig) -> Result<Vec<CltRow>> {
    if cfg.n_samples < MIN_SAMPLES {
        return Err(Error::Precondition(format!("n_samples {} below {MIN_SAMPLES}", cfg.n_samples)));
    }
    if s.phase == Phase::Solid {
        return Err(Error::Phase("solid phase".into()));
    }
    let emb = Embedding::for_phase(s, g)?;
    let p = &cfg.pattern;
    let pbar = joint_probability(t, g, std::slice::from_ref(p))?;
    let reach = p.edges.iter().map(|e| e.offset.0.abs().max(e.offset.1.abs())).max().unwrap_or(0) + 1;
    let mut rows = Vec::new();
    for eps in &cfg.epsilons {
        let ev = eps.value();
        let supports: Vec<Vec<((i64, i64), f64)>> =
            cfg.phis.iter().map(|(_, phi)| support_cells(&emb, g, phi, ev)).collect();
        let mut cells: Vec<(i64, i64)> = supports.iter().flatten().map(|(x, _)| *x).collect();
        cells.sort();
        cells.dedup();
        let far = cells.iter().map(|(x, y)| x.abs().max(y.abs())).max().unwrap_or(0) + reach;
        if far > t.radius {
            return Err(Error::Precondition(format!(
                "window reaches {far} cells, kernel radius {} too small",
                t.radius
            )));
        }
        let mut seen = HashSet::new();
        let mut window: Vec<PatternEdge> = Vec::new();
        for &x in &cells {
            for e in &p.translate(x).edges {
                if seen.insert(*e) {
                    window.push(*e);
                }
            }
        }
        let state = WindowState::<f64>::new(t, g, &window)?;
        let order = state.window.clone();
        let index: std::collections::HashMap<PatternEdge, usize> =
            order.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        // for each φ: (edge indices of each translate, weight)
        let plans: Vec<Vec<(Vec<usize>, f64)>> = supports
            .iter()
            .map(|sup| {
                sup.iter()
                    .map(|(x, v)| (p.translate(*x).edges.iter().map(|e| index[e]).collect(), *v))
                    .collect()
            })
            .collect();
        let values: Vec<Vec<f64>> = (0..cfg.n_samples)
            .into_par_iter()
            .map(|i| {
                let bits = sample_from(&state, &mut sample_rng(cfg.seed, i as u64))?;
                Ok(plans
                    .iter()
                    .map(|plan| {
                        ev * plan
                            .iter()
                            .map(|(idx, v)| v * (idx.iter().all(|&k| bits[k]) as u8 as f64 - pbar))
                            .sum::<f64>()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (k, (id, phi)) in cfg.phis.iter().enumerate() {
            let xs: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let m = moments(&xs);
            let (ci_low, ci_high) =
                bootstrap_ci(&xs, |b| moments(b).var, BOOTSTRAP_RESAMPLES, 0.95, cfg.seed ^ k as u64);
            let exact_var = exact_variance(t, g, p, pbar, &supports[k], ev)?;
            rows.push(CltRow {
                epsilon: *eps,
                phi_id: id.clone(),
                n_samples: cfg.n_samples,
                skewness: m.c3 / m.var.powf(1.5),
                kurtosis_ratio: m.m4 / (3.0 * m.var * m.var),
                moments: m,
                ci_low,
                ci_high,
                predicted_var: predicted_variance(t, g, s, p, phi)?,
                exact_var,
                window_size: order.len(),
            });
        }
    }
    Ok(rows)
}

/// ε² Σ_x Σ_y φ(u_x) φ(u_y) Cov(p_x, p_y).
pub fn exact_variance(t: &KernelTable, g: &GraphSpec, p: &Pattern, pbar: f64, sup: &[((i64, i64), f64)], eps: f64) -> Result<f64> {
    let rows: Vec<f64> = sup
        .par_iter()
        .map(|(x, vx)| {
            let mut acc = 0.0;
            for (y, vy) in sup {
                let d = (y.0 - x.0, y.1 - x.1);
                let j = joint_probability(t, g, &[p.clone(), p.translate(d)])?;
                acc += vy * (j - pbar * pbar);
            }
            Ok(vx * acc)
        })
        .collect::<Result<_>>()?;
    Ok(eps * eps * rows.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parsing() {
        let r: Rational = "1/16".parse().unwrap();
        assert_eq!(r.value(), 0.0625);
        assert_eq!(r.halved().to_string(), "1/32");
        assert!("0/3".parse::<Rational>().is_err());
        assert!("x".parse::<Rational>().is_err());
    }

    #[test]
    fn gaussian_moments() {
        let xs = [-1.0, 1.0, -1.0, 1.0];
        let m = moments(&xs);
        assert_eq!((m.mean, m.var, m.c3), (0.0, 1.0, 0.0));
        assert_eq!(m.c4, -2.0);
    }

    #[test]
    fn bootstrap_brackets_statistic() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let v = moments(&xs).var;
        let (lo, hi) = bootstrap_ci(&xs, |b| moments(b).var, 200, 0.95, 1);
        assert!(lo < v && v < hi);
    }
}
