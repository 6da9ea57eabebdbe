use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use dimer_core::clt::{clt_harness, CltConfig, CltRow, Rational};
use dimer_core::correlations::{
    inclusion_exclusion_check, joint_probability, pattern_probability, vertex_sum_residual,
};
use dimer_core::faces::check_flatness;
use dimer_core::kernel::{decay_rate, DecayFit};
use dimer_core::sampler::{format_sample, sample_from, sample_rng, WindowState};
use dimer_core::scaling::{
    cross_pattern_sum_rule, edge_amplitudes, elliptic_convention, free_energy, gaseous_hessian,
    gaseous_probabilities, pattern_amplitude, AmplitudeEntry, AmplitudeReport,
};
use dimer_core::spectral::{build_spectral_with, liquid_geometry, DEFAULT_SCAN_GRID, ROOT_TOL};
use dimer_core::testfn::TestFunction;
use dimer_core::{Color, Error, GraphSpec, KernelTable, Pattern, PatternEdge, Phase, SpectralData, VERSION};

#[derive(Parser, Debug, Serialize)]
#[command(name = "dimerlab", version, about = "Dimer model correlations and fluctuation amplitudes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Args, Debug, Serialize)]
struct Options {
    /// Torus grid for root scans and free-energy integrals.
    #[arg(long, global = true, default_value_t = DEFAULT_SCAN_GRID)]
    grid: usize,
    /// Kernel table radius; each command has its own default.
    #[arg(long, global = true)]
    radius: Option<i64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Override an edge weight, `id=value`.
    #[arg(long = "weight", global = true, value_parser = parse_weight)]
    weights: Vec<(String, f64)>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Txt)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Txt,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Classify the phase and report the characteristic polynomial and its torus roots.
    Phase { graph: PathBuf },
    /// Probability of a pattern, e.g. `a` or `w1b1+w2b2@1,0`.
    Prob {
        graph: PathBuf,
        #[arg(long)]
        pattern: String,
    },
    /// Joint probability of several patterns.
    Joint {
        graph: PathBuf,
        #[arg(long = "pattern", required = true)]
        patterns: Vec<String>,
    },
    /// Cov(p1, p2 translated by each offset).
    Cov {
        graph: PathBuf,
        #[arg(long)]
        p1: String,
        #[arg(long)]
        p2: String,
        /// `x,y`; repeatable.
        #[arg(long = "offset", value_parser = parse_offset, default_value = "0,0")]
        offsets: Vec<(i64, i64)>,
    },
    /// White-noise amplitudes and dipole vectors.
    Amplitude {
        graph: PathBuf,
        /// `all` for every edge class.
        #[arg(long)]
        edges: Option<String>,
        #[arg(long = "pattern")]
        patterns: Vec<String>,
    },
    /// Free energy, edge probabilities and the log-weight Hessian.
    FreeEnergy { graph: PathBuf },
    /// Exact window samples, one record per line.
    Sample {
        graph: PathBuf,
        /// Window edges in pattern syntax.
        #[arg(long, conflicts_with = "cells")]
        window: Option<String>,
        /// All edges of the cells with |x|, |y| ≤ this.
        #[arg(long)]
        cells: Option<i64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Empirical moments of the pattern fluctuation field.
    Clt {
        graph: PathBuf,
        #[arg(long)]
        pattern: String,
        /// `gaussian:cx,cy,σ`, `bump:cx,cy,ρ` or `spline:cx,cy,h`; repeatable.
        #[arg(long = "phi", required = true)]
        phis: Vec<String>,
        /// Rational, e.g. `1/16`; repeatable.
        #[arg(long = "eps", required = true)]
        eps: Vec<String>,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs the invariant checks on one graph.
    Check { graph: PathBuf },
}

fn parse_weight(s: &str) -> Result<(String, f64), String> {
    let (id, v) = s.split_once('=').ok_or("expected id=value")?;
    Ok((id.trim().to_string(), v.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_offset(s: &str) -> Result<(i64, i64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    Ok((x.trim().parse().map_err(|e| format!("{e}"))?, y.trim().parse().map_err(|e| format!("{e}"))?))
}

struct Output {
    out: Box<dyn Write>,
    format: Format,
}

impl Output {
    fn line(&mut self, s: impl AsRef<str>) -> io::Result<()> {
        writeln!(self.out, "{}", s.as_ref())
    }

    /// Key-value line in txt, `#`-comment in csv.
    fn kv(&mut self, k: &str, v: impl std::fmt::Display) -> io::Result<()> {
        match self.format {
            Format::Txt => writeln!(self.out, "{k}: {v}"),
            Format::Csv => writeln!(self.out, "# {k}: {v}"),
        }
    }

    fn table(&mut self, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        match self.format {
            Format::Csv => {
                self.line(header.join(","))?;
                for r in rows {
                    self.line(r.join(","))?;
                }
            }
            Format::Txt => {
                let mut w: Vec<usize> = header.iter().map(|h| h.len()).collect();
                for r in rows {
                    for (i, c) in r.iter().enumerate() {
                        w[i] = w[i].max(c.len());
                    }
                }
                let fmt = |cells: Vec<&str>| {
                    cells.iter().enumerate().map(|(i, c)| format!("{c:>width$}", width = w[i])).collect::<Vec<_>>().join("  ")
                };
                self.line(fmt(header.to_vec()))?;
                for r in rows {
                    self.line(fmt(r.iter().map(|s| s.as_str()).collect()))?;
                }
            }
        }
        Ok(())
    }
}

struct Ctx {
    g: GraphSpec,
    s: SpectralData,
    radius: Option<i64>,
}

impl Ctx {
    fn table(&self, default: i64) -> dimer_core::Result<KernelTable> {
        KernelTable::build(&self.g, &self.s, self.radius.unwrap_or(default))
    }

    fn pattern(&self, text: &str) -> dimer_core::Result<Pattern> {
        if text.ends_with(".toml") {
            Pattern::load(&self.g, text)
        } else {
            Pattern::parse(&self.g, text)
        }
    }
}

fn load(path: &PathBuf, opts: &Options) -> dimer_core::Result<Ctx> {
    let mut g = GraphSpec::load(path)?;
    for (id, v) in &opts.weights {
        let e = g.edge_index(id).ok_or_else(|| Error::Parse(format!("no edge named {id}")))?;
        g = g.with_weight(e, *v)?;
    }
    check_flatness(&g)?;
    let s = build_spectral_with(&g, opts.grid, ROOT_TOL)?;
    Ok(Ctx { g, s, radius: opts.radius })
}

fn fmt_c(z: dimer_core::C64) -> String {
    format!("{:.12}{:+.12}i", z.re, z.im)
}

fn graph_path(c: &Command) -> &PathBuf {
    match c {
        Command::Phase { graph }
        | Command::Prob { graph, .. }
        | Command::Joint { graph, .. }
        | Command::Cov { graph, .. }
        | Command::Amplitude { graph, .. }
        | Command::FreeEnergy { graph }
        | Command::Sample { graph, .. }
        | Command::Clt { graph, .. }
        | Command::Check { graph } => graph,
    }
}

fn run(cli: &Cli, out: &mut Output) -> anyhow::Result<()> {
    let ctx = load(graph_path(&cli.command), &cli.opts)?;
    let (g, s) = (&ctx.g, &ctx.s);
    out.kv("dimerlab", VERSION)?;
    out.kv("graph", &g.name)?;
    out.kv("graph_hash", g.hash())?;
    out.kv("config", serde_json::to_string(cli)?)?;
    out.kv("phase", s.phase)?;
    match &cli.command {
        Command::Phase { .. } => {
            if s.exact {
                out.kv("P", &s.p)?;
            }
            out.kv("min_abs_P", format!("{:.12e} at (θ,φ) = ({:.6}, {:.6})", s.min_abs_p, s.argmin.0, s.argmin.1))?;
            if let Some(wn) = s.winding {
                out.kv("winding", format!("({}, {})", wn.0, wn.1))?;
            }
            if let Some(n) = &s.note {
                out.kv("note", n)?;
            }
            let rows: Vec<Vec<String>> = s
                .roots
                .iter()
                .map(|r| {
                    vec![
                        format!("{:.12}", r.theta),
                        format!("{:.12}", r.phi),
                        fmt_c(r.z),
                        fmt_c(r.w),
                        format!("{:.3e}", r.residual),
                        format!("{:.3e}", r.jacobian),
                        r.double.to_string(),
                    ]
                })
                .collect();
            out.table(&["theta", "phi", "z", "w", "residual", "jacobian", "double"], &rows)?;
            if s.phase == Phase::LiquidGeneric {
                let d = liquid_geometry(s, g)?;
                out.kv("xhat", fmt_c(d.xhat))?;
                out.kv("yhat", fmt_c(d.yhat))?;
                out.kv("nu", d.nu)?;
            }
        }
        Command::Prob { pattern, .. } => {
            let t = ctx.table(16)?;
            let p = ctx.pattern(pattern)?;
            let pa = pattern_probability(&t, g, s, &p)?;
            out.kv("kernel_method", t.method.name())?;
            let d = match (&pa.raw_dipole, s.phase) {
                (Some(raw), Phase::LiquidGeneric) => fmt_c(*raw * liquid_geometry(s, g)?.nu),
                _ => "-".into(),
            };
            out.table(&["pattern", "probability", "dipole"], &[vec![pattern.clone(), format!("{:.15}", pa.probability), d]])?;
        }
        Command::Joint { patterns, .. } => {
            let t = ctx.table(16)?;
            let ps: Vec<Pattern> = patterns.iter().map(|p| ctx.pattern(p)).collect::<Result<_, _>>()?;
            let j = joint_probability(&t, g, &ps)?;
            out.table(&["patterns", "joint"], &[vec![patterns.join(" & "), format!("{j:.15}")]])?;
        }
        Command::Cov { p1, p2, offsets, .. } => {
            let far = offsets.iter().map(|(x, y)| x.abs().max(y.abs())).max().unwrap_or(0);
            let t = ctx.table(far + 8)?;
            let a = ctx.pattern(p1)?;
            let b = ctx.pattern(p2)?;
            let pa = joint_probability(&t, g, std::slice::from_ref(&a))?;
            let pb = joint_probability(&t, g, std::slice::from_ref(&b))?;
            let mut rows = Vec::new();
            for &(x, y) in offsets {
                let j = joint_probability(&t, g, &[a.clone(), b.translate((x, y))])?;
                rows.push(vec![x.to_string(), y.to_string(), format!("{:.15e}", j - pa * pb)]);
            }
            out.table(&["x", "y", "cov"], &rows)?;
        }
        Command::Amplitude { edges, patterns, .. } => {
            let t = if s.phase == Phase::Gaseous { ctx.table(80)? } else { ctx.table(512)? };
            let report = if edges.as_deref() == Some("all") || patterns.is_empty() {
                edge_amplitudes(g, s, Some(&t))?
            } else {
                let ps: Vec<Pattern> = patterns.iter().map(|p| ctx.pattern(p)).collect::<Result<_, _>>()?;
                let mut rep = AmplitudeReport::new(g, s);
                for a in &ps {
                    for b in &ps {
                        rep.entries.push(pattern_amplitude(&t, g, s, a, b)?);
                    }
                }
                rep
            };
            write_amplitudes(out, g, s, &report)?;
        }
        Command::FreeEnergy { .. } => {
            if s.phase != Phase::Gaseous && s.phase != Phase::LiquidGeneric {
                return Err(Error::Phase(format!("free energy integrand is singular in phase {}", s.phase)).into());
            }
            out.kv("free_energy", format!("{:.15}", free_energy(s, cli.opts.grid)))?;
            let probs = gaseous_probabilities(g, s, cli.opts.grid);
            let h = gaseous_hessian(g, s, cli.opts.grid);
            let mut header = vec!["edge", "probability"];
            let ids: Vec<&str> = g.edges.iter().map(|e| e.id.as_str()).collect();
            header.extend(ids.iter());
            let rows: Vec<Vec<String>> = (0..g.edges.len())
                .map(|i| {
                    let mut r = vec![ids[i].to_string(), format!("{:.12}", probs[i])];
                    r.extend((0..g.edges.len()).map(|j| format!("{:.12}", h[(i, j)])));
                    r
                })
                .collect();
            out.table(&header, &rows)?;
        }
        Command::Sample { window, cells, n, seed, .. } => {
            let (edges, id): (Vec<PatternEdge>, String) = match (window, cells) {
                (Some(w), _) => (ctx.pattern(w)?.edges, w.clone()),
                (None, Some(r)) => {
                    let mut v = Vec::new();
                    for y in -r..=*r {
                        for x in -r..=*r {
                            v.extend((0..g.edges.len()).map(|e| PatternEdge::new(e, (x, y))));
                        }
                    }
                    (v, format!("cells{r}"))
                }
                _ => return Err(Error::Precondition("sample needs --window or --cells".into()).into()),
            };
            let far = edges.iter().map(|e| e.offset.0.abs().max(e.offset.1.abs())).max().unwrap_or(0);
            let t = ctx.table(2 * far + 4)?;
            let state = WindowState::<f64>::new(&t, g, &edges)?;
            let order: Vec<String> = state
                .window
                .iter()
                .map(|e| format!("{}@{},{}", g.edges[e.edge].id, e.offset.0, e.offset.1))
                .collect();
            out.line(format!("# window {id}: {}", order.join(" ")))?;
            let lines: Vec<String> = (0..*n)
                .into_par_iter()
                .map(|i| Ok(format_sample(*seed, &id, &sample_from(&state, &mut sample_rng(*seed, i as u64))?)))
                .collect::<dimer_core::Result<_>>()?;
            for l in lines {
                out.line(l)?;
            }
        }
        Command::Clt { pattern, phis, eps, n, seed, .. } => {
            let cfg = CltConfig {
                pattern: ctx.pattern(pattern)?,
                phis: phis.iter().map(|p| Ok((p.clone(), TestFunction::parse(p)?))).collect::<dimer_core::Result<_>>()?,
                epsilons: eps.iter().map(|e| e.parse::<Rational>()).collect::<dimer_core::Result<_>>()?,
                n_samples: *n,
                seed: *seed,
            };
            let reach = cfg
                .phis
                .iter()
                .flat_map(|(_, f)| cfg.epsilons.iter().map(move |e| {
                    let c = f.center();
                    ((c[0].hypot(c[1]) + f.support_radius()) / e.value()).ceil() as i64
                }))
                .max()
                .unwrap_or(0);
            let t = ctx.table(2 * reach + 8)?;
            let rows = clt_harness(&t, g, s, &cfg)?;
            write_clt(out, &rows)?;
        }
        Command::Check { .. } => check(out, &ctx)?,
    }
    Ok(())
}

fn write_amplitudes(out: &mut Output, g: &GraphSpec, s: &SpectralData, rep: &AmplitudeReport) -> anyhow::Result<()> {
    if let Some(e) = &rep.elliptic {
        out.kv("elliptic_convention", &e.convention)?;
        out.kv("K", format!("{:.15}", e.k_parameter))?;
    }
    let d = |v: &Option<dimer_core::C64>| v.map(fmt_c).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = rep
        .entries
        .iter()
        .map(|e: &AmplitudeEntry| {
            vec![
                e.p1.clone(),
                e.p2.clone(),
                format!("{:.12}", e.white_noise),
                format!("{:.3e}", e.error),
                format!("{:.12}", e.gff_coefficient),
                d(&e.dipole1),
                d(&e.dipole2),
                serde_json::to_value(e.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            ]
        })
        .collect();
    out.table(&["p1", "p2", "white_noise", "error", "gff_coefficient", "dipole1", "dipole2", "method"], &rows)?;
    if s.phase != Phase::Solid && rep.entries.len() == g.edges.len() * g.edges.len() {
        let ne = g.edges.len();
        let mut worst: f64 = 0.0;
        for (color, count) in [(Color::White, g.n), (Color::Black, g.n)] {
            for v in 0..count {
                let inc = g.incident(color, v);
                let m = nalgebra::DMatrix::from_fn(inc.len(), inc.len(), |i, j| rep.entries[inc[i] * ne + inc[j]].white_noise);
                let methods: Vec<_> = inc.iter().map(|&i| rep.entries[i * ne + i].method).collect();
                worst = worst.max(cross_pattern_sum_rule(&m, &methods)?);
            }
        }
        out.kv("vertex_sum_rule_residual", format!("{worst:.3e}"))?;
    }
    Ok(())
}

fn write_clt(out: &mut Output, rows: &[CltRow]) -> io::Result<()> {
    let header: Vec<&str> = CltRow::CSV_HEADER.split(',').collect();
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.csv().split(',').map(String::from).collect()).collect();
    out.table(&header, &cells)
}

fn verdict(out: &mut Output, name: &str, ok: bool, detail: String) -> io::Result<bool> {
    out.line(format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" }))?;
    Ok(ok)
}

fn check(out: &mut Output, ctx: &Ctx) -> anyhow::Result<()> {
    let (g, s) = (&ctx.g, &ctx.s);
    let mut ok = true;
    ok &= verdict(out, "flatness", true, "alternating face products match".into())?;
    // Q K = P Id at a few torus and off-torus points
    let mut qk: f64 = 0.0;
    for (r, th) in [(1.0, 0.3), (0.7, 1.9), (1.3, -2.2)] {
        let z = dimer_core::C64::from_polar(r, th);
        let w = dimer_core::C64::from_polar(1.0 / r, th * 0.7 + 0.4);
        let m = s.q_at(z, w) * s.k_at(z, w);
        let p = s.p_at(z, w);
        for i in 0..s.n {
            for j in 0..s.n {
                let target = if i == j { p } else { dimer_core::C64::new(0.0, 0.0) };
                qk = qk.max((m[(i, j)] - target).norm() / s.p_scale());
            }
        }
    }
    ok &= verdict(out, "adjugate", qk < 1e-12, format!("max |QK - P Id| / scale = {qk:.2e}"))?;
    if s.phase == Phase::Solid || s.phase == Phase::LiquidNongeneric {
        out.kv("skipped", "kernel checks need a gaseous or liquid_generic phase")?;
    } else {
        let t = ctx.table(if s.phase == Phase::Gaseous { 32 } else { 128 })?;
        let vs = vertex_sum_residual(&t, g)?;
        let tol = if s.phase == Phase::Gaseous { 1e-7 } else { 1e-4 };
        ok &= verdict(out, "vertex_sums", vs <= tol, format!("max |Σ P(e) - 1| = {vs:.2e} (tol {tol:.0e})"))?;
        let mut worst: f64 = 0.0;
        let ne = g.edges.len();
        for k in 0..20usize {
            let e1 = PatternEdge::new(k % ne, (0, 0));
            let e2 = PatternEdge::new((k * 7 + 3) % ne, ((k as i64 % 5) - 2, (k as i64 * 3 % 5) - 2));
            if e1 != e2 {
                worst = worst.max(inclusion_exclusion_check(&t, g, e1, e2)?.abs());
            }
        }
        ok &= verdict(out, "inclusion_exclusion", worst <= 1e-8, format!("max residual {worst:.2e}"))?;
        let p = Pattern::single(0, g);
        let q = Pattern::single(ne - 1, g).translate((1, 2));
        let j0 = joint_probability(&t, g, &[p.clone(), q.clone()])?;
        let j1 = joint_probability(&t, g, &[p.translate((3, -2)), q.translate((3, -2))])?;
        ok &= verdict(out, "translation_invariance", (j0 - j1).abs() <= 1e-12, format!("|Δ| = {:.2e}", (j0 - j1).abs()))?;
        match decay_rate(&t, t.radius) {
            Ok(DecayFit::Exponential { rate, .. }) => out.kv("decay", format!("exponential, rate {rate:.6}"))?,
            Ok(DecayFit::Power { exponent, .. }) => out.kv("decay", format!("power law, exponent {exponent:.4}"))?,
            Err(e) => out.kv("decay", format!("no fit ({e})"))?,
        }
        if s.phase == Phase::Gaseous && g.name == "square_octagon" {
            let e = elliptic_convention();
            out.kv("elliptic_convention", e.convention)?;
        }
    }
    if !ok {
        return Err(Error::Convergence("invariant checks failed".into()).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.opts.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.opts.threads).build_global().ok();
    }
    let sink: Box<dyn Write> = match &cli.opts.out {
        Some(p) => match File::create(p) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("{}", serde_json::json!({"error": "io", "message": e.to_string()}));
                return ExitCode::from(2);
            }
        },
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let mut out = Output { out: sink, format: cli.opts.format };
    let res = run(&cli, &mut out);
    let flushed = out.out.flush();
    match res.and(flushed.map_err(Into::into)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map(Error::kind).unwrap_or("io");
            eprintln!("{}", serde_json::json!({"error": kind, "message": e.to_string()}));
            ExitCode::from(1)
        }
    }
}
