//! Subcommands: each returns the artifacts it produced as (file name, bytes).

use std::fmt::Write as _;
use std::path::Path;

use perchomog::coarsen::multiscale_poincare;
use perchomog::energy::{
    abar_estimate, energy_records, ensemble_cells, omega_decay, omega_records, EffectiveMatrixEstimate, EnsembleConfig, Mat3,
};
use perchomog::experiments::{corrector_ensemble, dirichlet_experiment, dk_profile, fit_dk_decay, random_harmonic, BoundaryFamily, DirichletConfig};
use perchomog::io;
use perchomog::lattice::Window;
use perchomog::partition::{coarseness_stats, partition_p, partition_q, q_exponent, Partition};
use perchomog::percolation::{is_crossable, Environment};
use perchomog::regularity::LowFrequencyField;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Auto, RunConfig};
use crate::svg::{loglog, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<perchomog::Error> for CliError {
    fn from(e: perchomog::Error) -> Self {
        match e {
            perchomog::Error::Invalid(m) => CliError::Config(m),
            perchomog::Error::Numerical(m) => CliError::Numerical(m),
            perchomog::Error::Format(m) => CliError::Io(m),
            perchomog::Error::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Sample,
    Partition,
    Energy,
    Abar,
    Dirichlet,
    Corrector,
    Regularity,
    Poincare,
    Report,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Sample => "sample",
            Subcommand::Partition => "partition",
            Subcommand::Energy => "energy",
            Subcommand::Abar => "abar",
            Subcommand::Dirichlet => "dirichlet",
            Subcommand::Corrector => "corrector",
            Subcommand::Regularity => "regularity",
            Subcommand::Poincare => "poincare",
            Subcommand::Report => "report",
        }
    }
}

#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    /// Human-readable lines for stdout.
    pub summary: Vec<String>,
}

impl Artifacts {
    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

pub fn run(sub: Subcommand, cfg: &RunConfig, out: &Path) -> Result<Artifacts, CliError> {
    match sub {
        Subcommand::Sample => sample(cfg),
        Subcommand::Partition => partition(cfg),
        Subcommand::Energy => energy(cfg),
        Subcommand::Abar => abar(cfg),
        Subcommand::Dirichlet => dirichlet(cfg),
        Subcommand::Corrector => corrector(cfg),
        Subcommand::Regularity => regularity(cfg),
        Subcommand::Poincare => poincare(cfg),
        Subcommand::Report => report(out),
    }
}

fn window(cfg: &RunConfig) -> Result<Window, CliError> {
    Ok(Window::new(cfg.d, cfg.m)?)
}

fn sample(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let w = window(cfg)?;
    let law = cfg.law();
    let envs: Vec<(u64, Vec<u8>, f64, bool)> = (0..cfg.n_envs)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(law, w, cfg.seed, e);
            (e, io::environment_bytes(&env), env.open_fraction(), is_crossable(&env, w.bbox()))
        })
        .collect();
    let mut a = Artifacts::default();
    let mut csv = String::from("env_index,open_fraction,crossable,law,mode\n");
    for (e, bytes, frac, cross) in envs {
        writeln!(csv, "{e},{frac},{cross},{},{}", law.kind.name(), cfg.mode.name()).unwrap();
        a.file(format!("env_{e:05}.perc"), bytes);
    }
    a.say(format!("{} environments written", cfg.n_envs));
    a.file("sample.csv", csv.into_bytes());
    Ok(a)
}

fn partition(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let w = window(cfg)?;
    let law = cfg.law();
    let parts: Vec<Result<(Partition, Partition), CliError>> = (0..cfg.n_envs)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(law, w, cfg.seed, e);
            let p = partition_p(&env, w, w.bbox(), cfg.rule, cfg.mode)?;
            let q = partition_q(&env, &p, w.bbox(), cfg.tau_q)?;
            Ok((p, q))
        })
        .collect();
    let parts: Vec<(Partition, Partition)> = parts.into_iter().collect::<Result<_, _>>()?;
    let mut refs = Vec::new();
    for (e, (p, q)) in parts.iter().enumerate() {
        refs.push((e as u64, p));
        refs.push((e as u64, q));
    }
    let t = q_exponent(cfg.d) as f64;
    let ps: Vec<Partition> = parts.iter().map(|(p, _)| p.clone()).collect();
    let stats = coarseness_stats(&ps, t, cfg.tau_q)?;
    let mut csv = String::from("env_index,t,lambda_t,threshold,minimal_scale,mode\n");
    for (e, (l, s)) in stats.lambdas.iter().zip(&stats.minimal_scales).enumerate() {
        writeln!(csv, "{e},{t},{l},{},{s},{}", cfg.tau_q, cfg.mode.name()).unwrap();
    }
    let mean_size = |k: usize| {
        let sizes: Vec<i64> = parts.iter().flat_map(|pq| if k == 0 { pq.0.sizes() } else { pq.1.sizes() }).collect();
        sizes.iter().sum::<i64>() as f64 / sizes.len() as f64
    };
    let mut a = Artifacts::default();
    a.say(format!("mean element size seen from a vertex: P {:.3}, Q {:.3}", mean_size(0), mean_size(1)));
    a.file("partition.csv", io::partition_csv(&refs)?);
    a.file("coarseness.csv", csv.into_bytes());
    Ok(a)
}

fn ensemble(cfg: &RunConfig) -> Result<(Vec<perchomog::energy::CellRecord>, EffectiveMatrixEstimate), CliError> {
    let ec = EnsembleConfig {
        law: cfg.law(),
        window: window(cfg)?,
        n_envs: cfg.n_envs,
        seed: cfg.seed,
        levels: cfg.levels.clone(),
        rule: cfg.rule,
        mode: cfg.mode,
        opts: cfg.solve_options(),
    };
    let cells = ensemble_cells(&ec)?;
    let est = abar_estimate(&cells, cfg.d, cfg.seed)?;
    Ok((cells, est))
}

fn energy(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let (cells, est) = ensemble(cfg)?;
    let mut recs = energy_records(&cells, cfg.d);
    recs.extend(omega_records(&cells, &est.abar, cfg.d)?);
    let om = omega_decay(&cells, &est.abar, cfg.d, cfg.seed)?;
    let mut csv = String::from("level,omega_plus,ci_lo,ci_hi,omega_signed\n");
    for k in 0..om.levels.len() {
        writeln!(csv, "{},{},{},{},{}", om.levels[k], om.omega[k], om.omega_ci[k].0, om.omega_ci[k].1, om.omega_signed[k]).unwrap();
    }
    let mut a = Artifacts::default();
    a.say(format!("omega_+ by level {:?}; fitted alpha {:.3}", om.omega, om.alpha));
    a.file("energy.csv", io::energy_csv(&recs, cfg.d, cfg.mode)?);
    a.file("omega.csv", csv.into_bytes());
    Ok(a)
}

fn abar(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let (_, est) = ensemble(cfg)?;
    let mut a = Artifacts::default();
    a.say(format!(
        "sigma_eff = {:.5} (95% CI {:.5}..{:.5}){}",
        est.sigma_eff,
        est.sigma_eff_ci.0,
        est.sigma_eff_ci.1,
        if est.unreliable { "; fewer than 8 environments, CI unreliable" } else { "" }
    ));
    a.file("abar.csv", io::abar_csv(&est)?);
    Ok(a)
}

/// ā for u_hom: only its anisotropy matters, so a small ensemble suffices.
fn abar_for_hom(cfg: &RunConfig) -> Result<Mat3, CliError> {
    if let Auto::Value(s) = cfg.abar {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(cfg.d) {
            row[i] = s;
        }
        return Ok(m);
    }
    let wm = cfg.m.clamp(3, if cfg.d == 2 { 5 } else { 4 });
    let ec = EnsembleConfig {
        law: cfg.law(),
        window: Window::new(cfg.d, wm)?,
        n_envs: cfg.n_envs.min(8),
        seed: cfg.seed ^ 0xa5a5,
        levels: vec![wm - 1],
        rule: cfg.rule,
        mode: cfg.mode,
        opts: cfg.solve_options(),
    };
    Ok(abar_estimate(&ensemble_cells(&ec)?, cfg.d, cfg.seed)?.abar)
}

fn dirichlet(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let dc = DirichletConfig {
        law: cfg.law(),
        d: cfg.d,
        levels: cfg.dirichlet_levels.clone(),
        family: BoundaryFamily::parse(&cfg.family, cfg.d, cfg.seed)?,
        n_envs: cfg.n_envs,
        seed: cfg.seed,
        eps: cfg.eps,
        abar: abar_for_hom(cfg)?,
        opts: cfg.solve_options(),
    };
    let tab = dirichlet_experiment(&dc)?;
    let mut csv = String::from("level,mean_rescaled,ci_lo,ci_hi,n_samples,alpha\n");
    for l in &tab.levels {
        writeln!(csv, "{},{},{},{},{},{}", l.level, l.mean_rescaled, l.ci.0, l.ci.1, l.n_samples, tab.alpha).unwrap();
    }
    let mut a = Artifacts::default();
    a.say(format!("fitted alpha = {:.3}", tab.alpha));
    a.file("dirichlet.csv", io::dirichlet_csv(&tab, cfg.mode)?);
    a.file("dirichlet_levels.csv", csv.into_bytes());
    Ok(a)
}

fn corrector(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let (profiles, med) =
        corrector_ensemble(cfg.law(), window(cfg)?, cfg.n_envs, cfg.seed, [1.0, 0.0, 0.0], &cfg.corrector_radii, cfg.solve_options())?;
    let mut a = Artifacts::default();
    a.say(format!("median profile over radii {:?}: {:?}", cfg.corrector_radii, med));
    a.file("corrector.csv", io::corrector_csv(&profiles, cfg.d)?);
    Ok(a)
}

fn regularity(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let w = window(cfg)?;
    let law = cfg.law();
    let big = *cfg.regularity_radii.iter().max().unwrap();
    let profiles: Vec<Result<(u64, perchomog::experiments::RegularityProfile), CliError>> = (0..cfg.n_envs)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(law, w, cfg.seed, e);
            let s = random_harmonic(&env, big, cfg.seed ^ e.wrapping_mul(0x9e37_79b9), cfg.solve_options())
                .map_err(|err| err.in_record(format!("env_index {e}")))?;
            Ok((e, dk_profile(&s, cfg.regularity_k, &cfg.regularity_radii)?))
        })
        .collect();
    let profiles: Vec<_> = profiles.into_iter().collect::<Result<_, _>>()?;
    let mut a = Artifacts::default();
    a.file("regularity.csv", io::regularity_csv(&profiles)?);
    let only: Vec<_> = profiles.into_iter().map(|(_, p)| p).collect();
    match fit_dk_decay(&only, cfg.seed) {
        Ok(fit) => {
            a.say(format!("delta = {:.3} (95% CI {:.3}..{:.3}), K = {:.3}", fit.delta, fit.delta_ci.0, fit.delta_ci.1, fit.k_const));
            a.file(
                "regularity_fit.csv",
                format!("k,delta,ci_lo,ci_hi,k_const,n_profiles\n{},{},{},{},{},{}\n", cfg.regularity_k, fit.delta, fit.delta_ci.0, fit.delta_ci.1, fit.k_const, fit.deltas.len())
                    .into_bytes(),
            );
        }
        Err(e) => a.say(format!("no decay fit: {e}")),
    }
    Ok(a)
}

fn poincare(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let w = window(cfg)?;
    let n = cfg.poincare_n;
    let half = w.half() as f64;
    let field_ratio = |f: &LowFrequencyField| -> Result<f64, CliError> {
        let u: Vec<f64> = w.bbox().iter().map(|x| f.eval(&x)).collect();
        Ok(multiscale_poincare(&u, &w, n)?.ratio)
    };
    let c_msp = match cfg.c_msp {
        Auto::Value(c) => c,
        Auto::Auto => {
            let cal: Vec<Result<f64, CliError>> =
                (0..50u64).into_par_iter().map(|s| field_ratio(&LowFrequencyField::new(cfg.d, half, 1 + (s % 3) as u32, 900 + s))).collect();
            let affine: Vec<f64> = w.bbox().iter().map(|x| x[0] as f64).collect();
            let mut worst = multiscale_poincare(&affine, &w, n)?.ratio;
            for r in cal {
                worst = worst.max(r?);
            }
            10.0 * worst
        }
    };
    let rows: Vec<Result<(u64, u32, perchomog::coarsen::PoincareReport), CliError>> = (0..cfg.poincare_functions as u64)
        .into_par_iter()
        .map(|s| {
            let f = LowFrequencyField::new(cfg.d, half, 1 + (s % 4) as u32, cfg.seed.wrapping_mul(1_000_003) ^ (50_000 + s));
            let u: Vec<f64> = w.bbox().iter().map(|x| f.eval(&x)).collect();
            Ok((s, n, multiscale_poincare(&u, &w, n)?))
        })
        .collect();
    let rows: Vec<_> = rows.into_iter().collect::<Result<_, _>>()?;
    let failing: Vec<u64> = rows.iter().filter(|r| r.2.ratio > c_msp).map(|r| r.0).collect();
    let mut a = Artifacts::default();
    a.file("poincare.csv", io::poincare_csv(&rows)?);
    if !failing.is_empty() {
        return Err(CliError::Numerical(format!("multiscale Poincaré exceeds C_msp = {c_msp} for samples {failing:?}")));
    }
    a.say(format!("{} functions within C_msp = {c_msp:.4}", rows.len()));
    Ok(a)
}

fn read_csv(path: &Path) -> Result<Option<Vec<csv::StringRecord>>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Some(rows))
}

fn field(r: &csv::StringRecord, i: usize) -> Result<f64, CliError> {
    r.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| CliError::Io(format!("malformed CSV row {r:?}")))
}

/// Median of the values in column `v` grouped by column `k`, sorted by key.
fn median_by(rows: &[csv::StringRecord], k: usize, v: usize) -> Result<Vec<(f64, f64)>, CliError> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows {
        let (key, val) = (field(r, k)?, field(r, v)?);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(val),
            None => groups.push((key, vec![val])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(k, v)| (k, perchomog::energy::median(&v))).collect())
}

fn report(out: &Path) -> Result<Artifacts, CliError> {
    let mut a = Artifacts::default();
    if let Some(rows) = read_csv(&out.join("abar.csv"))? {
        let pick = |name: &str| -> Result<Vec<(f64, f64)>, CliError> {
            rows.iter()
                .filter(|r| r.get(1) == Some(name))
                .map(|r| Ok((3f64.powf(field(r, 0)?), field(r, 2)?)))
                .collect()
        };
        let inv: Vec<(f64, f64)> = pick("abar_inv_11")?.into_iter().map(|(x, y)| (x, 1.0 / y)).collect();
        let svg = loglog(
            "effective matrix by cube size",
            "cube size 3^n",
            "estimate",
            &[Series { label: "abar_11 from nu".into(), points: pick("abar_11")? }, Series { label: "abar_11 from mu".into(), points: inv }],
        );
        a.file("abar.svg", svg.into_bytes());
    }
    if let Some(rows) = read_csv(&out.join("dirichlet.csv"))? {
        let pts: Vec<(f64, f64)> = median_by(&rows, 1, 5)?.into_iter().map(|(l, v)| (3f64.powf(l), v)).collect();
        let svg = loglog("rescaled Dirichlet error", "box size 3^m", "median rescaled error", &[Series { label: "median".into(), points: pts }]);
        a.file("dirichlet.svg", svg.into_bytes());
    }
    if let Some(rows) = read_csv(&out.join("corrector.csv"))? {
        let pts = median_by(&rows, 2, 3)?;
        let svg = loglog("corrector sublinearity", "radius r", "median |chi|/r", &[Series { label: "median".into(), points: pts }]);
        a.file("corrector.svg", svg.into_bytes());
    }
    if let Some(rows) = read_csv(&out.join("regularity.csv"))? {
        let dk = median_by(&rows, 2, 3)?;
        let d0 = median_by(&rows, 2, 4)?;
        let svg = loglog(
            "distance to harmonic polynomials",
            "radius r",
            "median D(r)",
            &[Series { label: "D_k".into(), points: dk }, Series { label: "D_0".into(), points: d0 }],
        );
        a.file("regularity.svg", svg.into_bytes());
    }
    if a.files.is_empty() {
        return Err(CliError::Io(format!("no report inputs (abar, dirichlet, corrector, regularity CSVs) in {}", out.display())));
    }
    a.say(format!("{} plots rendered", a.files.len()));
    Ok(a)
}
