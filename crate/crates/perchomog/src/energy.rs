//! Monte Carlo sweeps of μ and ν over environments, the effective matrix ā,
//! the decay of ω, localized energies, tail fits and minimal scales.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coarsen::{anchor, CubeDomain, DomainStatus};
use crate::error::{invalid, Result};
use crate::lattice::{pow3, Conductance, Point, TriadicCube, Window};
use crate::partition::{build_partition, partition_p, CubeOracle, GoodCubeOracle, Partition};
use crate::percolation::{label_clusters, ConductanceLaw, Environment, GoodnessRule, Mode};
use crate::solver::{solve_cell, solve_cell_trimmed, CellSolution, SolveOptions};

pub type Mat3 = [[f64; 3]; 3];

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Both cell problems on one cube of one environment, reduced to the matrices
/// M (μ(q) = −qᵀMq) and N (ν(p) = pᵀNp).
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub env_index: u64,
    pub level: u32,
    pub center: Point,
    pub status: DomainStatus,
    pub m: Mat3,
    pub n: Mat3,
    pub residual: f64,
    pub iterations: usize,
}

impl CellRecord {
    pub fn from_solution(env_index: u64, cell: &CellSolution) -> Self {
        CellRecord {
            env_index,
            level: cell.domain.cube.level,
            center: cell.domain.cube.center,
            status: cell.domain.status,
            m: cell.m,
            n: cell.n,
            residual: cell.residual,
            iterations: cell.iterations,
        }
    }

    pub fn degenerate(&self) -> bool {
        self.status != DomainStatus::Ok
    }

    pub fn mu(&self, q: [f64; 3]) -> f64 {
        -quad(&self.m, q)
    }

    pub fn nu(&self, p: [f64; 3]) -> f64 {
        quad(&self.n, p)
    }
}

pub fn quad(m: &Mat3, q: [f64; 3]) -> f64 {
    (0..3).map(|i| (0..3).map(|j| q[i] * m[i][j] * q[j]).sum::<f64>()).sum()
}

pub fn mat_vec(m: &Mat3, q: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..3).map(|j| m[i][j] * q[j]).sum();
    }
    out
}

/// Inverse of the leading d×d block.
pub fn invert(m: &Mat3, d: usize) -> Result<Mat3> {
    let mut out = [[0.0; 3]; 3];
    let det = match d {
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => return invalid("dimension must be 2 or 3"),
    };
    if det.abs() < 1e-300 || !det.is_finite() {
        return Err(crate::Error::Numerical("singular matrix".into()));
    }
    if d == 2 {
        out[0][0] = m[1][1] / det;
        out[1][1] = m[0][0] / det;
        out[0][1] = -m[0][1] / det;
        out[1][0] = -m[1][0] / det;
    } else {
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                out[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
            }
        }
    }
    Ok(out)
}

/// Largest absolute eigenvalue of a symmetric d×d block (Jacobi sweeps).
pub fn spectral_norm(m: &Mat3, d: usize) -> f64 {
    let mut a = *m;
    for _ in 0..50 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[p][q] * a[p][q];
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
        if off < 1e-30 {
            break;
        }
    }
    (0..d).map(|i| a[i][i].abs()).fold(0.0, f64::max)
}

pub fn unit_vec(i: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[i] = 1.0;
    e
}

/// The cubes of a level inside the inner third of the window.
pub fn inner_cubes(window: &Window, level: u32) -> Result<Vec<TriadicCube>> {
    if window.m == 0 || level > window.m - 1 {
        return invalid(format!("level {level} does not fit in the inner third of a level-{} window", window.m));
    }
    Ok(TriadicCube::origin(window.d, window.m - 1).subcubes(level))
}

/// Every level-n cube of the inner third, for each listed level.
pub fn env_cells<C: Conductance + ?Sized>(
    env_index: u64,
    env: &C,
    partition: &Partition,
    window: &Window,
    levels: &[u32],
    opts: SolveOptions,
) -> Result<Vec<CellRecord>> {
    let mut out = Vec::new();
    for &n in levels {
        for c in inner_cubes(window, n)? {
            let cell = solve_cell(env, partition, &c, opts)?;
            out.push(CellRecord::from_solution(env_index, &cell));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub law: ConductanceLaw,
    pub window: Window,
    pub n_envs: u64,
    pub seed: u64,
    pub levels: Vec<u32>,
    pub rule: GoodnessRule,
    pub mode: Mode,
    pub opts: SolveOptions,
}

/// Cell records over environments 0..n_envs, ordered by (env, level, cube).
/// Parallel over environments with an order-preserving collect.
pub fn ensemble_cells(cfg: &EnsembleConfig) -> Result<Vec<CellRecord>> {
    if cfg.n_envs == 0 {
        return invalid("n_envs must be at least 1");
    }
    let per_env: Vec<Result<Vec<CellRecord>>> = (0..cfg.n_envs)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(cfg.law, cfg.window, cfg.seed, e);
            let part = partition_p(&env, cfg.window, cfg.window.bbox(), cfg.rule, cfg.mode)?;
            env_cells(e, &env, &part, &cfg.window, &cfg.levels, cfg.opts).map_err(|err| err.in_record(format!("env_index {e}")))
        })
        .collect();
    let mut out = Vec::new();
    for r in per_env {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyKind {
    Mu,
    Nu,
    Omega,
}

impl EnergyKind {
    pub fn name(self) -> &'static str {
        match self {
            EnergyKind::Mu => "mu",
            EnergyKind::Nu => "nu",
            EnergyKind::Omega => "omega",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRecord {
    pub env_index: u64,
    pub level: u32,
    pub center: Point,
    pub kind: EnergyKind,
    pub dir: [f64; 3],
    pub value: f64,
    pub residual: f64,
    pub degenerate: bool,
    pub status: DomainStatus,
}

/// μ and ν records along the coordinate directions.
pub fn energy_records(cells: &[CellRecord], d: usize) -> Vec<EnergyRecord> {
    let mut out = Vec::new();
    for c in cells {
        for kind in [EnergyKind::Mu, EnergyKind::Nu] {
            for i in 0..d {
                let e = unit_vec(i);
                let value = if kind == EnergyKind::Mu { c.mu(e) } else { c.nu(e) };
                out.push(EnergyRecord {
                    env_index: c.env_index,
                    level: c.level,
                    center: c.center,
                    kind,
                    dir: e,
                    value,
                    residual: c.residual,
                    degenerate: c.degenerate(),
                    status: c.status,
                });
            }
        }
    }
    out
}

/// σ⁻¹ = 2ā⁻¹, the inverse classical conductivity.
pub fn sigma_inverse(abar: &Mat3, d: usize) -> Result<Mat3> {
    let mut s = invert(abar, d)?;
    for row in s.iter_mut() {
        for v in row.iter_mut() {
            *v *= 2.0;
        }
    }
    Ok(s)
}

/// ω(◻, q) in classical units: ½[ν(◻, σ⁻¹q) − μ(◻, q)] − q·σ⁻¹q.
/// Zero on the full lattice up to the boundary layer of the coarsened pairing.
pub fn cell_omega(c: &CellRecord, sinv: &Mat3, q: [f64; 3]) -> f64 {
    if c.degenerate() {
        return 0.0;
    }
    0.5 * (c.nu(mat_vec(sinv, q)) - c.mu(q)) - quad(sinv, q)
}

/// ω records along the coordinate directions.
pub fn omega_records(cells: &[CellRecord], abar: &Mat3, d: usize) -> Result<Vec<EnergyRecord>> {
    let sinv = sigma_inverse(abar, d)?;
    Ok(cells
        .iter()
        .flat_map(|c| {
            (0..d).map(move |i| {
                let e = unit_vec(i);
                EnergyRecord {
                    env_index: c.env_index,
                    level: c.level,
                    center: c.center,
                    kind: EnergyKind::Omega,
                    dir: e,
                    value: cell_omega(c, &sinv, e),
                    residual: c.residual,
                    degenerate: c.degenerate(),
                    status: c.status,
                }
            })
        })
        .collect())
}

/// Records of the sweep harness: every inner-third cube of the given level,
/// μ and ν along the listed directions.
pub fn ensemble_energy(
    law: ConductanceLaw,
    window: Window,
    n_envs: u64,
    level: u32,
    directions: &[[f64; 3]],
    seed: u64,
    opts: SolveOptions,
) -> Result<Vec<EnergyRecord>> {
    let cfg = EnsembleConfig {
        law,
        window,
        n_envs,
        seed,
        levels: vec![level],
        rule: GoodnessRule::Crossing,
        mode: Mode::Exact,
        opts,
    };
    let cells = ensemble_cells(&cfg)?;
    let mut out = Vec::new();
    for c in &cells {
        for kind in [EnergyKind::Mu, EnergyKind::Nu] {
            for &dir in directions {
                out.push(EnergyRecord {
                    env_index: c.env_index,
                    level: c.level,
                    center: c.center,
                    kind,
                    dir,
                    value: if kind == EnergyKind::Mu { c.mu(dir) } else { c.nu(dir) },
                    residual: c.residual,
                    degenerate: c.degenerate(),
                    status: c.status,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityCheck {
    /// ν(p) − μ(q) − ⟨q, ∇[v]⟩/|U|.
    pub lhs: f64,
    /// ½⟨∇(v − u), a∇(v − u)⟩/|U|.
    pub rhs: f64,
    pub residual: f64,
    /// |⟨q, ∇[v]⟩/|U| − p·q|.
    pub flux: f64,
    pub degenerate: bool,
}

pub fn duality_gap_check<C: Conductance + ?Sized>(
    env: &C,
    partition: &Partition,
    cube: &TriadicCube,
    p: [f64; 3],
    q: [f64; 3],
    opts: SolveOptions,
) -> Result<DualityCheck> {
    let cell = solve_cell(env, partition, cube, opts)?;
    Ok(duality_from_cell(&cell, p, q))
}

pub fn duality_from_cell(cell: &CellSolution, p: [f64; 3], q: [f64; 3]) -> DualityCheck {
    let Some(op) = cell.op.as_ref() else {
        return DualityCheck { lhs: 0.0, rhs: 0.0, residual: 0.0, flux: 0.0, degenerate: true };
    };
    let vol = cell.volume();
    let u = cell.u_at(q);
    let v = cell.v_at(p);
    let c = cell.coeff_at(q);
    let pair: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / vol;
    let lhs = cell.nu(p) - cell.mu(q) - pair;
    let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - b).collect();
    let rhs = op.quad(&w) / vol;
    let pq: f64 = (0..3).map(|i| p[i] * q[i]).sum();
    DualityCheck { lhs, rhs, residual: (lhs - rhs).abs(), flux: (pair - pq).abs(), degenerate: false }
}

/// Mean over environments of per-environment sums; `groups` holds (sum, count).
fn pooled(groups: &[(f64, f64)]) -> f64 {
    let (s, c) = groups.iter().fold((0.0, 0.0), |a, g| (a.0 + g.0, a.1 + g.1));
    if c == 0.0 {
        f64::NAN
    } else {
        s / c
    }
}

/// Percentile interval of a statistic under environment-level resampling.
pub fn bootstrap_ci<T, F>(groups: &[T], stat: F, resamples: usize, seed: u64) -> (f64, f64)
where
    T: Clone,
    F: Fn(&[T]) -> f64,
{
    if groups.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(resamples);
    let mut buf = Vec::with_capacity(groups.len());
    for _ in 0..resamples {
        buf.clear();
        for _ in 0..groups.len() {
            buf.push(groups[rng.gen_range(0..groups.len())].clone());
        }
        let v = stat(&buf);
        if v.is_finite() {
            vals.push(v);
        }
    }
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    (percentile(&vals, 0.025), percentile(&vals, 0.975))
}

/// Linear-interpolated quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    percentile(&v, 0.5)
}

/// Least-squares line y = a + b x; returns (a, b, r²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let r2 = if syy == 0.0 || sxx == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - b * mx, b, r2)
}

/// Per-environment (sum, count) of a record statistic at one level over
/// non-degenerate cells; environments keep their slot even when empty.
fn env_groups(cells: &[CellRecord], level: u32, f: impl Fn(&CellRecord) -> f64) -> Vec<(f64, f64)> {
    let mut map: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.level == level) {
        let g = map.entry(c.env_index).or_insert((0.0, 0.0));
        if !c.degenerate() {
            g.0 += f(c);
            g.1 += 1.0;
        }
    }
    map.into_values().collect()
}

fn levels_of(cells: &[CellRecord]) -> Vec<u32> {
    let mut l: Vec<u32> = cells.iter().map(|c| c.level).collect();
    l.sort();
    l.dedup();
    l
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelEstimate {
    pub level: u32,
    /// ā^ν_{◻_n} = 2 E[N].
    pub abar_nu: Mat3,
    pub abar_nu_ci: [[(f64, f64); 3]; 3],
    /// ā^{-1}_{◻_n} = E[M]/2.
    pub abar_mu_inv: Mat3,
    pub abar_mu_inv_ci: [[(f64, f64); 3]; 3],
    pub n_samples: usize,
    pub n_envs: usize,
    /// Fraction of cubes with a complete domain.
    pub pstar_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveMatrixEstimate {
    pub d: usize,
    pub levels: Vec<LevelEstimate>,
    /// ā^ν at the largest level.
    pub abar: Mat3,
    /// (ā^{-1}_μ)^{-1} at the largest level.
    pub abar_from_mu: Mat3,
    /// tr(ā)/(2d): the classical effective conductivity.
    pub sigma_eff: f64,
    pub sigma_eff_ci: (f64, f64),
    /// Fewer than 8 environments contributed at the largest level.
    pub unreliable: bool,
}

pub fn abar_estimate(cells: &[CellRecord], d: usize, seed: u64) -> Result<EffectiveMatrixEstimate> {
    let levels = levels_of(cells);
    if levels.is_empty() {
        return invalid("no records");
    }
    let mut out = Vec::new();
    for &n in &levels {
        let mut abar_nu = [[0.0; 3]; 3];
        let mut abar_mu_inv = [[0.0; 3]; 3];
        let mut ci_nu = [[(0.0, 0.0); 3]; 3];
        let mut ci_mu = [[(0.0, 0.0); 3]; 3];
        for i in 0..d {
            for j in 0..d {
                let gn = env_groups(cells, n, |c| 2.0 * c.n[i][j]);
                let gm = env_groups(cells, n, |c| 0.5 * c.m[i][j]);
                abar_nu[i][j] = pooled(&gn);
                abar_mu_inv[i][j] = pooled(&gm);
                let s = seed ^ ((n as u64) << 32) ^ ((i * 3 + j) as u64);
                ci_nu[i][j] = bootstrap_ci(&gn, |g| pooled(g), BOOTSTRAP_RESAMPLES, s);
                ci_mu[i][j] = bootstrap_ci(&gm, |g| pooled(g), BOOTSTRAP_RESAMPLES, s ^ 0x5555);
            }
        }
        let at: Vec<&CellRecord> = cells.iter().filter(|c| c.level == n).collect();
        let ok = at.iter().filter(|c| !c.degenerate()).count();
        let envs = env_groups(cells, n, |_| 0.0).iter().filter(|g| g.1 > 0.0).count();
        out.push(LevelEstimate {
            level: n,
            abar_nu,
            abar_nu_ci: ci_nu,
            abar_mu_inv,
            abar_mu_inv_ci: ci_mu,
            n_samples: ok,
            n_envs: envs,
            pstar_fraction: ok as f64 / at.len() as f64,
        });
    }
    let top = out.last().unwrap().clone();
    let abar = top.abar_nu;
    let abar_from_mu = invert(&top.abar_mu_inv, d).unwrap_or([[f64::NAN; 3]; 3]);
    let top_level = top.level;
    let trace_groups = env_groups(cells, top_level, |c| (0..d).map(|i| 2.0 * c.n[i][i]).sum::<f64>() / (2.0 * d as f64));
    let sigma_eff = pooled(&trace_groups);
    let sigma_eff_ci = bootstrap_ci(&trace_groups, |g| pooled(g), BOOTSTRAP_RESAMPLES, seed ^ 0xabcdef);
    Ok(EffectiveMatrixEstimate {
        d,
        unreliable: top.n_envs < 8,
        levels: out,
        abar,
        abar_from_mu,
        sigma_eff,
        sigma_eff_ci,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityStep {
    pub from: u32,
    pub to: u32,
    /// E[X_{to}] − E[X_{from}].
    pub diff: f64,
    pub ci: (f64, f64),
}

/// Paired bootstrap of level-to-level differences of a per-cell statistic.
pub fn level_differences(cells: &[CellRecord], seed: u64, f: impl Fn(&CellRecord) -> f64 + Copy) -> Vec<MonotonicityStep> {
    let levels = levels_of(cells);
    let mut out = Vec::new();
    for w in levels.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ga = env_groups(cells, a, f);
        let gb = env_groups(cells, b, f);
        let paired: Vec<((f64, f64), (f64, f64))> = ga.into_iter().zip(gb).collect();
        let stat = |g: &[((f64, f64), (f64, f64))]| {
            let x: Vec<(f64, f64)> = g.iter().map(|p| p.0).collect();
            let y: Vec<(f64, f64)> = g.iter().map(|p| p.1).collect();
            pooled(&y) - pooled(&x)
        };
        let diff = stat(&paired);
        let ci = bootstrap_ci(&paired, stat, BOOTSTRAP_RESAMPLES, seed ^ (a as u64 * 7919));
        out.push(MonotonicityStep { from: a, to: b, diff, ci });
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubadditivityReport {
    pub n: u32,
    /// Per environment: ν(◻_{n+1}, p) − mean of ν over its complete level-n subcubes.
    pub delta_nu: Vec<f64>,
    pub delta_mu: Vec<f64>,
    pub mean_nu: f64,
    pub ci_nu: (f64, f64),
    pub mean_mu: f64,
    pub ci_mu: (f64, f64),
}

/// Δν and Δμ for every complete level-(n+1) cube with its 3^d successors.
pub fn subadditivity_check(cells: &[CellRecord], d: usize, n: u32, p: [f64; 3], seed: u64) -> SubadditivityReport {
    let mut by_key: BTreeMap<(u64, u32, Point), &CellRecord> = BTreeMap::new();
    for c in cells {
        by_key.insert((c.env_index, c.level, c.center), c);
    }
    let mut dn = Vec::new();
    let mut dm = Vec::new();
    for c in cells.iter().filter(|c| c.level == n + 1 && !c.degenerate()) {
        let big = TriadicCube { d, level: n + 1, center: c.center };
        let subs: Vec<&CellRecord> = big
            .successors()
            .unwrap()
            .iter()
            .filter_map(|s| by_key.get(&(c.env_index, n, s.center)).copied())
            .collect();
        if subs.is_empty() || subs.iter().any(|s| s.degenerate()) {
            continue;
        }
        let k = subs.len() as f64;
        dn.push(c.nu(p) - subs.iter().map(|s| s.nu(p)).sum::<f64>() / k);
        dm.push(-c.mu(p) + subs.iter().map(|s| s.mu(p)).sum::<f64>() / k);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ci = |v: &[f64], s| bootstrap_ci(v, |g: &[f64]| mean(g), BOOTSTRAP_RESAMPLES, s);
    SubadditivityReport {
        n,
        mean_nu: mean(&dn),
        ci_nu: ci(&dn, seed),
        mean_mu: mean(&dm),
        ci_mu: ci(&dm, seed ^ 1),
        delta_nu: dn,
        delta_mu: dm,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmegaSeries {
    pub levels: Vec<u32>,
    /// E[ω(◻_n, e)_+] averaged over the coordinate directions.
    pub omega: Vec<f64>,
    pub omega_ci: Vec<(f64, f64)>,
    /// E[ω(◻_n, e)] without the positive part.
    pub omega_signed: Vec<f64>,
    /// τ̂_n for consecutive levels.
    pub tau: Vec<f64>,
    /// α̂ from log ω̂_n ≈ a − α̂ n log 3.
    pub alpha: f64,
}

pub fn omega_decay(cells: &[CellRecord], abar: &Mat3, d: usize, seed: u64) -> Result<OmegaSeries> {
    let sinv = sigma_inverse(abar, d)?;
    let levels = levels_of(cells);
    let avg = |c: &CellRecord, pos: bool| {
        (0..d)
            .map(|i| {
                let w = cell_omega(c, &sinv, unit_vec(i));
                if pos {
                    w.max(0.0)
                } else {
                    w
                }
            })
            .sum::<f64>()
            / d as f64
    };
    let mut omega = Vec::new();
    let mut omega_ci = Vec::new();
    let mut omega_signed = Vec::new();
    for &n in &levels {
        let g = env_groups(cells, n, |c| avg(c, true));
        omega.push(pooled(&g));
        omega_ci.push(bootstrap_ci(&g, |g| pooled(g), BOOTSTRAP_RESAMPLES, seed ^ n as u64));
        omega_signed.push(pooled(&env_groups(cells, n, |c| avg(c, false))));
    }
    // increments of the halved energies, as in ω
    let mut tau = Vec::new();
    for w in levels.windows(2) {
        let mut t = 0.0;
        for i in 0..d {
            let e = unit_vec(i);
            let p = mat_vec(&sinv, e);
            let mu0 = pooled(&env_groups(cells, w[0], |c| 0.5 * c.mu(e)));
            let mu1 = pooled(&env_groups(cells, w[1], |c| 0.5 * c.mu(e)));
            let nu0 = pooled(&env_groups(cells, w[0], |c| 0.5 * c.nu(p)));
            let nu1 = pooled(&env_groups(cells, w[1], |c| 0.5 * c.nu(p)));
            t += (mu1 - mu0).max(0.0) + (nu0 - nu1).max(0.0);
        }
        tau.push(t);
    }
    let pts: Vec<(f64, f64)> =
        levels.iter().zip(&omega).filter(|(_, w)| **w > 0.0).map(|(n, w)| (*n as f64 * 3f64.ln(), w.ln())).collect();
    let alpha = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -linear_fit(&x, &y).1
    } else {
        f64::NAN
    };
    Ok(OmegaSeries { levels, omega, omega_ci, omega_signed, tau, alpha })
}

/// The local partition P_loc^{(n)}(◻): goodness or size ≥ 3^n, built from the
/// edges of the cube alone (in cube-local coordinates).
pub fn local_partition(local: &Environment, n_loc: u32, rule: GoodnessRule, mode: Mode) -> Result<Partition> {
    struct Stationary<'a> {
        inner: GoodCubeOracle<'a, Environment>,
        n: u32,
    }
    impl CubeOracle for Stationary<'_> {
        fn good(&mut self, cube: &TriadicCube) -> bool {
            cube.level >= self.n || self.inner.good(cube)
        }
    }
    let mut o = Stationary { inner: GoodCubeOracle::new(local, rule, mode), n: n_loc };
    let w = local.window;
    let mut p = build_partition(&mut o, w, w.bbox())?;
    p.mode = mode;
    p.rule = rule;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizedEnergy {
    /// A_n(◻): every local element has size ≤ 3^{n−1}.
    pub event: bool,
    pub status: DomainStatus,
    pub mu: Mat3,
    pub nu: Mat3,
}

impl LocalizedEnergy {
    pub fn degenerate(&self) -> bool {
        !self.event || self.status != DomainStatus::Ok
    }

    pub fn record(&self, kind: EnergyKind, dir: [f64; 3]) -> f64 {
        match kind {
            EnergyKind::Mu => -quad(&self.mu, dir),
            EnergyKind::Nu => quad(&self.nu, dir),
            EnergyKind::Omega => f64::NAN,
        }
    }
}

/// μ_loc and ν_loc on a cube: local partition, local cluster joining the
/// element clusters over the trimmed cube ◻^{(n)}, linear term over ◻^{(n)}.
pub fn localized_energy(
    env: &Environment,
    cube: &TriadicCube,
    n_loc: u32,
    rule: GoodnessRule,
    mode: Mode,
    opts: SolveOptions,
) -> Result<LocalizedEnergy> {
    let zero = [[0.0; 3]; 3];
    if n_loc == 0 || 2 * pow3(n_loc) >= cube.size() {
        return invalid("localization scale must leave a nonempty trimmed cube");
    }
    let local = env.localize(cube)?;
    let lcube = local.window.cube();
    let part = local_partition(&local, n_loc, rule, mode)?;
    let event = part.elements().iter().all(|e| e.level + 1 <= n_loc);
    if !event {
        return Ok(LocalizedEnergy { event, status: DomainStatus::Incomplete, mu: zero, nu: zero });
    }
    let trim = lcube.bbox().shrink(pow3(n_loc));
    let elements: Vec<TriadicCube> = part.elements().to_vec();
    let anchors: Vec<Option<Point>> = elements.iter().map(|e| anchor(&local, e).ok()).collect();
    let lab = label_clusters(&local, lcube.bbox(), None);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut needed = 0usize;
    for (e, a) in elements.iter().zip(&anchors) {
        if !e.bbox().intersects(&trim) {
            continue;
        }
        needed += 1;
        if let Some(l) = a.and_then(|a| lab.label_of(&a)) {
            *counts.entry(l).or_default() += 1;
        }
    }
    let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, c)| (*l, *c));
    let (cluster, status) = match best {
        None => (Vec::new(), DomainStatus::NoCluster),
        Some((l, c)) => (lab.members(l), if c == needed { DomainStatus::Ok } else { DomainStatus::Incomplete }),
    };
    if status != DomainStatus::Ok {
        return Ok(LocalizedEnergy { event, status, mu: zero, nu: zero });
    }
    // only anchors on the local cluster carry the linear term and normalization
    let anchors = anchors
        .into_iter()
        .map(|a| a.filter(|a| cluster.binary_search(a).is_ok()))
        .collect();
    let domain = CubeDomain { cube: lcube, closure: lcube.bbox(), elements, anchors, cluster, status };
    let cell = solve_cell_trimmed(&local, domain, trim, opts)?;
    Ok(LocalizedEnergy { event, status, mu: cell.m, nu: cell.n })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailExponentFit {
    pub name: String,
    pub s: f64,
    pub theta: f64,
    pub r2: f64,
    pub n_samples: usize,
    /// Constant or otherwise unfittable samples.
    pub degenerate: bool,
}

/// Fit X ≤ O_s(θ) by regressing log(−log S(t)) on log t, S the empirical survival.
pub fn tail_fit(samples: &[f64], name: &str) -> Result<TailExponentFit> {
    if samples.len() < 50 {
        return invalid(format!("tail fit needs at least 50 samples, got {}", samples.len()));
    }
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut k = 0;
    while k < v.len() {
        let t = v[k];
        let mut j = k;
        while j < v.len() && v[j] == t {
            j += 1;
        }
        let surv = (v.len() - j) as f64 / n;
        if t > 0.0 && surv > 0.0 && surv < 1.0 {
            xs.push(t.ln());
            ys.push((-surv.ln()).ln());
        }
        k = j;
    }
    if xs.len() < 3 {
        return Ok(TailExponentFit {
            name: name.into(),
            s: f64::NAN,
            theta: f64::NAN,
            r2: f64::NAN,
            n_samples: v.len(),
            degenerate: true,
        });
    }
    let (a, b, r2) = linear_fit(&xs, &ys);
    let theta = if b != 0.0 { (-a / b).exp() } else { f64::NAN };
    Ok(TailExponentFit { name: name.into(), s: b, theta, r2, n_samples: v.len(), degenerate: false })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimalScaleEstimate {
    pub c: f64,
    pub alpha: f64,
    /// Per environment N̂ = 3^m for the largest failing m (1 if none fails).
    pub n_hat: Vec<f64>,
    pub median: f64,
    pub max: f64,
}

/// Deviation of a cell from the homogenized quadratic forms in classical
/// units: ½‖M − σ⁻¹‖ + ½‖N − σ‖ in spectral norm, σ = ā/2.
/// Degenerate cells contribute zero.
pub fn cell_deviation(c: &CellRecord, abar: &Mat3, sinv: &Mat3, d: usize) -> f64 {
    if c.degenerate() {
        return 0.0;
    }
    let mut dm = [[0.0; 3]; 3];
    let mut dn = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            dm[i][j] = c.m[i][j] - sinv[i][j];
            dn[i][j] = c.n[i][j] - 0.5 * abar[i][j];
        }
    }
    0.5 * (spectral_norm(&dm, d) + spectral_norm(&dn, d))
}

/// N̂ per environment: for each m ≤ m_max, n = ⌈m/4⌉, the sup over the level-n
/// triadic subcubes of ◻_m of the cell deviation, compared with C·3^{−mα}.
pub fn minimal_scale_n<C: Conductance + Sync + ?Sized>(
    envs: &[(&C, &Partition)],
    abar: &Mat3,
    d: usize,
    c: f64,
    alpha: f64,
    m_max: u32,
    opts: SolveOptions,
) -> Result<MinimalScaleEstimate> {
    let sinv = sigma_inverse(abar, d)?;
    let per: Vec<Result<f64>> = envs
        .par_iter()
        .map(|(env, part)| {
            let mut cache: BTreeMap<TriadicCube, f64> = BTreeMap::new();
            let mut n_hat = 1.0;
            for m in 1..=m_max {
                let n = m.div_ceil(4);
                let mut sup = 0.0f64;
                for cube in TriadicCube::origin(d, m).subcubes(n) {
                    let dev = match cache.get(&cube) {
                        Some(v) => *v,
                        None => {
                            let cell = solve_cell(*env, part, &cube, opts)?;
                            let v = cell_deviation(&CellRecord::from_solution(0, &cell), abar, &sinv, d);
                            cache.insert(cube, v);
                            v
                        }
                    };
                    sup = sup.max(dev);
                }
                if sup >= c * 3f64.powf(-(m as f64) * alpha) {
                    n_hat = pow3(m) as f64;
                }
            }
            Ok(n_hat)
        })
        .collect();
    let n_hat: Vec<f64> = per.into_iter().collect::<Result<_>>()?;
    Ok(MinimalScaleEstimate {
        c,
        alpha,
        median: median(&n_hat),
        max: n_hat.iter().copied().fold(0.0, f64::max),
        n_hat,
    })
}
