//! Desk-scale homogenization experiments: Dirichlet error scaling against a
//! constant-coefficient stand-in, corrector growth, large-scale Lipschitz
//! ratios and harmonic-polynomial approximation profiles.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::coarsen::cluster_gradient_mag;
use crate::energy::{bootstrap_ci, linear_fit, median, Mat3, BOOTSTRAP_RESAMPLES};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Conductance, IBox, Point, TriadicCube, Window};
use crate::percolation::{crossing_cluster, label_clusters, ConductanceLaw, Environment};
use crate::regularity::{harmonic_on, HarmonicSample, LowFrequencyField};
use crate::solver::{solve_dirichlet_box, ClusterOperator, SolveOptions};

/// Boundary data families, each with gradients of unit size at every scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryFamily {
    Affine([f64; 3]),
    /// x_i x_j for i ≠ j, x_i² − x_{i+1}² for i = j; divided by the half-width.
    QuadraticHarmonic(usize, usize),
    RandomLowFreq { seed: u64, bandwidth: u32 },
}

impl BoundaryFamily {
    pub fn name(&self) -> String {
        match self {
            BoundaryFamily::Affine(_) => "affine".into(),
            BoundaryFamily::QuadraticHarmonic(i, j) => format!("quadratic_{i}{j}"),
            BoundaryFamily::RandomLowFreq { bandwidth, .. } => format!("lowfreq_{bandwidth}"),
        }
    }

    pub fn parse(s: &str, d: usize, seed: u64) -> Result<Self> {
        match s {
            "affine" => Ok(BoundaryFamily::Affine([1.0, 0.0, 0.0])),
            "quadratic" => Ok(BoundaryFamily::QuadraticHarmonic(0, 1)),
            "lowfreq" => Ok(BoundaryFamily::RandomLowFreq { seed, bandwidth: 2 }),
            _ if d == 0 => invalid("dimension must be positive"),
            other => invalid(format!("unknown boundary family '{other}' (affine, quadratic, lowfreq)")),
        }
    }

    /// The member on a box of half-width `half`; per-environment randomness
    /// enters through `env_index`.
    pub fn function(&self, d: usize, half: f64, env_index: u64) -> Box<dyn Fn(&Point) -> f64 + Sync + Send> {
        let h = half.max(1.0);
        match *self {
            BoundaryFamily::Affine(p) => {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                Box::new(move |x: &Point| (0..d).map(|i| p[i] * x[i] as f64).sum::<f64>() / n)
            }
            BoundaryFamily::QuadraticHarmonic(i, j) => {
                let j2 = if i == j { (i + 1) % d } else { j };
                Box::new(move |x: &Point| {
                    let (a, b) = (x[i] as f64, x[j2] as f64);
                    if i == j {
                        (a * a - b * b) / h
                    } else {
                        a * b / h
                    }
                })
            }
            BoundaryFamily::RandomLowFreq { seed, bandwidth } => {
                let f = LowFrequencyField::new(d, h, bandwidth, seed ^ env_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                Box::new(move |x: &Point| f.eval(x))
            }
        }
    }
}

/// Every edge open with unit conductance.
#[derive(Clone, Copy, Debug)]
pub struct Uniform(pub usize);

impl Conductance for Uniform {
    fn dim(&self) -> usize {
        self.0
    }
    fn conductance(&self, _x: Point, _i: usize) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogenizedSolution {
    pub bx: IBox,
    /// Values in box index order.
    pub values: Vec<f64>,
    /// Set when ā deviates from a multiple of the identity by more than 5%.
    pub warning: Option<String>,
}

impl HomogenizedSolution {
    pub fn at(&self, x: &Point) -> f64 {
        self.values[self.bx.local_index(x)]
    }
}

/// Relative deviation of the leading d×d block of ā from its scalar part.
pub fn anisotropy(abar: &Mat3, d: usize) -> f64 {
    let s = (0..d).map(|i| abar[i][i]).sum::<f64>() / d as f64;
    let mut dev = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { s } else { 0.0 };
            dev = dev.max((abar[i][j] - target).abs());
        }
    }
    dev / s.abs().max(1e-300)
}

/// Constant-coefficient Dirichlet solution on a box. For scalar ā the
/// coefficient divides out, so this is the discrete harmonic extension.
pub fn u_hom_solve(
    data: impl Fn(&Point) -> f64,
    bx: IBox,
    abar: &Mat3,
    d: usize,
    opts: SolveOptions,
) -> Result<HomogenizedSolution> {
    let an = anisotropy(abar, d);
    let warning = (an > 0.05).then(|| format!("ā anisotropic by {:.1}%; using its scalar part", 100.0 * an));
    let (op, sol) = solve_dirichlet_box(&Uniform(d), bx, data, opts)?;
    let mut values = vec![0.0; bx.len()];
    for (k, x) in op.points().iter().enumerate() {
        values[bx.local_index(x)] = sol.u[k];
    }
    Ok(HomogenizedSolution { bx, values, warning })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletRow {
    pub env_index: u64,
    pub level: u32,
    /// (1/|◻|) Σ_{C_*} |u − u_hom|².
    pub error: f64,
    /// ((1/|◻|) Σ_{C_*} |∇u 1_{a≠0}|^p)^{1/p}.
    pub grad_norm: f64,
    /// 3^{−m} error^{1/2} / grad_norm.
    pub rescaled: f64,
    /// Mean of |∇u_hom|² over the box.
    pub hom_energy: f64,
    /// hom_energy / grad_norm²: the energy of u_hom against the L^p gradient
    /// norm of u in homogeneous form.
    pub bound_ratio: f64,
    /// Largest |u − u_hom| on C_* ∩ ∂◻ (zero by construction).
    pub boundary_mismatch: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub level: u32,
    pub mean_rescaled: f64,
    pub ci: (f64, f64),
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorScalingTable {
    pub family: String,
    pub exponent: f64,
    pub rows: Vec<DirichletRow>,
    pub levels: Vec<LevelSummary>,
    /// α̂ from log(mean rescaled error) ≈ a − α̂ m log 3.
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct DirichletConfig {
    pub law: ConductanceLaw,
    pub d: usize,
    pub levels: Vec<u32>,
    pub family: BoundaryFamily,
    pub n_envs: u64,
    pub seed: u64,
    /// Meyers exponent ε; gradients are measured in L^{2+ε}.
    pub eps: f64,
    pub abar: Mat3,
    pub opts: SolveOptions,
}

/// One Dirichlet run: u on C_*(◻_m) with the family as data on C_* ∩ ∂◻_m,
/// u_hom with u's data there and the nearest such value elsewhere on ∂◻_m.
pub fn dirichlet_run<C: Conductance + ?Sized>(
    env: &C,
    env_index: u64,
    cube: &TriadicCube,
    family: &BoundaryFamily,
    eps: f64,
    abar: &Mat3,
    opts: SolveOptions,
) -> Result<DirichletRow> {
    let d = cube.d;
    let bx = cube.bbox();
    let vol = bx.len() as f64;
    let p = 2.0 + eps;
    let degenerate = DirichletRow {
        env_index,
        level: cube.level,
        error: 0.0,
        grad_norm: 0.0,
        rescaled: 0.0,
        hom_energy: 0.0,
        bound_ratio: 0.0,
        boundary_mismatch: 0.0,
        degenerate: true,
    };
    let Some(cluster) = crossing_cluster(env, bx) else { return Ok(degenerate) };
    let f = family.function(d, cube.half() as f64, env_index);
    let h = harmonic_on(env, &cluster, &bx, &f, opts)?;
    let pts = h.op.points();
    let bpts: Vec<(Point, f64)> =
        pts.iter().zip(&h.u).zip(&h.fixed).filter(|(_, &b)| b).map(|((x, u), _)| (*x, *u)).collect();
    let data = |x: &Point| {
        bpts.iter()
            .min_by_key(|(y, _)| ((0..d).map(|i| (x[i] - y[i]).abs()).sum::<i64>(), *y))
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    };
    let hom = u_hom_solve(data, bx, abar, d, opts)?;
    let mut err = 0.0;
    let mut mismatch = 0.0f64;
    for (k, x) in pts.iter().enumerate() {
        let diff = h.u[k] - hom.at(x);
        err += diff * diff;
        if h.fixed[k] {
            mismatch = mismatch.max(diff.abs());
        }
    }
    let err = err / vol;
    let g = cluster_gradient_mag(&h.op, &h.u);
    let gp = g.iter().map(|x| x.powf(p)).sum::<f64>() / vol;
    let grad_norm = gp.powf(1.0 / p);
    let uniform: Vec<Point> = bx.iter().collect();
    let hop = ClusterOperator::assemble(&Uniform(d), &uniform)?;
    let hg = cluster_gradient_mag(&hop, &uniform.iter().map(|x| hom.at(x)).collect::<Vec<_>>());
    let hom_energy = hg.iter().map(|x| x * x).sum::<f64>() / vol;
    let rescaled = if grad_norm > 0.0 { err.sqrt() / (cube.size() as f64 * grad_norm) } else { 0.0 };
    Ok(DirichletRow {
        env_index,
        level: cube.level,
        error: err,
        grad_norm,
        rescaled,
        hom_energy,
        bound_ratio: if grad_norm > 0.0 { hom_energy / (grad_norm * grad_norm) } else { 0.0 },
        boundary_mismatch: mismatch,
        degenerate: false,
    })
}

pub fn dirichlet_experiment(cfg: &DirichletConfig) -> Result<ErrorScalingTable> {
    if cfg.levels.len() < 3 {
        return invalid("the slope fit needs at least three sizes");
    }
    let tasks: Vec<(u64, u32)> = (0..cfg.n_envs).flat_map(|e| cfg.levels.iter().map(move |&m| (e, m))).collect();
    let rows: Vec<Result<DirichletRow>> = tasks
        .par_iter()
        .map(|&(e, m)| {
            let w = Window::new(cfg.d, m)?;
            let env = Environment::sample(cfg.law, w, cfg.seed, e);
            dirichlet_run(&env, e, &w.cube(), &cfg.family, cfg.eps, &cfg.abar, cfg.opts)
                .map_err(|err| err.in_record(format!("env_index {e} level {m}")))
        })
        .collect();
    let rows: Vec<DirichletRow> = rows.into_iter().collect::<Result<_>>()?;
    let mut levels = Vec::new();
    for &m in &cfg.levels {
        let vals: Vec<f64> = rows.iter().filter(|r| r.level == m && !r.degenerate).map(|r| r.rescaled).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let ci = bootstrap_ci(&vals, |g: &[f64]| g.iter().sum::<f64>() / g.len() as f64, BOOTSTRAP_RESAMPLES, cfg.seed ^ m as u64);
        levels.push(LevelSummary { level: m, mean_rescaled: mean, ci, n_samples: vals.len() });
    }
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.mean_rescaled > 0.0 && l.mean_rescaled.is_finite())
        .map(|l| (l.level as f64 * 3f64.ln(), l.mean_rescaled.ln()))
        .collect();
    let alpha = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -linear_fit(&x, &y).1
    } else {
        f64::NAN
    };
    Ok(ErrorScalingTable { family: cfg.family.name(), exponent: 2.0 + cfg.eps, rows, levels, alpha })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorProfile {
    pub env_index: u64,
    pub p: [f64; 3],
    pub radii: Vec<i64>,
    /// ‖χ_p − c‖_{L̲²(C ∩ B_r)}/r, c the best constant on B_r.
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// χ_p = v − p·x where v solves the Dirichlet problem on the crossing cluster
/// of the window with data p·x on its boundary vertices: the ν maximizer of
/// the window up to its additive constant. B_r is the centred box of side r.
pub fn corrector<C: Conductance + ?Sized>(
    env: &C,
    env_index: u64,
    window: &Window,
    p: [f64; 3],
    radii: &[i64],
    opts: SolveOptions,
) -> Result<CorrectorProfile> {
    let inner = window.side() / 3;
    if let Some(r) = radii.iter().find(|&&r| r < 1 || r > inner) {
        return invalid(format!("radius {r} is not within the inner third (side {inner})"));
    }
    let d = window.d;
    let bx = window.bbox();
    let lin = |x: &Point| (0..d).map(|i| p[i] * x[i] as f64).sum::<f64>();
    let Some(cluster) = crossing_cluster(env, bx) else {
        return Ok(CorrectorProfile { env_index, p, radii: radii.to_vec(), values: vec![0.0; radii.len()], degenerate: true });
    };
    let h = harmonic_on(env, &cluster, &bx, lin, opts)?;
    let pts = h.op.points();
    let chi: Vec<f64> = pts.iter().zip(&h.u).map(|(x, v)| v - lin(x)).collect();
    let mut values = Vec::new();
    for &r in radii {
        let b = IBox::centered(d, [0; 3], (r - 1) / 2);
        let sel: Vec<f64> = pts.iter().zip(&chi).filter(|(x, _)| b.contains(x)).map(|(_, c)| *c).collect();
        if sel.is_empty() {
            values.push(f64::NAN);
            continue;
        }
        let n = sel.len() as f64;
        let mean = sel.iter().sum::<f64>() / n;
        let l2 = (sel.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
        values.push(l2 / r as f64);
    }
    Ok(CorrectorProfile { env_index, p, radii: radii.to_vec(), values, degenerate: false })
}

/// Median corrector profile over environments.
pub fn corrector_ensemble(
    law: ConductanceLaw,
    window: Window,
    n_envs: u64,
    seed: u64,
    p: [f64; 3],
    radii: &[i64],
    opts: SolveOptions,
) -> Result<(Vec<CorrectorProfile>, Vec<f64>)> {
    let profiles: Vec<Result<CorrectorProfile>> = (0..n_envs)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(law, window, seed, e);
            corrector(&env, e, &window, p, radii, opts).map_err(|err| err.in_record(format!("env_index {e}")))
        })
        .collect();
    let profiles: Vec<CorrectorProfile> = profiles.into_iter().collect::<Result<_>>()?;
    let med = (0..radii.len())
        .map(|k| median(&profiles.iter().filter(|p| !p.degenerate).map(|p| p.values[k]).collect::<Vec<_>>()))
        .collect();
    Ok((profiles, med))
}

/// An a-harmonic function on the largest cluster of B_R (centred box of
/// half-width R) with random low-frequency boundary data.
pub fn random_harmonic<C: Conductance + ?Sized>(env: &C, r: i64, seed: u64, opts: SolveOptions) -> Result<HarmonicSample> {
    let d = env.dim();
    let bx = IBox::centered(d, [0; 3], r);
    let lab = label_clusters(env, bx, None);
    let big = lab.largest().ok_or_else(|| Error::Numerical("no cluster in the ball".into()))?;
    let f = LowFrequencyField::new(d, r as f64, 2, seed);
    harmonic_on(env, &lab.members(big), &bx, |x| f.eval(x), opts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzProfile {
    pub radii: Vec<i64>,
    /// ‖∇u 1_{a≠0}‖_{L̲²(C ∩ B_r)} / ‖∇u 1_{a≠0}‖_{L̲²(C ∩ B_R)}.
    pub ratios: Vec<f64>,
    /// The outer norm vanished.
    pub flagged: bool,
}

fn ball_mean_sq(points: &[Point], vals: &[f64], half: i64) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for (x, v) in points.iter().zip(vals) {
        if x.iter().all(|c| c.abs() <= half) {
            s += v * v;
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Ratios against the largest radius; radii are half-widths of centred boxes.
pub fn lipschitz_profile(sample: &HarmonicSample, radii: &[i64]) -> Result<LipschitzProfile> {
    let Some(&big) = radii.iter().max() else { return invalid("no radii") };
    let g = cluster_gradient_mag(&sample.op, &sample.u);
    let pts = sample.op.points();
    let (outer, _) = ball_mean_sq(pts, &g, big);
    if outer <= 0.0 {
        return Ok(LipschitzProfile { radii: radii.to_vec(), ratios: vec![f64::NAN; radii.len()], flagged: true });
    }
    let ratios = radii.iter().map(|&r| (ball_mean_sq(pts, &g, r).0 / outer).sqrt()).collect();
    Ok(LipschitzProfile { radii: radii.to_vec(), ratios, flagged: false })
}

/// Harmonic polynomials of degree ≤ k in scaled coordinates y = x/s.
pub fn harmonic_basis(d: usize, k: u32, x: &Point, s: f64) -> Vec<f64> {
    let y: Vec<f64> = (0..d).map(|i| x[i] as f64 / s).collect();
    let mut b = vec![1.0];
    if k >= 1 {
        b.extend(y.iter().copied());
    }
    if k >= 2 {
        for i in 0..d {
            for j in i + 1..d {
                b.push(y[i] * y[j]);
            }
        }
        for i in 0..d - 1 {
            b.push(y[i] * y[i] - y[i + 1] * y[i + 1]);
        }
    }
    b
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityProfile {
    pub k: u32,
    pub radii: Vec<i64>,
    /// D_k(r): normalized L² distance to harmonic polynomials of degree ≤ k.
    pub dk: Vec<f64>,
    /// D_0(r), used in the decay bound.
    pub d0: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub rank_deficient: Vec<bool>,
}

/// Least-squares distance of u on C ∩ B_r to the degree-≤k harmonic polynomials.
pub fn dk_distance(sample: &HarmonicSample, k: u32, r: i64) -> Result<(f64, bool)> {
    if k > 2 {
        return invalid("polynomial degree must be at most 2");
    }
    let d = sample.op.index.bx.d;
    let pts: Vec<(usize, &Point)> =
        sample.op.points().iter().enumerate().filter(|(_, x)| x.iter().all(|c| c.abs() <= r)).collect();
    let nb = harmonic_basis(d, k, &[0; 3], 1.0).len();
    if pts.len() < nb {
        return Ok((f64::NAN, true));
    }
    let s = r.max(1) as f64;
    let mut gram = Mat::<f64>::zeros(nb, nb);
    let mut rhs = Mat::<f64>::zeros(nb, 1);
    for &(idx, x) in &pts {
        let b = harmonic_basis(d, k, x, s);
        for i in 0..nb {
            rhs[(i, 0)] += b[i] * sample.u[idx];
            for j in 0..nb {
                gram[(i, j)] += b[i] * b[j];
            }
        }
    }
    let Ok(llt) = gram.llt(Side::Lower) else { return Ok((f64::NAN, true)) };
    let c = llt.solve(&rhs);
    let mut res = 0.0;
    for &(idx, x) in &pts {
        let b = harmonic_basis(d, k, x, s);
        let fit: f64 = (0..nb).map(|i| b[i] * c[(i, 0)]).sum();
        res += (sample.u[idx] - fit).powi(2);
    }
    Ok(((res / pts.len() as f64).sqrt(), false))
}

pub fn dk_profile(sample: &HarmonicSample, k: u32, radii: &[i64]) -> Result<RegularityProfile> {
    let mut dk = Vec::new();
    let mut d0 = Vec::new();
    let mut rank_deficient = Vec::new();
    for &r in radii {
        let (v, bad) = dk_distance(sample, k, r)?;
        let (v0, bad0) = dk_distance(sample, 0, r)?;
        dk.push(v);
        d0.push(v0);
        rank_deficient.push(bad || bad0);
    }
    let lipschitz = lipschitz_profile(sample, radii)?.ratios;
    Ok(RegularityProfile { k, radii: radii.to_vec(), dk, d0, lipschitz, rank_deficient })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    /// Per profile: δ̂ from the small-scale part of D_k.
    pub deltas: Vec<f64>,
    pub delta: f64,
    pub delta_ci: (f64, f64),
    /// Smallest K for which every profile obeys the bound with the mean δ̂.
    pub k_const: f64,
}

/// Fit D_k(r) ≤ K (r/R)^{k+1} D_k(R) + K r^{1−δ} D_0(R)/R over a corpus: per
/// profile, the excess over the first term is regressed on r in log-log.
pub fn fit_dk_decay(profiles: &[RegularityProfile], seed: u64) -> Result<DecayFit> {
    let mut deltas = Vec::new();
    for p in profiles {
        let n = p.radii.len();
        if n < 2 || p.rank_deficient.iter().any(|&b| b) {
            continue;
        }
        let big = p.radii[n - 1] as f64;
        let (dk_r, d0_r) = (p.dk[n - 1], p.d0[n - 1]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n - 1 {
            let r = p.radii[i] as f64;
            let excess = p.dk[i] - (r / big).powi(p.k as i32 + 1) * dk_r;
            if excess > 0.0 && d0_r > 0.0 {
                xs.push(r.ln());
                ys.push((excess * big / d0_r).ln());
            }
        }
        if xs.len() >= 2 {
            deltas.push(1.0 - linear_fit(&xs, &ys).1);
        }
    }
    if deltas.is_empty() {
        return invalid("no usable profiles");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let delta = mean(&deltas);
    let delta_ci = bootstrap_ci(&deltas, mean, BOOTSTRAP_RESAMPLES, seed);
    let mut k_const = 0.0f64;
    for p in profiles {
        let n = p.radii.len();
        let big = p.radii[n - 1] as f64;
        for i in 0..n {
            let r = p.radii[i] as f64;
            let shape = (r / big).powi(p.k as i32 + 1) * p.dk[n - 1] + r.powf(1.0 - delta) * p.d0[n - 1] / big;
            if shape > 0.0 && p.dk[i].is_finite() {
                k_const = k_const.max(p.dk[i] / shape);
            }
        }
    }
    Ok(DecayFit { deltas, delta, delta_ci, k_const })
}
