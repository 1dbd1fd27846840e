//! Acceptance harness: one pass/fail line per criterion.
//!
//! Criteria 1–9 run once on a single-thread pool and once on an 8-thread
//! pool; criterion 10 compares the CSV bytes of the two runs. Set
//! `ACCEPTANCE_ONLY=3,5` to run a subset (criterion 10 then covers the subset).

mod common;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use common::*;
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use perchomog::coarsen::{coarsen, cube_domain, multiscale_poincare, DomainStatus};
use perchomog::energy::*;
use perchomog::experiments::*;
use perchomog::io;
use perchomog::lattice::{pow3, Conductance, Point, TriadicCube, Window};
use perchomog::partition::{build_partition, partition_p, CubeOracle, GoodCubeOracle};
use perchomog::percolation::{ConductanceLaw, Environment, GoodnessRule, LawKind, Mode};
use perchomog::regularity::LowFrequencyField;
use perchomog::solver::{minimize_mu, solve_cell, solve_nu, SolveOptions};
use rand::Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
    csv: Vec<u8>,
}

fn outcome(pass: bool, detail: String, csv: Vec<u8>) -> Outcome {
    Outcome { pass, detail, csv }
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// First Ok cell per environment at the given level, scanning environments in order.
fn ok_instances(p: f64, m: u32, level: u32, seed: u64, want: usize) -> Vec<(u64, Environment, perchomog::partition::Partition, TriadicCube)> {
    let found: Vec<_> = (0..(want as u64 * 8))
        .into_par_iter()
        .filter_map(|e| {
            let w = Window::new(2, m).unwrap();
            let env = Environment::sample(ConductanceLaw::bernoulli(p), w, seed, e);
            let part = partition_p(&env, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
            w.cube()
                .subcubes(level)
                .into_iter()
                .find(|c| cube_domain(&env, &part, c).status == DomainStatus::Ok)
                .map(|c| (e, env, part, c))
        })
        .collect();
    found.into_iter().take(want).collect()
}

// 1. first/second variations and the duality identity
fn criterion_1() -> Outcome {
    let mut inst = ok_instances(0.7, 3, 2, 101, 50);
    inst.extend(ok_instances(0.7, 3, 3, 102, 50));
    let rows: Vec<(u64, u32, f64, f64, f64)> = inst
        .par_iter()
        .enumerate()
        .map(|(k, (e, env, part, c))| {
            let cell = solve_cell(env, part, c, opts()).unwrap();
            let op = cell.op.as_ref().unwrap();
            let vol = cell.volume();
            let mut r = rng(1000 + k as u64);
            let q = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), 0.0];
            let p = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), 0.0];
            let u = cell.u_at(q);
            let v = cell.v_at(p);
            let cq = cell.coeff_at(q);
            let ell: Vec<f64> = op.points().iter().map(|x| p[0] * x[0] as f64 + p[1] * x[1] as f64).collect();
            let (mut first, mut second) = (0.0f64, 0.0f64);
            for _ in 0..3 {
                let w = random_admissible(op, c, &mut r);
                let cs = 2.0 * (op.quad(&w) * op.quad(&u)).sqrt() + dot(&cq, &w).abs();
                first = first.max(rel(2.0 * op.bilinear(&w, &u), dot(&cq, &w), cs));
                let cs = (op.quad(&w) * op.quad(&v)).sqrt() + (op.quad(&ell) * op.quad(&w)).sqrt();
                first = first.max(rel(op.bilinear(&w, &v), op.bilinear(&ell, &w), cs));
                let jm = (op.quad(&w) - dot(&cq, &w)) / vol;
                let gap = op.quad(&diff(&w, &u)) / vol;
                second = second.max(rel(jm - cell.mu(q), gap, jm.abs() + cell.mu(q).abs() + gap));
                let jn = (-op.quad(&w) + 2.0 * op.bilinear(&ell, &w)) / vol;
                let gap = op.quad(&diff(&w, &v)) / vol;
                second = second.max(rel(cell.nu(p) - jn, gap, jn.abs() + cell.nu(p).abs() + gap));
            }
            let dc = duality_from_cell(&cell, p, q);
            let scale = cell.nu(p).abs() + cell.mu(q).abs() + (dc.lhs - cell.nu(p) + cell.mu(q)).abs() + dc.rhs;
            (*e, c.level, first, second, dc.residual / scale)
        })
        .collect();
    let worst = rows.iter().fold(0.0f64, |m, r| m.max(r.2).max(r.3).max(r.4));
    let mut csv = String::from("instance,env_index,level,first_variation,second_variation,duality\n");
    for (k, r) in rows.iter().enumerate() {
        writeln!(csv, "{k},{},{},{:e},{:e},{:e}", r.0, r.1, r.2, r.3, r.4).unwrap();
    }
    outcome(
        rows.len() == 100 && worst <= 1e-8,
        format!("{} instances, worst relative residual {worst:.2e} (tol 1e-8)", rows.len()),
        csv.into_bytes(),
    )
}

// 2. full-lattice closed form
fn criterion_2() -> Outcome {
    let mut csv = String::from("m,nu,closed_form\n");
    let mut worst = 0.0f64;
    for m in 2..=4u32 {
        let w = Window::new(2, m).unwrap();
        let env = Environment::constant(w, 1.0);
        let part = partition_p(&env, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
        let (_, nu) = solve_nu(&env, &w.cube(), &part, [1.0, 0.0, 0.0], opts()).unwrap();
        let l = pow3(m) as f64;
        worst = worst.max((nu - (l - 1.0) / l).abs());
        writeln!(csv, "{m},{nu},{}", (l - 1.0) / l).unwrap();
    }
    let cfg = EnsembleConfig {
        law: ConductanceLaw::bernoulli(1.0),
        window: Window::new(2, 5).unwrap(),
        n_envs: 1,
        seed: 2,
        levels: vec![4],
        rule: GoodnessRule::Crossing,
        mode: Mode::Exact,
        opts: opts(),
    };
    let cells = ensemble_cells(&cfg).unwrap();
    let est = abar_estimate(&cells, 2, 2).unwrap();
    csv.push_str(&String::from_utf8(io::abar_csv(&est).unwrap()).unwrap());
    let sig_ok = (est.sigma_eff - 1.0).abs() <= 0.02;
    outcome(
        worst <= 1e-9 && sig_ok,
        format!("max |nu - (3^m-1)/3^m| = {worst:.1e}; sigma_eff(m=4) = {:.5}", est.sigma_eff),
        csv.into_bytes(),
    )
}

/// Classical effective conductivity of one 81² torus sample by a dense
/// grounded solve of the periodic corrector problem, averaged over e_1, e_2.
fn torus_sigma(law: ConductanceLaw, seed: u64) -> f64 {
    let l = 81i64;
    let h = l / 2;
    // a 243² window contains every wrap-around edge of the torus box
    let env = Environment::sample(law, Window::new(2, 5).unwrap(), seed, 0);
    let idx = |x: i64, y: i64| ((x.rem_euclid(l)) * l + y.rem_euclid(l)) as usize;
    let n = (l * l) as usize;
    let mut edges = Vec::with_capacity(2 * n);
    for x in -h..=h {
        for y in -h..=h {
            for i in 0..2 {
                let a = env.conductance([x, y, 0], i);
                let (tx, ty) = if i == 0 { (x + 1, y) } else { (x, y + 1) };
                edges.push((idx(x + h, y + h), idx(tx + h, ty + h), i, a));
            }
        }
    }
    // unknowns 1..n (vertex 0 grounded)
    let mut k = Mat::<f64>::zeros(n - 1, n - 1);
    let mut rhs = Mat::<f64>::zeros(n - 1, 2);
    for &(a, b, dir, c) in &edges {
        if c == 0.0 {
            continue;
        }
        for (s, t, sign) in [(a, b, 1.0), (b, a, -1.0)] {
            if s == 0 {
                continue;
            }
            k[(s - 1, s - 1)] += c;
            if t != 0 {
                k[(s - 1, t - 1)] -= c;
            }
            // ∂/∂χ_s of Σ c (e_dir + χ_b − χ_a)²
            rhs[(s - 1, dir)] += sign * c;
        }
    }
    let llt = k.llt(Side::Lower).expect("grounded torus Laplacian is SPD");
    let chi = llt.solve(&rhs);
    let at = |v: usize, j: usize| if v == 0 { 0.0 } else { chi[(v - 1, j)] };
    let mut sigma = 0.0;
    for j in 0..2 {
        let mut e = 0.0;
        for &(a, b, dir, c) in &edges {
            let g = if dir == j { 1.0 } else { 0.0 } + at(b, j) - at(a, j);
            e += c * g * g;
        }
        sigma += e / n as f64;
    }
    sigma / 2.0
}

// 3. two-point duality oracle
fn criterion_3() -> Outcome {
    let law = ConductanceLaw::new(LawKind::TwoPoint, 1.0, 0.25).unwrap();
    let cfg = EnsembleConfig {
        law,
        window: Window::new(2, 6).unwrap(),
        n_envs: 32,
        seed: 3,
        levels: vec![4, 5],
        rule: GoodnessRule::Crossing,
        mode: Mode::Exact,
        opts: opts(),
    };
    let cells = ensemble_cells(&cfg).unwrap();
    let est = abar_estimate(&cells, 2, 3).unwrap();
    let torus = torus_sigma(law, 33);
    let mut csv = io::abar_csv(&est).unwrap();
    csv.extend(format!("torus_81,sigma_eff,{torus},,,1\n").bytes());
    let target = 0.25f64.sqrt();
    let ok = (est.sigma_eff / target - 1.0).abs() <= 0.05 && (torus / target - 1.0).abs() <= 0.05;
    outcome(
        ok,
        format!(
            "sigma_eff = {:.4} CI [{:.4}, {:.4}] vs 0.5; dense 81^2 torus = {torus:.4}",
            est.sigma_eff, est.sigma_eff_ci.0, est.sigma_eff_ci.1
        ),
        csv,
    )
}

// 4. minimize_mu against the dense KKT oracle
fn criterion_4() -> Outcome {
    let inst = ok_instances(0.7, 3, 2, 404, 50);
    let rows: Vec<(u64, f64, f64)> = inst
        .par_iter()
        .enumerate()
        .map(|(k, (e, env, part, c))| {
            let mut r = rng(4000 + k as u64);
            let q = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), 0.0];
            let (res, mu) = minimize_mu(env, c, part, q, opts()).unwrap();
            let cell = solve_cell(env, part, c, opts()).unwrap();
            let op = cell.op.as_ref().unwrap();
            let lin = linear_term(&cell.domain, q);
            let (w, obj) = dense_kkt_mu(op, &cell.domain, &lin);
            let wmax = w.iter().fold(f64::MIN_POSITIVE, |m, x| m.max(x.abs()));
            let err_w = res.values.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / wmax;
            (*e, rel(mu, obj, obj.abs().max(1e-300)), err_w)
        })
        .collect();
    let worst = rows.iter().fold(0.0f64, |m, r| m.max(r.1).max(r.2));
    let mut csv = String::from("instance,env_index,mu_rel_err,minimizer_rel_err\n");
    for (k, r) in rows.iter().enumerate() {
        writeln!(csv, "{k},{},{:e},{:e}", r.0, r.1, r.2).unwrap();
    }
    outcome(
        rows.len() == 50 && worst <= 1e-8,
        format!("{} problems, worst relative deviation {worst:.2e} (tol 1e-8)", rows.len()),
        csv.into_bytes(),
    )
}

// 5. monotone trends of E[ν] and ω̂
fn criterion_5() -> (Outcome, Mat3) {
    let cfg = EnsembleConfig {
        law: ConductanceLaw::bernoulli(0.7),
        window: Window::new(2, 6).unwrap(),
        n_envs: 64,
        seed: 5,
        levels: vec![2, 3, 4, 5],
        rule: GoodnessRule::Crossing,
        mode: Mode::Exact,
        opts: opts(),
    };
    let cells = ensemble_cells(&cfg).unwrap();
    let est = abar_estimate(&cells, 2, 5).unwrap();
    let steps = level_differences(&cells, 5, |c| c.nu(unit_vec(0)) + c.nu(unit_vec(1)));
    let om = omega_decay(&cells, &est.abar, 2, 5).unwrap();
    let nu_ok = steps.iter().all(|s| s.ci.0 <= 0.0);
    let mag: Vec<f64> = om.omega_signed.iter().map(|w| w.abs()).collect();
    let om_ok = mag.windows(2).all(|w| w[1] < w[0]) && mag.last().unwrap() < &(0.5 * mag[0]);
    let mut csv = io::energy_csv(&energy_records(&cells, 2), 2, Mode::Exact).unwrap();
    csv.extend(io::abar_csv(&est).unwrap());
    let mut s = String::from("level,omega_signed,omega_plus\n");
    for k in 0..om.levels.len() {
        writeln!(s, "{},{},{}", om.levels[k], om.omega_signed[k], om.omega[k]).unwrap();
    }
    csv.extend(s.bytes());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ");
    let steps_s = steps.iter().map(|s| format!("{:.4}[{:.4},{:.4}]", s.diff, s.ci.0, s.ci.1)).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "E[nu] steps {steps_s}; |omega| {}; omega_+ {}",
        fmt(&mag),
        fmt(&om.omega)
    );
    (outcome(nu_ok && om_ok, detail, csv), est.abar)
}

// 6. Dirichlet error scaling
fn criterion_6(abar: Mat3) -> Outcome {
    let cfg = DirichletConfig {
        law: ConductanceLaw::bernoulli(0.7),
        d: 2,
        levels: vec![4, 5, 6],
        family: BoundaryFamily::Affine([1.0, 0.0, 0.0]),
        n_envs: 16,
        seed: 6,
        eps: 0.5,
        abar,
        opts: opts(),
    };
    let tab = dirichlet_experiment(&cfg).unwrap();
    let means: Vec<f64> = tab.levels.iter().map(|l| l.mean_rescaled).collect();
    let dec = means.windows(2).all(|w| w[1] < w[0]);
    outcome(
        dec && tab.alpha > 0.1,
        format!(
            "mean rescaled error {}; alpha = {:.3}",
            means.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" "),
            tab.alpha
        ),
        io::dirichlet_csv(&tab, Mode::Exact).unwrap(),
    )
}

// 7. corrector sublinearity
fn criterion_7() -> Outcome {
    let radii = [27, 81, 243];
    let (profiles, med) =
        corrector_ensemble(ConductanceLaw::bernoulli(0.7), Window::new(2, 6).unwrap(), 16, 7, [1.0, 0.0, 0.0], &radii, opts())
            .unwrap();
    let dec = med.iter().all(|x| x.is_finite()) && med.windows(2).all(|w| w[1] < w[0]);
    let mut csv = io::corrector_csv(&profiles, 2).unwrap();
    for (r, m) in radii.iter().zip(&med) {
        csv.extend(format!("median,,{r},{m},false\n").bytes());
    }
    outcome(
        dec,
        format!("median profile {}", med.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" ")),
        csv,
    )
}

/// Copy of `env` with every edge outside `keep` replaced by a fresh draw.
fn mask_outside(env: &Environment, keep: &perchomog::lattice::IBox, seed: u64) -> Environment {
    let mut r = rng(seed);
    let fresh: Vec<f32> = (0..2 * env.window.n_vertices()).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let n = env.window.n_vertices();
    let mut out = Environment::from_fn(env.window, env.law, |x, i| {
        let mut y = x;
        y[i] += 1;
        if keep.contains(&x) && keep.contains(&y) {
            env.conductance(x, i) as f32
        } else {
            fresh[i * n + env.window.index(&x)]
        }
    });
    out.master_seed = env.master_seed;
    out.env_index = env.env_index;
    out
}

// 8. partition invariants and oracle masking
fn criterion_8() -> Outcome {
    let w = Window::new(2, 4).unwrap();
    let rows: Vec<(u64, usize, bool, usize, usize)> = (0..200u64)
        .into_par_iter()
        .map(|e| {
            let env = Environment::sample(ConductanceLaw::bernoulli(0.7), w, 8, e);
            let part = partition_p(&env, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
            let inv = part.check_invariants().is_ok();
            let mut r = rng(8000 + e);
            let mut flips = 0;
            let mut trials = 0;
            for _ in 0..4 {
                let level = r.gen_range(1..=2u32);
                let cubes = TriadicCube::origin(2, 3).subcubes(level);
                let c = cubes[r.gen_range(0..cubes.len())];
                let masked = mask_outside(&env, &c.enlarged(), r.gen());
                for rule in [GoodnessRule::Crossing, GoodnessRule::Strict] {
                    let a = GoodCubeOracle::new(&env, rule, Mode::Exact).good(&c);
                    let b = GoodCubeOracle::new(&masked, rule, Mode::Exact).good(&c);
                    trials += 1;
                    flips += usize::from(a != b);
                }
            }
            (e, part.elements().len(), inv, trials, flips)
        })
        .collect();
    let full = Environment::constant(w, 1.0);
    let fp = partition_p(&full, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
    let uniform = fp.elements().iter().all(|c| c.size() == 3);
    let mut all_good = perchomog::partition::FnOracle(|c: &TriadicCube| c.level >= 1);
    let uniform_custom = build_partition(&mut all_good, w, w.bbox()).unwrap().elements().iter().all(|c| c.size() == 3);
    let bad_inv = rows.iter().filter(|r| !r.2).count();
    let flips: usize = rows.iter().map(|r| r.4).sum();
    let trials: usize = rows.iter().map(|r| r.3).sum();
    let mut csv = String::from("env_index,n_elements,invariants_ok,masking_trials,masking_flips\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{}", r.0, r.1, r.2, r.3, r.4).unwrap();
    }
    csv.extend(String::from_utf8(io::partition_csv(&[(0, &fp)]).unwrap()));
    outcome(
        bad_inv == 0 && flips == 0 && uniform && uniform_custom,
        format!(
            "{} envs: invariant failures {bad_inv}, masking flips {flips}/{trials}; full lattice uniformly size 3: {}",
            rows.len(),
            uniform && uniform_custom
        ),
        csv.into_bytes(),
    )
}

fn window_values(w: &Window, f: impl Fn(&Point) -> f64) -> Vec<f64> {
    w.bbox().iter().map(|x| f(&x)).collect()
}

// 9. multiscale Poincaré with a calibrated constant
fn criterion_9() -> Outcome {
    let w = Window::new(2, 5).unwrap();
    let half = w.half() as f64;
    let ns: Vec<u32> = (w.m.div_ceil(2)..=w.m).collect();
    let ratios = |u: &[f64]| ns.iter().map(|&n| multiscale_poincare(u, &w, n).unwrap().ratio).collect::<Vec<_>>();
    // calibration corpus: full-lattice affine and low-frequency fields
    let mut calib: Vec<Vec<f64>> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let f = LowFrequencyField::new(2, half, 1 + (s % 3) as u32, 900 + s);
            ratios(&window_values(&w, |x| f.eval(x)))
        })
        .collect();
    calib.push(ratios(&window_values(&w, |x| x[0] as f64)));
    let cal = calib.iter().flatten().fold(0.0f64, |m, r| m.max(*r));
    let c_msp = 10.0 * cal;
    // out-of-sample: fresh low-frequency fields and coarsened cluster functions
    let mut sample: Vec<(u64, String, Vec<f64>)> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let f = LowFrequencyField::new(2, half, 1 + (s % 4) as u32, 50_000 + s);
            (s, "lowfreq".to_string(), ratios(&window_values(&w, |x| f.eval(x))))
        })
        .collect();
    let coarse: Vec<(u64, String, Vec<f64>)> = (50..120u64)
        .into_par_iter()
        .filter_map(|s| {
            // the window cube itself touches elements that are good by default
            // and carry no anchor, so coarsen on the inner cube of a larger window
            let big = Window::new(2, w.m + 1).unwrap();
            let env = Environment::sample(ConductanceLaw::bernoulli(0.7), big, 9, s);
            let part = partition_p(&env, big, big.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
            let dom = cube_domain(&env, &part, &w.cube());
            if dom.status != DomainStatus::Ok {
                return None;
            }
            let f = LowFrequencyField::new(2, half, 2, 70_000 + s);
            let vals: Vec<f64> = dom.cluster.iter().map(|x| f.eval(x)).collect();
            let cf = coarsen(&dom, &vals).ok()?;
            Some((s, "coarsened".to_string(), ratios(&window_values(&w, |x| cf.at(x)))))
        })
        .collect();
    sample.extend(coarse.into_iter().take(50));
    let worst = sample.iter().flat_map(|s| s.2.iter()).fold(0.0f64, |m, r| m.max(*r));
    let fails = sample.iter().filter(|s| s.2.iter().any(|r| *r > c_msp)).count();
    let mut csv = format!("calibration,{cal}\nc_msp,{c_msp}\nsample,kind,n,ratio\n");
    for (s, kind, rs) in &sample {
        for (n, r) in ns.iter().zip(rs) {
            writeln!(csv, "{s},{kind},{n},{r}").unwrap();
        }
    }
    outcome(
        sample.len() == 100 && fails == 0,
        format!(
            "{} functions, n in {:?}: worst ratio {worst:.3} vs C_msp {c_msp:.3} (calibration {cal:.3}), failures {fails}",
            sample.len(),
            ns
        ),
        csv.into_bytes(),
    )
}

struct Run {
    id: usize,
    outcome: Outcome,
    elapsed: Duration,
}

fn run_criteria(which: &[usize], workers: usize) -> Vec<Run> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    pool.install(|| {
        let mut out = Vec::new();
        let mut abar: Option<Mat3> = None;
        for &id in which {
            let t = Instant::now();
            let o = match id {
                1 => criterion_1(),
                2 => criterion_2(),
                3 => criterion_3(),
                4 => criterion_4(),
                5 => {
                    let (o, a) = criterion_5();
                    abar = Some(a);
                    o
                }
                6 => {
                    // only the anisotropy of ā enters u_hom; fall back to a cheap estimate
                    let a = abar.unwrap_or_else(|| {
                        let cfg = EnsembleConfig {
                            law: ConductanceLaw::bernoulli(0.7),
                            window: Window::new(2, 5).unwrap(),
                            n_envs: 8,
                            seed: 66,
                            levels: vec![4],
                            rule: GoodnessRule::Crossing,
                            mode: Mode::Exact,
                            opts: opts(),
                        };
                        abar_estimate(&ensemble_cells(&cfg).unwrap(), 2, 66).unwrap().abar
                    });
                    criterion_6(a)
                }
                7 => criterion_7(),
                8 => criterion_8(),
                9 => criterion_9(),
                _ => unreachable!(),
            };
            out.push(Run { id, outcome: o, elapsed: t.elapsed() });
        }
        out
    })
}

fn main() {
    // `cargo test` passes harness flags; a name filter that is not ours means skip.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let which: Vec<usize> = match std::env::var("ACCEPTANCE_ONLY") {
        Ok(s) => s.split(',').filter_map(|t| t.trim().parse().ok()).filter(|k| (1..=9).contains(k)).collect(),
        Err(_) => (1..=9).collect(),
    };
    let budgets = [120, 60, 600, 120, 900, 1200, 900, 300, 180];
    let first = run_criteria(&which, 1);
    let mut all_pass = true;
    for r in &first {
        let budget = budgets[r.id - 1];
        let in_time = r.elapsed.as_secs_f64() <= budget as f64;
        let pass = r.outcome.pass && in_time;
        all_pass &= pass;
        println!(
            "criterion {:>2}: {} ({:.1}s of {}s) {}",
            r.id,
            if pass { "PASS" } else { "FAIL" },
            r.elapsed.as_secs_f64(),
            budget,
            r.outcome.detail
        );
    }
    let second = run_criteria(&which, 8);
    let mismatched: Vec<usize> = first.iter().zip(&second).filter(|(a, b)| a.outcome.csv != b.outcome.csv).map(|(a, _)| a.id).collect();
    let det = mismatched.is_empty();
    all_pass &= det;
    println!(
        "criterion 10: {} 1 vs 8 workers, {} CSVs compared, mismatched criteria {:?}",
        if det { "PASS" } else { "FAIL" },
        first.len(),
        mismatched
    );
    if !all_pass {
        std::process::exit(1);
    }
}
