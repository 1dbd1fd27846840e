mod common;

use std::collections::BTreeSet;

use common::*;
use perchomog::coarsen::{check_interface_bound, coarsen, cube_domain, multiscale_poincare, DomainStatus};
use perchomog::io::{environment_bytes, read_environment};
use perchomog::lattice::{pow3, TriadicCube, Window};
use perchomog::partition::partition_p;
use perchomog::percolation::{is_crossable, is_well_connected, ConductanceLaw, Environment, GoodnessRule, LawKind, Mode};
use perchomog::solver::{solve_cell, SolveOptions};
use proptest::prelude::*;

fn law_strategy() -> impl Strategy<Value = ConductanceLaw> {
    (0usize..3, 0.05f64..=1.0, 0.05f64..=1.0).prop_map(|(k, p, l)| {
        let kind = [LawKind::BernoulliUnit, LawKind::TwoPoint, LawKind::UniformInterval][k];
        ConductanceLaw::new(kind, p, l).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cubes_nest_and_count(x in -200i64..200, y in -200i64..200, z in -200i64..200, n in 0u32..5, d in 2usize..4) {
        let p = [x, y, if d == 3 { z } else { 0 }];
        let c = TriadicCube::containing(d, p, n);
        let up = TriadicCube::containing(d, p, n + 1);
        prop_assert!(c.contains(&p));
        prop_assert!(up.contains_cube(&c));
        prop_assert_eq!(c.predecessor(), up);
        prop_assert_eq!(c.bbox().iter().count(), pow3(n * d as u32) as usize);
    }

    #[test]
    fn window_edges_are_canonical(d in 2usize..4, m in 0u32..3) {
        let w = Window::new(d, m).unwrap();
        let l = w.side() as usize;
        let edges: Vec<_> = w.edges().collect();
        let set: BTreeSet<_> = edges.iter().map(|e| (e.base, e.head())).collect();
        prop_assert_eq!(set.len(), edges.len());
        prop_assert_eq!(edges.len(), d * l.pow(d as u32 - 1) * (l - 1));
    }

    #[test]
    fn perc1_round_trips(law in law_strategy(), seed in any::<u64>(), idx in 0u64..1000, d in 2usize..4) {
        let env = Environment::sample(law, Window::new(d, 2).unwrap(), seed, idx);
        let bytes = environment_bytes(&env);
        let back = read_environment(&bytes[..]).unwrap();
        prop_assert_eq!(environment_bytes(&back), bytes);
        prop_assert_eq!(back.law, law);
    }

    #[test]
    fn opening_an_edge_keeps_crossability(seed in any::<u64>(), p in 0.3f64..0.8, k in 0usize..162) {
        let w = Window::new(2, 2).unwrap();
        let env = Environment::sample(ConductanceLaw::bernoulli(p), w, seed, 0);
        let mut more = env.clone();
        more.set(w.bbox().point(k / 2), k % 2, 1.0);
        let c = w.cube();
        if is_crossable(&env, w.bbox()) {
            prop_assert!(is_crossable(&more, w.bbox()));
        }
        if is_well_connected(&env, &c, Mode::Exact).well_connected {
            prop_assert!(is_well_connected(&more, &c, Mode::Exact).well_connected);
        }
    }

    #[test]
    fn partitions_satisfy_invariants(seed in any::<u64>(), p in 0.45f64..=1.0, strict in any::<bool>(), d in 2usize..4) {
        let w = Window::new(d, if d == 2 { 4 } else { 2 }).unwrap();
        let env = Environment::sample(ConductanceLaw::bernoulli(p), w, seed, 1);
        let rule = if strict { GoodnessRule::Strict } else { GoodnessRule::Crossing };
        let part = partition_p(&env, w, w.bbox(), rule, Mode::Exact).unwrap();
        prop_assert!(part.check_invariants().is_ok(), "{:?}", part.check_invariants());
        for x in w.bbox().iter() {
            let e = part.element_of(&x).unwrap();
            prop_assert!(e.contains(&x));
        }
    }

    #[test]
    fn coarsening_is_linear_and_idempotent(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (env, part) = sample(0.75, 3, seed, 0);
        let dom = cube_domain(&env, &part, &TriadicCube::origin(2, 2));
        prop_assume!(dom.status == DomainStatus::Ok);
        let mut r = rng(seed);
        let n = dom.cluster.len();
        let w1: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let w2: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let (c1, c2, cm) = (coarsen(&dom, &w1).unwrap(), coarsen(&dom, &w2).unwrap(), coarsen(&dom, &mix).unwrap());
        for k in 0..cm.values.len() {
            prop_assert!((cm.values[k] - a * c1.values[k] - b * c2.values[k]).abs() < 1e-12);
        }
        let again: Vec<f64> = dom.cluster.iter().map(|x| c1.at(x)).collect();
        prop_assert_eq!(coarsen(&dom, &again).unwrap().values, c1.values.clone());
        let report = check_interface_bound(&env, &dom, &w1).unwrap();
        prop_assert_eq!(report.violations, 0);
    }

    #[test]
    fn cell_energies_are_signed_quadratic_forms(seed in any::<u64>(), q in prop::array::uniform3(-2.0f64..2.0), t in -3.0f64..3.0) {
        let (env, part) = sample(0.7, 3, seed, 0);
        let cube = TriadicCube::origin(2, 2);
        let cell = solve_cell(&env, &part, &cube, SolveOptions::default()).unwrap();
        prop_assume!(!cell.degenerate());
        let q = [q[0], q[1], 0.0];
        let tq = [t * q[0], t * q[1], 0.0];
        prop_assert!(cell.mu(q) <= 1e-14 && cell.nu(q) >= -1e-14);
        prop_assert!((cell.mu(tq) - t * t * cell.mu(q)).abs() <= 1e-10 * (1.0 + cell.mu(tq).abs()));
        // energy identity from the first variation with w = u
        let op = cell.op.as_ref().unwrap();
        let u = cell.u_at(q);
        let c = cell.coeff_at(q);
        prop_assert!((op.quad(&u) - 0.5 * dot(&c, &u)).abs() <= 1e-8 * (1.0 + op.quad(&u)));
        prop_assert!((cell.mu(q) + op.quad(&u) / cell.volume()).abs() <= 1e-8 * (1.0 + cell.mu(q).abs()));
    }

    #[test]
    fn poincare_ratio_ignores_affine_rescaling(seed in any::<u64>(), s in 0.1f64..10.0, c in -5.0f64..5.0) {
        let w = Window::new(2, 3).unwrap();
        let mut r = rng(seed);
        let u: Vec<f64> = (0..w.n_vertices()).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
        let v: Vec<f64> = u.iter().map(|x| s * x + c).collect();
        let a = multiscale_poincare(&u, &w, 2).unwrap();
        let b = multiscale_poincare(&v, &w, 2).unwrap();
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-9 * a.ratio.max(1.0));
    }
}

#[test]
fn sampling_is_independent_of_worker_count() {
    let law = ConductanceLaw::new(LawKind::UniformInterval, 0.6, 0.3).unwrap();
    let w = Window::new(2, 5).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (0..4).map(|e| environment_bytes(&Environment::sample(law, w, 99, e))).collect::<Vec<_>>())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn ensembles_are_independent_of_worker_count() {
    use perchomog::energy::{ensemble_cells, energy_records, EnsembleConfig};
    use perchomog::io::energy_csv;
    let cfg = EnsembleConfig {
        law: ConductanceLaw::bernoulli(0.7),
        window: Window::new(2, 4).unwrap(),
        n_envs: 6,
        seed: 12,
        levels: vec![2, 3],
        rule: GoodnessRule::Crossing,
        mode: Mode::Exact,
        opts: SolveOptions::default(),
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| energy_csv(&energy_records(&ensemble_cells(&cfg).unwrap(), 2), 2, Mode::Exact).unwrap())
    };
    assert_eq!(run(1), run(5));
}
