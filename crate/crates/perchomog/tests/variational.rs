mod common;

use common::*;
use perchomog::coarsen::DomainStatus;
use perchomog::lattice::{pow3, TriadicCube, Window};
use perchomog::partition::partition_p;
use perchomog::percolation::{Environment, GoodnessRule, Mode};
use perchomog::solver::{minimize_mu, solve_cell, solve_nu, Method, SolveOptions};

fn ok_cells(p: f64, level: u32, want: usize) -> Vec<(perchomog::percolation::Environment, perchomog::partition::Partition, TriadicCube)> {
    let mut out = Vec::new();
    for env in 0..200u64 {
        let (e, part) = sample(p, 3, 11, env);
        for c in TriadicCube::origin(2, 3).subcubes(level) {
            if solve_cell(&e, &part, &c, SolveOptions::default()).unwrap().domain.status == DomainStatus::Ok {
                out.push((e.clone(), part.clone(), c));
                break;
            }
        }
        if out.len() == want {
            break;
        }
    }
    out
}

#[test]
fn mu_matches_dense_kkt() {
    let cells = ok_cells(0.7, 2, 12);
    assert!(cells.len() >= 10);
    for (k, (e, part, c)) in cells.iter().enumerate() {
        let cell = solve_cell(e, part, c, SolveOptions::default()).unwrap();
        let op = cell.op.as_ref().unwrap();
        let q = [1.0 - 0.1 * k as f64, 0.3 + 0.05 * k as f64, 0.0];
        let lin = linear_term(&cell.domain, q);
        let direct = cell.coeff_at(q);
        for (a, b) in lin.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        let (w, obj) = dense_kkt_mu(op, &cell.domain, &lin);
        let scale = 1.0 + obj.abs();
        assert!((cell.mu(q) - obj).abs() < 1e-8 * scale, "{} vs {}", cell.mu(q), obj);
        let u = cell.u_at(q);
        let wmax = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in u.iter().zip(&w) {
            assert!((a - b).abs() < 1e-8 * wmax);
        }
    }
}

#[test]
fn variations_and_duality() {
    let mut r = rng(5);
    for (e, part, c) in ok_cells(0.7, 2, 6).into_iter().chain(ok_cells(0.7, 3, 4)) {
        let cell = solve_cell(&e, &part, &c, SolveOptions::default()).unwrap();
        let op = cell.op.as_ref().unwrap();
        let vol = cell.volume();
        let q = [0.8, -0.4, 0.0];
        let p = [0.2, 1.1, 0.0];
        let u = cell.u_at(q);
        let v = cell.v_at(p);
        let cq = cell.coeff_at(q);
        let ell: Vec<f64> = op.points().iter().map(|x| p[0] * x[0] as f64 + p[1] * x[1] as f64).collect();
        for _ in 0..5 {
            let w = random_admissible(op, &c, &mut r);
            let s = 1.0 + op.quad(&w) + dot(&cq, &w).abs();
            assert!((2.0 * op.bilinear(&w, &u) - dot(&cq, &w)).abs() < 1e-8 * s);
            assert!((op.bilinear(&w, &v) - op.bilinear(&ell, &w)).abs() < 1e-8 * s);
            let jm = (op.quad(&w) - dot(&cq, &w)) / vol;
            assert!((jm - cell.mu(q) - op.quad(&diff(&w, &u)) / vol).abs() < 1e-8 * s);
            let jn = (-op.quad(&w) + 2.0 * op.bilinear(&ell, &w)) / vol;
            assert!((cell.nu(p) - jn - op.quad(&diff(&w, &v)) / vol).abs() < 1e-8 * s);
        }
        let lhs = cell.nu(p) - cell.mu(q) - dot(&cq, &v) / vol;
        let rhs = op.quad(&diff(&v, &u)) / vol;
        assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        assert!(cell.nu_crosscheck < 1e-9);
        // v − p·x is constant on the boundary set
        let offs: Vec<f64> = (0..op.n()).filter(|&k| cell.boundary[k]).map(|k| v[k] - ell[k]).collect();
        assert!(offs.iter().all(|o| (o - offs[0]).abs() < 1e-8));
        assert!(cell.mu(q) <= 0.0 && cell.nu(p) >= 0.0);
        // parallelogram law
        let (q1, q2) = ([1.0, 0.5, 0.0], [-0.3, 0.7, 0.0]);
        let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], 0.0];
        let lhs = cell.mu(add(q1, q2, 1.0)) + cell.mu(add(q1, q2, -1.0));
        assert!((lhs - 2.0 * (cell.mu(q1) + cell.mu(q2))).abs() < 1e-10);
        // ν is dominated by the zero test field
        let open: f64 = op.edges.iter().map(|&(i, j, a)| {
            let dx: f64 = (0..2).map(|t| p[t] * (op.points()[j as usize][t] - op.points()[i as usize][t]) as f64).sum();
            a * dx * dx
        }).sum();
        assert!(cell.nu(p) <= open / vol + 1e-12);
    }
}

#[test]
fn full_lattice_nu_closed_form() {
    for m in 1..=4u32 {
        let w = Window::new(2, m).unwrap();
        let env = Environment::constant(w, 1.0);
        let part = partition_p(&env, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
        let (res, nu) = solve_nu(&env, &w.cube(), &part, [1.0, 0.0, 0.0], SolveOptions::default()).unwrap();
        let l = pow3(m) as f64;
        assert!((nu - (l - 1.0) / l).abs() < 1e-12, "m={m}: {nu}");
        assert!(!res.degenerate);
        for t in [2.0, -1.0, 0.5] {
            let (_, nt) = solve_nu(&env, &w.cube(), &part, [t, 0.0, 0.0], SolveOptions::default()).unwrap();
            assert!((nt - t * t * nu).abs() < 1e-10);
        }
        let (r0, mu0) = minimize_mu(&env, &w.cube(), &part, [0.0; 3], SolveOptions::default()).unwrap();
        assert_eq!(mu0, 0.0);
        assert!(r0.values.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn iterative_and_direct_agree() {
    for (e, part, c) in ok_cells(0.7, 3, 3) {
        let a = solve_cell(&e, &part, &c, SolveOptions::default()).unwrap();
        let opts = SolveOptions { method: Method::Pcg, tol: 1e-12, ..Default::default() };
        let b = solve_cell(&e, &part, &c, opts).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.m[i][j] - b.m[i][j]).abs() < 1e-8);
                assert!((a.n[i][j] - b.n[i][j]).abs() < 1e-8);
            }
        }
        assert!(b.iterations > 0);
    }
}
