#![allow(dead_code)]

use faer::linalg::solvers::Solve;
use faer::Mat;
use perchomog::coarsen::{coarsen, CubeDomain};
use perchomog::lattice::{Point, TriadicCube, Window};
use perchomog::partition::{partition_p, Partition};
use perchomog::percolation::{ConductanceLaw, Environment, GoodnessRule, Mode};
use perchomog::solver::{solve_dirichlet, ClusterOperator, SolveOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample(p: f64, m: u32, seed: u64, env: u64) -> (Environment, Partition) {
    let w = Window::new(2, m).unwrap();
    let e = Environment::sample(ConductanceLaw::bernoulli(p), w, seed, env);
    let part = partition_p(&e, w, w.bbox(), GoodnessRule::Crossing, Mode::Exact).unwrap();
    (e, part)
}

/// Linear term of w ↦ ⟨q, ∇[w]_P⟩ by coarsening unit vectors and summing edges.
pub fn linear_term(domain: &CubeDomain, q: [f64; 3]) -> Vec<f64> {
    let n = domain.cluster.len();
    (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let c = coarsen(domain, &e).unwrap();
            let g = c.gradient();
            let bx = c.bx;
            let mut s = 0.0;
            for (idx, v) in g.vals.iter().enumerate() {
                let x = bx.point(idx);
                for i in 0..bx.d {
                    if x[i] < bx.hi[i] {
                        s += 2.0 * q[i] * v[i];
                    }
                }
            }
            s
        })
        .collect()
}

pub fn anchor_weights(domain: &CubeDomain) -> Vec<f64> {
    let mut wts = vec![0.0; domain.cluster.len()];
    for (e, a) in domain.elements.iter().zip(&domain.anchors) {
        let k = domain.cluster.binary_search(&a.unwrap()).unwrap();
        wts[k] += e.vertex_count() as f64;
    }
    wts
}

/// Dense KKT solve of min wᵀAw − cᵀw subject to (Aw)_I = 0 and the anchor
/// normalization; returns (w, objective/|U|).
pub fn dense_kkt_mu(op: &ClusterOperator, domain: &CubeDomain, c: &[f64]) -> (Vec<f64>, f64) {
    let n = op.n();
    let a = op.dense();
    let ubox = domain.cube.bbox();
    let interior: Vec<usize> = (0..n).filter(|&k| !ubox.on_boundary(&op.points()[k])).collect();
    let ni = interior.len();
    let dim = n + ni + 1;
    let mut k = Mat::<f64>::zeros(dim, dim);
    let mut rhs = Mat::<f64>::zeros(dim, 1);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = 2.0 * a[(i, j)];
        }
        rhs[(i, 0)] = c[i];
    }
    for (r, &row) in interior.iter().enumerate() {
        for j in 0..n {
            k[(n + r, j)] = a[(row, j)];
            k[(j, n + r)] = a[(row, j)];
        }
    }
    let wts = anchor_weights(domain);
    for j in 0..n {
        k[(n + ni, j)] = wts[j];
        k[(j, n + ni)] = wts[j];
    }
    let sol = k.full_piv_lu().solve(&rhs);
    let w: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
    let obj = (op.quad(&w) - c.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>()) / domain.cube.vertex_count() as f64;
    (w, obj)
}

/// Random element of A_*(U): harmonic extension of random data on C_*(U) ∩ ∂U.
pub fn random_admissible(op: &ClusterOperator, cube: &TriadicCube, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bx = cube.bbox();
    let fixed: Vec<bool> = op.points().iter().map(|x| bx.on_boundary(x)).collect();
    let g: Vec<f64> = (0..op.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    solve_dirichlet(op, &fixed, &g, SolveOptions::default()).unwrap().u
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn coords(points: &[Point], i: usize) -> Vec<f64> {
    points.iter().map(|x| x[i] as f64).collect()
}
