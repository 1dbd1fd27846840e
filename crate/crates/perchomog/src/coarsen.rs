//! Anchors, the coarsening [w]_P of cluster functions, and executable checks of
//! the functional inequalities that coarsening transfers from Z^d.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{invalid, Error, Result};
use crate::lattice::{linf, pow3, Conductance, IBox, Point, TriadicCube, Window};
use crate::partition::Partition;
use crate::percolation::{crossing_cluster_label, label_clusters};
use crate::solver::{mag, ClusterOperator, VectorField};

/// z̄(◻): the vertex of the crossing cluster of ◻ closest to its centre in ℓ∞,
/// ties broken lexicographically.
pub fn anchor<C: Conductance + ?Sized>(env: &C, cube: &TriadicCube) -> Result<Point> {
    let lab = label_clusters(env, cube.bbox(), None);
    let l = crossing_cluster_label(&lab).ok_or_else(|| Error::Invalid(format!("no anchor in cube {:?}", cube)))?;
    Ok(lab.members(l).into_iter().min_by_key(|x| (linf(*x, cube.center), *x)).expect("clusters are nonempty"))
}

/// Anchors of every element of a partition; `None` marks clusterless elements.
#[derive(Clone, Debug)]
pub struct AnchorMap {
    pub anchors: BTreeMap<TriadicCube, Option<Point>>,
}

impl AnchorMap {
    pub fn new<C: Conductance + ?Sized>(env: &C, partition: &Partition) -> Self {
        let anchors = partition.elements().iter().map(|e| (*e, anchor(env, e).ok())).collect();
        AnchorMap { anchors }
    }

    pub fn get(&self, cube: &TriadicCube) -> Option<Point> {
        self.anchors.get(cube).copied().flatten()
    }

    /// Number of elements without an anchor.
    pub fn missing(&self) -> usize {
        self.anchors.values().filter(|a| a.is_none()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainStatus {
    Ok,
    /// The cube is strictly inside a partition element.
    NotInPStar,
    /// No element of the closure has a crossing cluster.
    NoCluster,
    /// Some anchor is missing or lies off the selected cluster.
    Incomplete,
}

impl DomainStatus {
    pub fn name(self) -> &'static str {
        match self {
            DomainStatus::Ok => "ok",
            DomainStatus::NotInPStar => "not_in_pstar",
            DomainStatus::NoCluster => "no_cluster",
            DomainStatus::Incomplete => "incomplete",
        }
    }
}

/// The geometry behind μ and ν on a cube U: cl_P(U), its elements and anchors,
/// and the cluster C_*(U).
#[derive(Clone, Debug)]
pub struct CubeDomain {
    pub cube: TriadicCube,
    pub closure: IBox,
    pub elements: Vec<TriadicCube>,
    pub anchors: Vec<Option<Point>>,
    /// Sorted vertices of C_*(U).
    pub cluster: Vec<Point>,
    pub status: DomainStatus,
}

fn bounding(d: usize, elements: &[TriadicCube]) -> IBox {
    let mut lo = elements[0].bbox().lo;
    let mut hi = elements[0].bbox().hi;
    for e in elements {
        let b = e.bbox();
        for i in 0..d {
            lo[i] = lo[i].min(b.lo[i]);
            hi[i] = hi[i].max(b.hi[i]);
        }
    }
    IBox::new(d, lo, hi)
}

/// C_*(U) is the open cluster of cl_P(U) holding the most anchors (ties to the
/// lexicographically smallest); the domain is complete when it holds all of them.
pub fn cube_domain<C: Conductance + ?Sized>(env: &C, partition: &Partition, cube: &TriadicCube) -> CubeDomain {
    let d = cube.d;
    let elements = partition.closure_elements(&cube.bbox());
    let anchors: Vec<Option<Point>> = elements.iter().map(|e| anchor(env, e).ok()).collect();
    let closure = bounding(d, &elements);
    let in_p = partition.in_p_star(cube);
    let lab = label_clusters(env, closure, None);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for a in anchors.iter().flatten() {
        if let Some(l) = lab.label_of(a) {
            *counts.entry(l).or_default() += 1;
        }
    }
    let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, c)| (*l, *c));
    let (cluster, status) = match best {
        None => (Vec::new(), DomainStatus::NoCluster),
        Some((l, c)) => {
            let status = if !in_p {
                DomainStatus::NotInPStar
            } else if c == elements.len() {
                DomainStatus::Ok
            } else {
                DomainStatus::Incomplete
            };
            (lab.members(l), status)
        }
    };
    CubeDomain { cube: *cube, closure, elements, anchors, cluster, status }
}

impl CubeDomain {
    pub fn is_degenerate(&self) -> bool {
        self.status != DomainStatus::Ok
    }

    /// Index into `elements` of the element containing x.
    pub fn element_index(&self, x: &Point) -> Option<usize> {
        self.elements.iter().position(|e| e.contains(x))
    }

    /// Per closure vertex (box-local order) the index of its element.
    pub fn element_map(&self) -> Vec<u32> {
        let mut map = vec![0u32; self.closure.len()];
        for (k, e) in self.elements.iter().enumerate() {
            for x in e.bbox().iter() {
                map[self.closure.local_index(&x)] = k as u32;
            }
        }
        map
    }
}

/// A cluster function together with its coarsening on cl_P(U).
#[derive(Clone, Debug)]
pub struct CoarseFunction {
    pub cluster: Vec<Point>,
    pub base: Vec<f64>,
    pub bx: IBox,
    /// [w]_P on every vertex of the closure box.
    pub values: Vec<f64>,
}

/// [w]_P(x) = w(z̄(◻_P(x))). `w` is given on `domain.cluster`, in its order.
pub fn coarsen(domain: &CubeDomain, w: &[f64]) -> Result<CoarseFunction> {
    if w.len() != domain.cluster.len() {
        return invalid("function length does not match the cluster");
    }
    let mut per_elem = Vec::with_capacity(domain.elements.len());
    for (e, a) in domain.elements.iter().zip(&domain.anchors) {
        let a = a.ok_or_else(|| Error::Invalid(format!("no anchor in cube {:?}", e)))?;
        let k = domain
            .cluster
            .binary_search(&a)
            .map_err(|_| Error::Invalid(format!("anchor {:?} lies off the cluster", a)))?;
        per_elem.push(w[k]);
    }
    let values = domain.element_map().into_iter().map(|k| per_elem[k as usize]).collect();
    Ok(CoarseFunction { cluster: domain.cluster.clone(), base: w.to_vec(), bx: domain.closure, values })
}

impl CoarseFunction {
    pub fn at(&self, x: &Point) -> f64 {
        self.values[self.bx.local_index(x)]
    }

    /// ∇[w]_P on the edges of the closure box.
    pub fn gradient(&self) -> VectorField {
        VectorField::gradient(self.bx, &self.values)
    }

    /// ⟨q, ∇[w]_P⟩ over the closure.
    pub fn pairing(&self, q: [f64; 3]) -> f64 {
        crate::solver::inner(&VectorField::constant(self.bx, q), &self.gradient())
    }
}

/// |∇w 1_{a≠0}|(x) for every cluster vertex: the edge star of x restricted to
/// open edges with both ends on the cluster.
pub fn cluster_gradient_mag(op: &ClusterOperator, w: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; op.n()];
    for &(i, j, _) in &op.edges {
        let g = (w[i as usize] - w[j as usize]).powi(2);
        s[i as usize] += g;
        s[j as usize] += g;
    }
    s.into_iter().map(|v| (0.5 * v).sqrt()).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathBoundReport {
    pub checked: usize,
    /// Instances where an in-region path existed and the bound still failed.
    pub violations: usize,
    /// Instances with no path inside the allowed region (bound not claimed).
    pub no_path: usize,
    /// Largest lhs − rhs over checked instances with a path.
    pub max_excess: f64,
}

/// BFS over open cluster edges restricted to vertices accepted by `allowed`.
fn connected_within(op: &ClusterOperator, adj: &[Vec<usize>], from: usize, to: usize, allowed: impl Fn(&Point) -> bool) -> bool {
    if from == to {
        return true;
    }
    let mut seen = vec![false; op.n()];
    let mut q = VecDeque::from([from]);
    seen[from] = true;
    while let Some(k) = q.pop_front() {
        for &j in &adj[k] {
            if !seen[j] && allowed(&op.points()[j]) {
                if j == to {
                    return true;
                }
                seen[j] = true;
                q.push_back(j);
            }
        }
    }
    false
}

fn adjacency(op: &ClusterOperator) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); op.n()];
    for &(i, j, _) in &op.edges {
        adj[i as usize].push(j as usize);
        adj[j as usize].push(i as usize);
    }
    adj
}

fn boxes_within_one(a: &TriadicCube, b: &TriadicCube) -> bool {
    a.bbox().dist_linf(&b.bbox()) <= 1
}

/// For every x ∈ C_*(U): |w(x) − [w]_P(x)| ≤ Σ over elements ◻ within distance 1
/// of ◻_P(x) of Σ_{◻ ∩ C_*(U)} |∇w 1_{a≠0}|. Claimed wherever x reaches its anchor
/// inside those elements.
pub fn check_coarse_pointwise<C: Conductance + ?Sized>(env: &C, domain: &CubeDomain, w: &[f64]) -> Result<PathBoundReport> {
    let cw = coarsen(domain, w)?;
    let op = ClusterOperator::assemble(env, &domain.cluster)?;
    let g = cluster_gradient_mag(&op, w);
    let adj = adjacency(&op);
    let mut elem_sum = vec![0.0; domain.elements.len()];
    for (k, x) in op.points().iter().enumerate() {
        if let Some(e) = domain.element_index(x) {
            elem_sum[e] += g[k];
        }
    }
    let mut rep = PathBoundReport::default();
    for (k, x) in op.points().iter().enumerate() {
        let e = domain.element_index(x).expect("cluster lies in the closure");
        let near: Vec<usize> =
            (0..domain.elements.len()).filter(|&f| boxes_within_one(&domain.elements[e], &domain.elements[f])).collect();
        let rhs: f64 = near.iter().map(|&f| elem_sum[f]).sum();
        let lhs = (w[k] - cw.at(x)).abs();
        rep.checked += 1;
        let a = op.index.get(&domain.anchors[e].unwrap()).unwrap();
        let allowed = |y: &Point| near.iter().any(|&f| domain.elements[f].contains(y));
        if !connected_within(&op, &adj, k, a, allowed) {
            rep.no_path += 1;
            continue;
        }
        rep.max_excess = rep.max_excess.max(lhs - rhs);
        if lhs > rhs * (1.0 + 1e-12) + 1e-12 {
            rep.violations += 1;
        }
    }
    Ok(rep)
}

/// For every closure edge joining two distinct elements:
/// |∇[w]_P| ≤ Σ_{(◻ ∪ ◻′) ∩ C_*(U)} |∇w 1_{a≠0}|, claimed when the two anchors
/// are joined inside ◻ ∪ ◻′.
pub fn check_interface_bound<C: Conductance + ?Sized>(env: &C, domain: &CubeDomain, w: &[f64]) -> Result<PathBoundReport> {
    let cw = coarsen(domain, w)?;
    let op = ClusterOperator::assemble(env, &domain.cluster)?;
    let g = cluster_gradient_mag(&op, w);
    let adj = adjacency(&op);
    let map = domain.element_map();
    let mut elem_sum = vec![0.0; domain.elements.len()];
    for (k, x) in op.points().iter().enumerate() {
        elem_sum[map[domain.closure.local_index(x)] as usize] += g[k];
    }
    let mut pairs: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let bx = domain.closure;
    for x in bx.iter() {
        for i in 0..bx.d {
            let mut y = x;
            y[i] += 1;
            if !bx.contains(&y) {
                continue;
            }
            let (a, b) = (map[bx.local_index(&x)], map[bx.local_index(&y)]);
            if a != b {
                let jump = (cw.at(&x) - cw.at(&y)).abs();
                let key = (a.min(b), a.max(b));
                let e = pairs.entry(key).or_insert(0.0);
                *e = e.max(jump);
            }
        }
    }
    let mut rep = PathBoundReport::default();
    for ((a, b), jump) in pairs {
        rep.checked += 1;
        let (ea, eb) = (domain.elements[a as usize], domain.elements[b as usize]);
        let za = op.index.get(&domain.anchors[a as usize].unwrap()).unwrap();
        let zb = op.index.get(&domain.anchors[b as usize].unwrap()).unwrap();
        if !connected_within(&op, &adj, za, zb, |y| ea.contains(y) || eb.contains(y)) {
            rep.no_path += 1;
            continue;
        }
        let rhs = elem_sum[a as usize] + elem_sum[b as usize];
        rep.max_excess = rep.max_excess.max(jump - rhs);
        if jump > rhs * (1.0 + 1e-12) + 1e-12 {
            rep.violations += 1;
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioReport {
    pub lhs: f64,
    pub rhs: f64,
    /// lhs / rhs, defined as 0 when both vanish.
    pub ratio: f64,
}

impl RatioReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        RatioReport { lhs, rhs, ratio }
    }
}

/// Sobolev conjugate s_* = sd/(s + d), defined for s ≥ d/(d−1).
pub fn lower_conjugate(s: f64, d: usize) -> Result<f64> {
    let d = d as f64;
    if !(s >= d / (d - 1.0)) || !s.is_finite() {
        return invalid(format!("exponent out of range: s = {s} must be at least d/(d-1)"));
    }
    Ok(s * d / (s + d))
}

/// Both sides of the cluster Sobolev inequality on a complete cube domain:
/// Σ_{C_*}|w − (w)|^s against (Σ_{◻′} size(◻′)^{sd} Σ_{◻′∩C_*} |∇w 1_{a≠0}|^{s_*})^{s/s_*}.
pub fn sobolev_check<C: Conductance + ?Sized>(env: &C, domain: &CubeDomain, w: &[f64], s: f64) -> Result<RatioReport> {
    let d = domain.cube.d;
    let s_low = lower_conjugate(s, d)?;
    if domain.cluster.is_empty() || w.len() != domain.cluster.len() {
        return invalid("function length does not match the cluster");
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let wc: Vec<f64> = w.iter().map(|x| x - mean).collect();
    let lhs: f64 = wc.iter().map(|x| x.abs().powf(s)).sum();
    let op = ClusterOperator::assemble(env, &domain.cluster)?;
    let g = cluster_gradient_mag(&op, &wc);
    let mut inner = 0.0;
    for (k, x) in op.points().iter().enumerate() {
        let e = domain.element_index(x).expect("cluster lies in the closure");
        inner += (domain.elements[e].size() as f64).powf(s * d as f64) * g[k].powf(s_low);
    }
    Ok(RatioReport::new(lhs, inner.powf(s / s_low)))
}

/// Caccioppoli diagnostic for u given on the operator's vertices:
/// λ·size(inner)²·avg_{inner}|∇u 1_{a≠0}|² / inf_c avg_{outer}|u − c|².
pub fn caccioppoli_ratio(op: &ClusterOperator, u: &[f64], inner: &IBox, outer: &IBox, lambda: f64) -> RatioReport {
    let g = cluster_gradient_mag(op, u);
    let mut num = 0.0;
    let (mut s1, mut s2, mut cnt) = (0.0, 0.0, 0usize);
    for (k, x) in op.points().iter().enumerate() {
        if inner.contains(x) {
            num += g[k] * g[k];
        }
        if outer.contains(x) {
            s1 += u[k];
            s2 += u[k] * u[k];
            cnt += 1;
        }
    }
    let side = inner.side(0) as f64;
    let lhs = lambda * side * side * num / inner.len() as f64;
    let var = if cnt == 0 { 0.0 } else { (s2 - s1 * s1 / cnt as f64).max(0.0) };
    RatioReport::new(lhs, var / outer.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoincareReport {
    pub lhs: f64,
    /// Constant-free bracket: gradient term plus the scale sums.
    pub rhs: f64,
    pub ratio: f64,
    /// 3^n ‖∇u‖ and the k-th scale term, k = n..m−1.
    pub gradient_term: f64,
    pub scale_terms: Vec<f64>,
}

/// Discrete multiscale Poincaré on the window box for u in window index order:
/// ‖u − (u)‖ against 3^n‖∇u‖ + Σ_{k=n}^{m−1} 3^k (avg_y |⟨∇u⟩_{y+◻_k}/|◻_k||²)^{1/2},
/// all norms normalized by volume, y over the level-k subcubes.
pub fn multiscale_poincare(u: &[f64], window: &Window, n: u32) -> Result<PoincareReport> {
    let m = window.m;
    if 2 * n < m || n > m {
        return invalid(format!("scale n = {n} must satisfy m/2 <= n <= m (m = {m})"));
    }
    let bx = window.bbox();
    if u.len() != bx.len() {
        return invalid("function length does not match the window");
    }
    let d = window.d;
    let vol = bx.len() as f64;
    let mean = u.iter().sum::<f64>() / vol;
    let lhs = (u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vol).sqrt();
    let field = VectorField::gradient(bx, u);
    let grad = (bx.iter().map(|x| mag(&field, &x).powi(2)).sum::<f64>() / vol).sqrt();
    let gradient_term = pow3(n) as f64 * grad;
    let mut scale_terms = Vec::new();
    for k in n..m {
        let cubes = window.cube().subcubes(k);
        let mut acc = 0.0;
        for c in &cubes {
            let cb = c.bbox();
            let mut avg = [0.0f64; 3];
            for x in cb.iter() {
                let idx = bx.local_index(&x);
                for (i, a) in avg.iter_mut().enumerate().take(d) {
                    if x[i] < cb.hi[i] {
                        *a += 2.0 * field.vals[idx][i];
                    }
                }
            }
            let vk = cb.len() as f64;
            acc += avg.iter().map(|a| (a / vk).powi(2)).sum::<f64>();
        }
        scale_terms.push(pow3(k) as f64 * (acc / cubes.len() as f64).sqrt());
    }
    let rhs = gradient_term + scale_terms.iter().sum::<f64>();
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(PoincareReport { lhs, rhs, ratio, gradient_term, scale_terms })
}
