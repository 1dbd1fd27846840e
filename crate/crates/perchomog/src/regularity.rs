//! Monte Carlo lower bounds for the reverse-Hölder and Meyers constants, and
//! the connectivity of clusters through neighbouring partition elements.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coarsen::{anchor, cluster_gradient_mag};
use crate::error::{invalid, Result};
use crate::lattice::{neighbors, Conductance, IBox, Point, TriadicCube};
use crate::partition::Partition;
use crate::percolation::{crossing_cluster_label, label_clusters};
use crate::solver::{solve_dirichlet, ClusterOperator, SolveOptions};

/// A smooth random function on a box: a random affine part plus a few
/// low-frequency cosines, scaled so that its mean squared gradient is one.
#[derive(Clone, Debug, PartialEq)]
pub struct LowFrequencyField {
    pub d: usize,
    pub half: f64,
    pub slope: [f64; 3],
    pub modes: Vec<([f64; 3], f64, f64)>,
    pub scale: f64,
}

impl LowFrequencyField {
    /// `bandwidth` bounds the integer wave numbers; `half` is the box half-width.
    pub fn new(d: usize, half: f64, bandwidth: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slope = [0.0; 3];
        for s in slope.iter_mut().take(d) {
            *s = rng.gen_range(-1.0..1.0);
        }
        let b = bandwidth.max(1) as i64;
        let mut modes = Vec::new();
        for _ in 0..(2 * d) {
            let mut k = [0.0; 3];
            for kk in k.iter_mut().take(d) {
                *kk = rng.gen_range(-b..=b) as f64;
            }
            let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let amp = rng.gen_range(-1.0..1.0) / norm;
            modes.push((k, amp, rng.gen_range(0.0..std::f64::consts::TAU)));
        }
        let mut f = LowFrequencyField { d, half: half.max(1.0), slope, modes, scale: 1.0 };
        // normalize the gradient on the continuum cube [-1,1]^d by sampling
        let n = 16usize;
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for idx in 0..n.pow(d as u32) {
            let mut y = [0.0; 3];
            let mut r = idx;
            for yi in y.iter_mut().take(d) {
                *yi = -1.0 + 2.0 * ((r % n) as f64 + 0.5) / n as f64;
                r /= n;
            }
            let g = f.unit_gradient(y);
            acc += g.iter().map(|x| x * x).sum::<f64>();
            cnt += 1.0;
        }
        f.scale = if acc > 0.0 { (cnt / acc).sqrt() } else { 1.0 };
        f
    }

    fn unit_value(&self, y: [f64; 3]) -> f64 {
        let mut v: f64 = (0..self.d).map(|i| self.slope[i] * y[i]).sum();
        for (k, a, ph) in &self.modes {
            let t: f64 = (0..self.d).map(|i| k[i] * y[i]).sum::<f64>() * std::f64::consts::PI;
            v += a * (t + ph).cos();
        }
        v
    }

    fn unit_gradient(&self, y: [f64; 3]) -> [f64; 3] {
        let mut g = self.slope;
        for (k, a, ph) in &self.modes {
            let t: f64 = (0..self.d).map(|i| k[i] * y[i]).sum::<f64>() * std::f64::consts::PI;
            for i in 0..self.d {
                g[i] -= a * std::f64::consts::PI * k[i] * (t + ph).sin();
            }
        }
        g
    }

    /// f(x) = R·g(x/R), so that gradients are of unit size at every scale.
    pub fn eval(&self, x: &Point) -> f64 {
        let mut y = [0.0; 3];
        for i in 0..self.d {
            y[i] = x[i] as f64 / self.half;
        }
        self.half * self.scale * self.unit_value(y)
    }
}

/// a-harmonic function on a vertex set given by Dirichlet data on `fixed`.
#[derive(Clone, Debug)]
pub struct HarmonicSample {
    pub op: ClusterOperator,
    pub u: Vec<f64>,
    pub fixed: Vec<bool>,
}

/// Harmonic extension of `g` from the vertices of `cluster` on the boundary of `bx`.
pub fn harmonic_on<C: Conductance + ?Sized>(
    env: &C,
    cluster: &[Point],
    bx: &IBox,
    g: impl Fn(&Point) -> f64,
    opts: SolveOptions,
) -> Result<HarmonicSample> {
    let op = ClusterOperator::assemble(env, cluster)?;
    let fixed: Vec<bool> = op.points().iter().map(|x| bx.on_boundary(x)).collect();
    if !fixed.iter().any(|&f| f) {
        return invalid("cluster does not reach the boundary");
    }
    let gv: Vec<f64> = op.points().iter().map(&g).collect();
    let sol = solve_dirichlet(&op, &fixed, &gv, opts)?;
    Ok(HarmonicSample { op, u: sol.u, fixed })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RatioKind {
    /// Reverse Hölder with exponent s > 1.
    ReverseHolder { s: f64 },
    /// Meyers improvement with exponent ε > 0.
    Meyers { eps: f64 },
}

impl RatioKind {
    pub fn name(&self) -> &'static str {
        match self {
            RatioKind::ReverseHolder { .. } => "RH",
            RatioKind::Meyers { .. } => "ME",
        }
    }

    pub fn exponent(&self) -> f64 {
        match *self {
            RatioKind::ReverseHolder { s } => s,
            RatioKind::Meyers { eps } => eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityRatioEstimate {
    pub cube: TriadicCube,
    pub kind: RatioKind,
    /// Running maximum of the ratio after each trial.
    pub history: Vec<f64>,
    pub estimate: f64,
    pub trials: usize,
    /// Trials skipped because both norms vanished.
    pub skipped: usize,
    pub no_cluster: bool,
}

/// Ratio of gradient norms for one function: numerator over C_*(◻) averaged
/// on |◻|, denominator over C_max(3◻) averaged on |3◻|.
pub fn regularity_ratio(
    op: &ClusterOperator,
    u: &[f64],
    inner_cluster: &[bool],
    inner_vol: f64,
    outer_vol: f64,
    d: usize,
    kind: RatioKind,
) -> Option<f64> {
    let g = cluster_gradient_mag(op, u);
    let (pn, pd) = match kind {
        RatioKind::ReverseHolder { s } => {
            let sp = s / (s - 1.0);
            let two_low = 2.0 * d as f64 / (d as f64 + 2.0);
            (2.0, sp * two_low)
        }
        RatioKind::Meyers { eps } => (2.0 + eps, 2.0),
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, gk) in g.iter().enumerate() {
        if inner_cluster[k] {
            num += gk.powf(pn);
        }
        den += gk.powf(pd);
    }
    let num = (num / inner_vol).powf(1.0 / pn);
    let den = (den / outer_vol).powf(1.0 / pd);
    if den <= 1e-300 {
        None
    } else {
        Some(num / den)
    }
}

/// Sample `trials` a-harmonic functions on C_max(3◻) with random smooth data on
/// its boundary and return the running maximum of the RH or ME ratio.
pub fn estimate_regularity_ratio<C: Conductance + ?Sized>(
    env: &C,
    cube: &TriadicCube,
    kind: RatioKind,
    trials: usize,
    seed: u64,
    opts: SolveOptions,
) -> Result<RegularityRatioEstimate> {
    match kind {
        RatioKind::ReverseHolder { s } if s <= 1.0 => return invalid("reverse Hölder exponent must exceed 1"),
        RatioKind::Meyers { eps } if eps <= 0.0 => return invalid("Meyers exponent must be positive"),
        _ => {}
    }
    let d = cube.d;
    let outer = cube.enlarged();
    let empty = RegularityRatioEstimate {
        cube: *cube,
        kind,
        history: Vec::new(),
        estimate: 0.0,
        trials,
        skipped: 0,
        no_cluster: true,
    };
    let outer_lab = label_clusters(env, outer, None);
    let Some(big) = outer_lab.largest() else { return Ok(empty) };
    let inner_lab = label_clusters(env, cube.bbox(), None);
    let Some(cs) = crossing_cluster_label(&inner_lab) else { return Ok(empty) };
    let cluster = outer_lab.members(big);
    let op = ClusterOperator::assemble(env, &cluster)?;
    let fixed: Vec<bool> = op.points().iter().map(|x| outer.on_boundary(x)).collect();
    if !fixed.iter().any(|&f| f) {
        return Ok(empty);
    }
    let inner_cluster: Vec<bool> = op.points().iter().map(|x| inner_lab.label_of(x) == Some(cs)).collect();
    let half = (outer.side(0) / 2) as f64;
    let mut best = 0.0f64;
    let mut history = Vec::with_capacity(trials);
    let mut skipped = 0;
    for t in 0..trials {
        let f = LowFrequencyField::new(d, half, 3, seed.wrapping_add(t as u64));
        let g: Vec<f64> = op.points().iter().map(|x| f.eval(x)).collect();
        let sol = solve_dirichlet(&op, &fixed, &g, opts)?;
        match regularity_ratio(&op, &sol.u, &inner_cluster, cube.vertex_count() as f64, outer.len() as f64, d, kind) {
            Some(r) => best = best.max(r),
            None => skipped += 1,
        }
        history.push(best);
    }
    Ok(RegularityRatioEstimate { cube: *cube, kind, history, estimate: best, trials, skipped, no_cluster: false })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathCheck {
    pub from: Point,
    pub to: Point,
    /// Number of distinct elements met by the straight lattice path.
    pub elements: usize,
    pub found: bool,
    /// An endpoint element has no anchor.
    pub unanchored: bool,
}

/// The coordinate staircase from x to y: first along e_1, then e_2, then e_3.
pub fn staircase(x: Point, y: Point, d: usize) -> Vec<Point> {
    let mut out = vec![x];
    let mut z = x;
    for i in 0..d {
        while z[i] != y[i] {
            z[i] += (y[i] - z[i]).signum();
            out.push(z);
        }
    }
    out
}

/// Is there an open path between the anchors of ◻_P(x) and ◻_P(y) inside the
/// union of the elements met by the staircase from x to y?
pub fn path_through_partition<C: Conductance + ?Sized>(
    env: &C,
    partition: &Partition,
    x: Point,
    y: Point,
) -> Result<PathCheck> {
    let d = partition.d();
    let mut elems: Vec<TriadicCube> = Vec::new();
    for z in staircase(x, y, d) {
        let Some(e) = partition.element_of(&z) else {
            return invalid(format!("vertex {:?} lies outside the partition", z));
        };
        if !elems.contains(&e) {
            elems.push(e);
        }
    }
    let (ex, ey) = (elems[0], *elems.last().unwrap());
    let (ax, ay) = match (anchor(env, &ex), anchor(env, &ey)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Ok(PathCheck { from: x, to: y, elements: elems.len(), found: false, unanchored: true }),
    };
    let inside = |p: &Point| elems.iter().any(|e| e.contains(p));
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = VecDeque::from([ax]);
    seen.insert(ax);
    let mut found = ax == ay;
    while let Some(p) = queue.pop_front() {
        if found {
            break;
        }
        for q in neighbors(d, p) {
            if !inside(&q) || seen.contains(&q) || env.conductance_between(p, q) <= 0.0 {
                continue;
            }
            if q == ay {
                found = true;
            }
            seen.insert(q);
            queue.push_back(q);
        }
    }
    Ok(PathCheck { from: x, to: y, elements: elems.len(), found, unanchored: false })
}
