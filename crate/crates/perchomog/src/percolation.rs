//! Conductance environments, cluster labeling and the crossing / well-connected /
//! good-cube predicates.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::lattice::{add, pow3, Conductance, IBox, Point, TriadicCube, Window, MAX_LEVEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LawKind {
    BernoulliUnit,
    TwoPoint,
    UniformInterval,
}

impl LawKind {
    pub fn code(self) -> u8 {
        match self {
            LawKind::BernoulliUnit => 0,
            LawKind::TwoPoint => 1,
            LawKind::UniformInterval => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(LawKind::BernoulliUnit),
            1 => Ok(LawKind::TwoPoint),
            2 => Ok(LawKind::UniformInterval),
            _ => invalid(format!("unknown law code {c}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LawKind::BernoulliUnit => "bernoulli_unit",
            LawKind::TwoPoint => "two_point",
            LawKind::UniformInterval => "uniform_interval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bernoulli_unit" => Ok(LawKind::BernoulliUnit),
            "two_point" => Ok(LawKind::TwoPoint),
            "uniform_interval" => Ok(LawKind::UniformInterval),
            _ => invalid(format!("unknown law kind '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConductanceLaw {
    pub kind: LawKind,
    /// Probability that an edge is open.
    pub p: f64,
    /// Ellipticity floor: open values lie in [λ, 1].
    pub lambda: f64,
}

impl ConductanceLaw {
    pub fn new(kind: LawKind, p: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("p must lie in [0,1], got {p}"));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return invalid(format!("lambda must lie in (0,1], got {lambda}"));
        }
        Ok(ConductanceLaw { kind, p, lambda })
    }

    pub fn bernoulli(p: f64) -> Self {
        ConductanceLaw { kind: LawKind::BernoulliUnit, p, lambda: 1.0 }
    }

    /// Value of an edge given two independent 64-bit draws.
    fn value(&self, u1: u64, u2: u64) -> f32 {
        if unit_f64(u1) >= self.p {
            return 0.0;
        }
        let floor = self.lambda as f32;
        match self.kind {
            LawKind::BernoulliUnit => 1.0,
            LawKind::TwoPoint => {
                if u2 >> 63 == 0 {
                    floor
                } else {
                    1.0
                }
            }
            LawKind::UniformInterval => {
                let v = self.lambda + (1.0 - self.lambda) * unit_f64(u2);
                (v as f32).clamp(floor, 1.0)
            }
        }
    }
}

fn unit_f64(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Index of `x` in the reference lattice ◻_12(0); shared by every window so that
/// nested windows see the same edge values.
fn reference_index(d: usize, x: &Point) -> u64 {
    let l = pow3(MAX_LEVEL) as u64;
    let h = (pow3(MAX_LEVEL) - 1) / 2;
    (0..d).fold(0u64, |acc, i| acc * l + (x[i] + h) as u64)
}

/// Conductance field on the edges of a window.
#[derive(Clone, Debug)]
pub struct Environment {
    pub window: Window,
    pub law: ConductanceLaw,
    pub master_seed: u64,
    pub env_index: u64,
    /// `values[i][index(x)]` is the conductance of {x, x+e_i}; NaN when the edge
    /// leaves the window.
    pub values: Vec<Vec<f32>>,
}

impl Environment {
    /// Sample i.i.d. conductances. Edge e draws its two words from a ChaCha8
    /// stream keyed by (seed, env_index), stream = direction, word position =
    /// 4·(reference index of the base vertex), so values depend on nothing else.
    pub fn sample(law: ConductanceLaw, window: Window, master_seed: u64, env_index: u64) -> Self {
        let d = window.d;
        let l = window.side() as usize;
        let bx = window.bbox();
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&env_index.to_le_bytes());
        let values = (0..d)
            .map(|dir| {
                let mut v = vec![0f32; window.n_vertices()];
                v.par_chunks_mut(l).enumerate().for_each(|(row, chunk)| {
                    let start = bx.point(row * l);
                    let mut rng = ChaCha8Rng::from_seed(key);
                    rng.set_stream(dir as u64);
                    rng.set_word_pos(4 * reference_index(d, &start) as u128);
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        let u1 = rng.next_u64();
                        let u2 = rng.next_u64();
                        let mut x = start;
                        x[d - 1] += k as i64;
                        *slot = if x[dir] == bx.hi[dir] { f32::NAN } else { law.value(u1, u2) };
                    }
                });
                v
            })
            .collect();
        Environment { window, law, master_seed, env_index, values }
    }

    /// Environment with every in-window edge set by `f(x, i)`.
    pub fn from_fn(window: Window, law: ConductanceLaw, f: impl Fn(Point, usize) -> f32) -> Self {
        let bx = window.bbox();
        let values = (0..window.d)
            .map(|dir| {
                (0..window.n_vertices())
                    .map(|k| {
                        let x = bx.point(k);
                        if x[dir] == bx.hi[dir] {
                            f32::NAN
                        } else {
                            f(x, dir)
                        }
                    })
                    .collect()
            })
            .collect();
        Environment { window, law, master_seed: 0, env_index: 0, values }
    }

    pub fn constant(window: Window, value: f32) -> Self {
        let law = if value > 0.0 { ConductanceLaw::bernoulli(1.0) } else { ConductanceLaw::bernoulli(0.0) };
        Self::from_fn(window, law, |_, _| value)
    }

    pub fn d(&self) -> usize {
        self.window.d
    }

    /// Set the conductance of {x, x+e_i}; ignored for edges outside the window.
    pub fn set(&mut self, x: Point, i: usize, value: f32) {
        let mut y = x;
        y[i] += 1;
        if self.window.contains(&x) && self.window.contains(&y) {
            let k = self.window.index(&x);
            self.values[i][k] = value;
        }
    }

    pub fn is_open(&self, x: Point, i: usize) -> bool {
        self.conductance(x, i) > 0.0
    }

    pub fn open_fraction(&self) -> f64 {
        let mut open = 0usize;
        let mut total = 0usize;
        for v in &self.values {
            for &a in v {
                if !a.is_nan() {
                    total += 1;
                    if a > 0.0 {
                        open += 1;
                    }
                }
            }
        }
        open as f64 / total.max(1) as f64
    }

    /// Copy of the environment restricted to a smaller origin-centred window.
    pub fn restrict(&self, window: Window) -> Result<Environment> {
        if window.d != self.d() || window.m > self.window.m {
            return invalid("restriction window must be a sub-window");
        }
        let mut e = Environment::from_fn(window, self.law, |x, i| self.conductance(x, i) as f32);
        e.master_seed = self.master_seed;
        e.env_index = self.env_index;
        Ok(e)
    }

    /// The edges of a cube, translated so the cube becomes the origin window.
    pub fn localize(&self, cube: &TriadicCube) -> Result<Environment> {
        if !self.window.bbox().contains_box(&cube.bbox()) {
            return invalid("cube must lie inside the window");
        }
        let w = Window::new(self.d(), cube.level)?;
        let z = cube.center;
        let mut e = Environment::from_fn(w, self.law, |x, i| self.conductance(add(x, z), i) as f32);
        e.master_seed = self.master_seed;
        e.env_index = self.env_index;
        Ok(e)
    }
}

impl Conductance for Environment {
    fn dim(&self) -> usize {
        self.window.d
    }

    fn conductance(&self, x: Point, i: usize) -> f64 {
        if !self.window.contains(&x) {
            return 0.0;
        }
        let a = self.values[i][self.window.index(&x)];
        if a.is_nan() {
            0.0
        } else {
            a as f64
        }
    }
}

/// Open-edge bitmask of a box: bit i of `open[k]` says edge {x, x+e_i} is open
/// and lies inside the box.
pub struct LocalGraph {
    pub bx: IBox,
    pub open: Vec<u8>,
    pub strides: [usize; 3],
}

impl LocalGraph {
    pub fn new<C: Conductance + ?Sized>(env: &C, bx: IBox) -> Self {
        let d = bx.d;
        let strides = bx.strides();
        let open = bx
            .iter()
            .map(|x| {
                let mut bits = 0u8;
                for i in 0..d {
                    if x[i] < bx.hi[i] && env.conductance(x, i) > 0.0 {
                        bits |= 1 << i;
                    }
                }
                bits
            })
            .collect();
        LocalGraph { bx, open, strides }
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Union keeping the smaller index as root, so roots are minimal members.
fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}

pub const NO_LABEL: u32 = u32::MAX;

/// Connected components of the open subgraph inside a box (optionally masked).
/// A cluster's label is the local index of its lexicographically minimal vertex.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    pub bx: IBox,
    label: Vec<u32>,
    size: Vec<u32>,
}

impl ClusterLabeling {
    pub fn label_of(&self, x: &Point) -> Option<u32> {
        if !self.bx.contains(x) {
            return None;
        }
        let l = self.label[self.bx.local_index(x)];
        (l != NO_LABEL).then_some(l)
    }

    pub fn label_at(&self, k: usize) -> u32 {
        self.label[k]
    }

    pub fn size_of(&self, label: u32) -> usize {
        self.size[label as usize] as usize
    }

    /// The lexicographically minimal vertex of a cluster.
    pub fn representative(&self, label: u32) -> Point {
        self.bx.point(label as usize)
    }

    pub fn labels(&self) -> Vec<u32> {
        (0..self.label.len() as u32).filter(|&k| self.label[k as usize] == k).collect()
    }

    pub fn members(&self, label: u32) -> Vec<Point> {
        (0..self.label.len()).filter(|&k| self.label[k] == label).map(|k| self.bx.point(k)).collect()
    }

    /// Largest cluster, ties broken by the lexicographically minimal label.
    pub fn largest(&self) -> Option<u32> {
        self.labels().into_iter().max_by(|&a, &b| self.size_of(a).cmp(&self.size_of(b)).then(b.cmp(&a)))
    }

    pub fn same_cluster(&self, x: &Point, y: &Point) -> bool {
        matches!((self.label_of(x), self.label_of(y)), (Some(a), Some(b)) if a == b)
    }

    /// Bitmask of the 2d faces of the box each cluster touches (bit 2i: x_i = lo_i,
    /// bit 2i+1: x_i = hi_i), indexed by label.
    pub fn face_masks(&self) -> Vec<u8> {
        let bx = self.bx;
        let mut masks = vec![0u8; self.label.len()];
        for (k, &l) in self.label.iter().enumerate() {
            if l == NO_LABEL {
                continue;
            }
            let x = bx.point(k);
            let mut m = 0u8;
            for i in 0..bx.d {
                if x[i] == bx.lo[i] {
                    m |= 1 << (2 * i);
                }
                if x[i] == bx.hi[i] {
                    m |= 1 << (2 * i + 1);
                }
            }
            masks[l as usize] |= m;
        }
        masks
    }
}

pub fn label_graph(g: &LocalGraph, mask: Option<&[bool]>) -> ClusterLabeling {
    let bx = g.bx;
    let n = bx.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    for k in 0..n {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let bits = g.open[k];
        for i in 0..bx.d {
            if bits & (1 << i) != 0 {
                let j = k + g.strides[i];
                if mask.is_none_or(|m| m[j]) {
                    union(&mut parent, k as u32, j as u32);
                }
            }
        }
    }
    let mut label = vec![NO_LABEL; n];
    let mut size = vec![0u32; n];
    for k in 0..n {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let r = find(&mut parent, k as u32);
        label[k] = r;
        size[r as usize] += 1;
    }
    ClusterLabeling { bx, label, size }
}

/// Union-find labeling of open clusters with both edge endpoints in the region.
pub fn label_clusters<C: Conductance + ?Sized>(env: &C, bx: IBox, mask: Option<&[bool]>) -> ClusterLabeling {
    label_graph(&LocalGraph::new(env, bx), mask)
}

fn full_faces(d: usize) -> u8 {
    ((1u16 << (2 * d)) - 1) as u8
}

/// True when every pair of opposite faces is joined by an open path inside the box.
pub fn is_crossable<C: Conductance + ?Sized>(env: &C, bx: IBox) -> bool {
    crossable_from_labels(&label_clusters(env, bx, None))
}

fn crossable_from_labels(lab: &ClusterLabeling) -> bool {
    let masks = lab.face_masks();
    (0..lab.bx.d).all(|i| {
        let both = 0b11u8 << (2 * i);
        lab.labels().iter().any(|&l| masks[l as usize] & both == both)
    })
}

/// Maximal cluster inside the box touching all 2d faces; ties go to the
/// lexicographically minimal label.
pub fn crossing_cluster_label(lab: &ClusterLabeling) -> Option<u32> {
    let masks = lab.face_masks();
    let all = full_faces(lab.bx.d);
    lab.labels()
        .into_iter()
        .filter(|&l| masks[l as usize] == all)
        .max_by(|&a, &b| lab.size_of(a).cmp(&lab.size_of(b)).then(b.cmp(&a)))
}

/// The maximal crossing cluster of a box as a sorted vertex list.
pub fn crossing_cluster<C: Conductance + ?Sized>(env: &C, bx: IBox) -> Option<Vec<Point>> {
    let lab = label_clusters(env, bx, None);
    crossing_cluster_label(&lab).map(|l| lab.members(l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Exact,
    Strided,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Strided => "strided",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "strided" => Ok(Mode::Strided),
            _ => invalid(format!("unknown mode '{s}' (expected exact or strided)")),
        }
    }
}

/// Exact enumeration is only allowed up to this cube size.
pub const EXACT_MAX_SIZE: i64 = 27;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Witness {
    NoCrossingCluster,
    NotCrossable(IBox),
    /// A component of diameter ≥ size/10 inside `test_box` missing the crossing
    /// cluster; `vertex` is its minimal vertex.
    Detached { test_box: IBox, vertex: Point },
    /// A successor that is not well-connected.
    BadSuccessor(TriadicCube),
    TooSmall,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoodnessVerdict {
    pub cube: TriadicCube,
    pub well_connected: bool,
    pub good: bool,
    pub mode: Mode,
    pub witness: Option<Witness>,
}

/// Side lengths of the test cubes for a cube of side `size`.
pub fn test_sides(size: i64, mode: Mode) -> Vec<i64> {
    let lo = (size + 9) / 10;
    let hi = size / 2;
    match mode {
        Mode::Exact => (lo..=hi).collect(),
        Mode::Strided => {
            let mut v = Vec::new();
            let mut s = lo;
            while s <= hi {
                v.push(s);
                s *= 2;
            }
            v
        }
    }
}

/// Offsets along one axis for test cubes of side `s` inside [lo, hi] meeting
/// the ¾-cube [c − h, c + h].
pub fn test_offsets(lo: i64, hi: i64, c: i64, h: i64, s: i64, mode: Mode) -> Vec<i64> {
    let amin = lo.max(c - h - s + 1);
    let amax = (hi - s + 1).min(c + h);
    if amin > amax {
        return Vec::new();
    }
    match mode {
        Mode::Exact => (amin..=amax).collect(),
        Mode::Strided => {
            let step = (s + 1) / 2;
            let mut v: Vec<i64> = (0..).map(|k| amin + k * step).take_while(|&a| a <= amax).collect();
            if *v.last().unwrap() != amax {
                v.push(amax);
            }
            v
        }
    }
}

/// Half-width of ¾◻: the lattice points of the open cube of side ¾·size.
pub fn three_quarter_half(size: i64) -> i64 {
    (3 * size - 1) / 8
}

/// Effective mode: exact enumeration falls back to strided above size 27.
pub fn effective_mode(size: i64, mode: Mode) -> Mode {
    if mode == Mode::Exact && size <= EXACT_MAX_SIZE {
        Mode::Exact
    } else {
        Mode::Strided
    }
}

/// Scratch buffers reused across test boxes.
struct Scratch {
    parent: Vec<u32>,
    faces: Vec<u8>,
    hits: Vec<bool>,
    bmin: Vec<[i64; 3]>,
    bmax: Vec<[i64; 3]>,
}

/// Check conditions (i) and (ii) on one test box; returns a witness on failure.
fn check_test_box(
    g: &LocalGraph,
    lab: &ClusterLabeling,
    c_label: u32,
    tb: IBox,
    size: i64,
    sc: &mut Scratch,
) -> Option<Witness> {
    let d = g.bx.d;
    let n = tb.len();
    if n == 1 {
        return None;
    }
    let ts = tb.strides();
    sc.parent.clear();
    sc.parent.extend(0..n as u32);
    let base = g.bx.local_index(&tb.lo);
    // walk the test box, mapping local test indices to graph indices
    let mut gidx = vec![0usize; 0];
    gidx.reserve(n);
    for k in 0..n {
        let mut rem = k;
        let mut off = base;
        for i in 0..d {
            let c = rem / ts[i];
            rem %= ts[i];
            off += c * g.strides[i];
        }
        gidx.push(off);
    }
    for k in 0..n {
        let bits = g.open[gidx[k]];
        let x = tb.point(k);
        for i in 0..d {
            if bits & (1 << i) != 0 && x[i] < tb.hi[i] {
                union(&mut sc.parent, k as u32, (k + ts[i]) as u32);
            }
        }
    }
    sc.faces.clear();
    sc.faces.resize(n, 0);
    sc.hits.clear();
    sc.hits.resize(n, false);
    sc.bmin.clear();
    sc.bmin.resize(n, [i64::MAX; 3]);
    sc.bmax.clear();
    sc.bmax.resize(n, [i64::MIN; 3]);
    for k in 0..n {
        let r = find(&mut sc.parent, k as u32) as usize;
        let x = tb.point(k);
        let mut m = 0u8;
        for i in 0..d {
            if x[i] == tb.lo[i] {
                m |= 1 << (2 * i);
            }
            if x[i] == tb.hi[i] {
                m |= 1 << (2 * i + 1);
            }
            sc.bmin[r][i] = sc.bmin[r][i].min(x[i]);
            sc.bmax[r][i] = sc.bmax[r][i].max(x[i]);
        }
        sc.faces[r] |= m;
        if lab.label_at(gidx[k]) == c_label {
            sc.hits[r] = true;
        }
    }
    for i in 0..d {
        let both = 0b11u8 << (2 * i);
        if !(0..n).any(|r| sc.parent[r] == r as u32 && sc.faces[r] & both == both) {
            return Some(Witness::NotCrossable(tb));
        }
    }
    for r in 0..n {
        if sc.parent[r] != r as u32 || sc.hits[r] {
            continue;
        }
        let diam = (0..d).map(|i| sc.bmax[r][i] - sc.bmin[r][i]).max().unwrap_or(0);
        if 10 * diam >= size {
            return Some(Witness::Detached { test_box: tb, vertex: tb.point(r) });
        }
    }
    None
}

/// Conditions (i)–(ii) of well-connectedness. Size-1 cubes are trivially
/// well-connected (their only test cube is a single vertex).
pub fn is_well_connected<C: Conductance + ?Sized>(env: &C, cube: &TriadicCube, mode: Mode) -> GoodnessVerdict {
    let size = cube.size();
    let mode = effective_mode(size, mode);
    let mut verdict = GoodnessVerdict { cube: *cube, well_connected: true, good: false, mode, witness: None };
    if size == 1 {
        return verdict;
    }
    let bx = cube.bbox();
    let g = LocalGraph::new(env, bx);
    let lab = label_graph(&g, None);
    let Some(c_label) = crossing_cluster_label(&lab) else {
        verdict.well_connected = false;
        verdict.witness = Some(Witness::NoCrossingCluster);
        return verdict;
    };
    let h = three_quarter_half(size);
    let d = cube.d;
    let mut sc = Scratch { parent: Vec::new(), faces: Vec::new(), hits: Vec::new(), bmin: Vec::new(), bmax: Vec::new() };
    for s in test_sides(size, mode) {
        if s == 1 {
            continue;
        }
        let offs: Vec<Vec<i64>> =
            (0..d).map(|i| test_offsets(bx.lo[i], bx.hi[i], cube.center[i], h, s, mode)).collect();
        let counts: Vec<usize> = offs.iter().map(|o| o.len()).collect();
        let total: usize = counts.iter().product();
        for mut t in 0..total {
            let mut lo = [0i64; 3];
            for i in (0..d).rev() {
                lo[i] = offs[i][t % counts[i]];
                t /= counts[i];
            }
            let mut hi = lo;
            for v in hi.iter_mut().take(d) {
                *v += s - 1;
            }
            let tb = IBox::new(d, lo, hi);
            if let Some(w) = check_test_box(&g, &lab, c_label, tb, size, &mut sc) {
                verdict.well_connected = false;
                verdict.witness = Some(w);
                return verdict;
            }
        }
    }
    verdict
}

/// Good = size ≥ 3, well-connected, and all 3^d successors well-connected.
pub fn is_good_cube<C: Conductance + ?Sized>(env: &C, cube: &TriadicCube, mode: Mode) -> GoodnessVerdict {
    let mut v = is_well_connected(env, cube, mode);
    if cube.level == 0 {
        v.good = false;
        v.witness = Some(Witness::TooSmall);
        return v;
    }
    if !v.well_connected {
        return v;
    }
    for s in cube.successors().expect("level ≥ 1") {
        if !is_well_connected(env, &s, mode).well_connected {
            v.witness = Some(Witness::BadSuccessor(s));
            return v;
        }
    }
    v.good = true;
    v
}

/// Which notion of good cube the partition oracle uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GoodnessRule {
    /// Crossability and absorption on the full test-cube family.
    Strict,
    /// Only the existence of a crossing cluster.
    Crossing,
}

impl GoodnessRule {
    pub fn name(self) -> &'static str {
        match self {
            GoodnessRule::Strict => "strict",
            GoodnessRule::Crossing => "crossing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(GoodnessRule::Strict),
            "crossing" => Ok(GoodnessRule::Crossing),
            _ => invalid(format!("unknown goodness rule '{s}' (expected strict or crossing)")),
        }
    }
}

/// Crossing rule: size ≥ 3 and a crossing cluster exists.
pub fn is_good_crossing<C: Conductance + ?Sized>(env: &C, cube: &TriadicCube) -> GoodnessVerdict {
    let mut v = GoodnessVerdict { cube: *cube, well_connected: false, good: false, mode: Mode::Exact, witness: None };
    if cube.level == 0 {
        v.witness = Some(Witness::TooSmall);
        return v;
    }
    if crossing_cluster_label(&label_clusters(env, cube.bbox(), None)).is_none() {
        v.witness = Some(Witness::NoCrossingCluster);
        return v;
    }
    v.well_connected = true;
    v.good = true;
    v
}

pub fn is_good<C: Conductance + ?Sized>(env: &C, cube: &TriadicCube, rule: GoodnessRule, mode: Mode) -> GoodnessVerdict {
    match rule {
        GoodnessRule::Strict => is_good_cube(env, cube, mode),
        GoodnessRule::Crossing => is_good_crossing(env, cube),
    }
}

/// The maximal crossing cluster of a good cube; empty for bad cubes.
pub fn cluster_c_star<C: Conductance + ?Sized>(
    env: &C,
    cube: &TriadicCube,
    rule: GoodnessRule,
    mode: Mode,
) -> Vec<Point> {
    if !is_good(env, cube, rule, mode).good {
        return Vec::new();
    }
    crossing_cluster(env, cube.bbox()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{a_boundary, boundary_vertices};

    fn win(m: u32) -> Window {
        Window::new(2, m).unwrap()
    }

    #[test]
    fn extreme_laws() {
        let w = win(3);
        let full = Environment::sample(ConductanceLaw::bernoulli(1.0), w, 7, 0);
        assert!(w.edges().all(|e| full.conductance(e.base, e.dir) == 1.0));
        let empty = Environment::sample(ConductanceLaw::bernoulli(0.0), w, 7, 0);
        assert!(w.edges().all(|e| empty.conductance(e.base, e.dir) == 0.0));
    }

    #[test]
    fn values_respect_law_support() {
        let w = win(3);
        for kind in [LawKind::BernoulliUnit, LawKind::TwoPoint, LawKind::UniformInterval] {
            let law = ConductanceLaw::new(kind, 0.6, 0.3).unwrap();
            let env = Environment::sample(law, w, 1, 2);
            for e in w.edges() {
                let a = env.values[e.dir][w.index(&e.base)];
                assert!(a == 0.0 || (a >= 0.3f32 && a <= 1.0), "{a}");
                if kind == LawKind::TwoPoint {
                    assert!(a == 0.0 || a == 0.3f32 || a == 1.0);
                }
            }
        }
    }

    #[test]
    fn nested_windows_share_values() {
        let law = ConductanceLaw::new(LawKind::UniformInterval, 0.7, 0.2).unwrap();
        let small = Environment::sample(law, win(2), 11, 5);
        let big = Environment::sample(law, win(3), 11, 5);
        for e in win(2).edges() {
            assert_eq!(small.conductance(e.base, e.dir), big.conductance(e.base, e.dir));
        }
        let other = Environment::sample(law, win(2), 11, 6);
        assert!(win(2).edges().any(|e| small.conductance(e.base, e.dir) != other.conductance(e.base, e.dir)));
    }

    #[test]
    fn leaving_edges_are_nan() {
        let env = Environment::sample(ConductanceLaw::bernoulli(1.0), win(1), 0, 0);
        assert!(env.values[0][win(1).index(&[1, 0, 0])].is_nan());
        assert_eq!(env.conductance([1, 0, 0], 0), 0.0);
    }

    #[test]
    fn single_open_edge_cluster() {
        let w = win(2);
        let mut env = Environment::constant(w, 0.0);
        env.set([0, 0, 0], 0, 1.0);
        let lab = label_clusters(&env, w.bbox(), None);
        assert!(lab.same_cluster(&[0, 0, 0], &[1, 0, 0]));
        assert_eq!(lab.size_of(lab.label_of(&[0, 0, 0]).unwrap()), 2);
        assert_eq!(lab.labels().len(), 81 - 1);
        assert_eq!(lab.largest(), lab.label_of(&[0, 0, 0]));
    }

    #[test]
    fn full_lattice_one_cluster() {
        let w = win(2);
        let env = Environment::constant(w, 1.0);
        let lab = label_clusters(&env, w.bbox(), None);
        assert_eq!(lab.labels(), vec![0]);
        assert_eq!(lab.representative(0), [-4, -4, 0]);
    }

    #[test]
    fn crossing_examples() {
        let w = win(2);
        let full = Environment::constant(w, 1.0);
        let closed = Environment::constant(w, 0.0);
        let bx = TriadicCube::origin(2, 2).bbox();
        assert!(is_crossable(&full, bx));
        assert!(!is_crossable(&closed, bx));
        assert_eq!(crossing_cluster(&full, bx).unwrap().len(), 81);
        assert!(crossing_cluster(&closed, bx).is_none());
        // a straight path along axis 0 only
        let mut line = Environment::constant(w, 0.0);
        for x in -4..4 {
            line.set([x, 0, 0], 0, 1.0);
        }
        assert!(!is_crossable(&line, bx));
    }

    #[test]
    fn a_boundary_full_equals_boundary() {
        let env = Environment::constant(win(2), 1.0);
        let pts: Vec<Point> = TriadicCube::origin(2, 1).bbox().iter().collect();
        assert_eq!(a_boundary(&env, &pts), boundary_vertices(2, &pts));
    }

    #[test]
    fn offsets_strided_cover_ends() {
        let v = test_offsets(-13, 13, 0, three_quarter_half(27), 6, Mode::Strided);
        assert_eq!(*v.first().unwrap(), -13);
        assert_eq!(*v.last().unwrap(), 8);
        assert!(v.windows(2).all(|w| w[1] - w[0] <= 3));
        assert_eq!(test_sides(27, Mode::Strided), vec![3, 6, 12]);
        assert_eq!(test_sides(9, Mode::Exact), vec![1, 2, 3, 4]);
        assert_eq!(test_sides(3, Mode::Exact), vec![1]);
    }

    #[test]
    fn full_and_closed_goodness() {
        let w = win(4);
        let full = Environment::constant(w, 1.0);
        let closed = Environment::constant(w, 0.0);
        for n in 1..=3 {
            let c = TriadicCube::origin(2, n);
            assert!(is_good_cube(&full, &c, Mode::Strided).good);
            assert!(!is_well_connected(&closed, &c, Mode::Strided).well_connected);
        }
        assert!(!is_good_cube(&full, &TriadicCube::origin(2, 0), Mode::Exact).good);
        for n in 1..=3 {
            let c = TriadicCube::origin(2, n);
            assert!(is_good_crossing(&full, &c).good);
            assert!(!is_good_crossing(&closed, &c).good);
        }
        assert_eq!(cluster_c_star(&full, &TriadicCube::origin(2, 2), GoodnessRule::Strict, Mode::Exact).len(), 81);
        assert!(cluster_c_star(&closed, &TriadicCube::origin(2, 2), GoodnessRule::Crossing, Mode::Exact).is_empty());
    }
}
