//! Stopping-time partitions of a window into triadic cubes, the concrete
//! partitions P and Q, and the coarseness statistics Λ_t.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::{invalid, Result};
use crate::lattice::{pow3, Conductance, IBox, Point, TriadicCube, Window};
use crate::percolation::{is_good_crossing, is_well_connected, GoodnessRule, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OracleTag {
    P,
    Q,
    Custom,
}

impl OracleTag {
    pub fn name(self) -> &'static str {
        match self {
            OracleTag::P => "P",
            OracleTag::Q => "Q",
            OracleTag::Custom => "custom",
        }
    }
}

/// A good-cube predicate whose verdict on z + ◻_n depends only on the edges of
/// z + ◻_{n + radius}.
pub trait CubeOracle {
    fn good(&mut self, cube: &TriadicCube) -> bool;

    fn radius(&self) -> u32 {
        1
    }

    fn tag(&self) -> OracleTag {
        OracleTag::Custom
    }
}

/// Wraps a closure as a custom oracle.
pub struct FnOracle<F>(pub F);

impl<F: FnMut(&TriadicCube) -> bool> CubeOracle for FnOracle<F> {
    fn good(&mut self, cube: &TriadicCube) -> bool {
        (self.0)(cube)
    }
}

/// The good-cube oracle of partition P with memoized well-connectedness.
pub struct GoodCubeOracle<'a, C: ?Sized> {
    env: &'a C,
    pub rule: GoodnessRule,
    pub mode: Mode,
    wc: HashMap<TriadicCube, bool>,
    verdicts: HashMap<TriadicCube, bool>,
}

impl<'a, C: Conductance + ?Sized> GoodCubeOracle<'a, C> {
    pub fn new(env: &'a C, rule: GoodnessRule, mode: Mode) -> Self {
        GoodCubeOracle { env, rule, mode, wc: HashMap::new(), verdicts: HashMap::new() }
    }

    fn well_connected(&mut self, c: &TriadicCube) -> bool {
        if let Some(&v) = self.wc.get(c) {
            return v;
        }
        let v = is_well_connected(self.env, c, self.mode).well_connected;
        self.wc.insert(*c, v);
        v
    }
}

impl<C: Conductance + ?Sized> CubeOracle for GoodCubeOracle<'_, C> {
    fn good(&mut self, cube: &TriadicCube) -> bool {
        if let Some(&v) = self.verdicts.get(cube) {
            return v;
        }
        let v = cube.level >= 1
            && match self.rule {
                GoodnessRule::Crossing => is_good_crossing(self.env, cube).good,
                GoodnessRule::Strict => {
                    self.well_connected(cube)
                        && cube.successors().expect("level ≥ 1").iter().all(|s| self.well_connected(s))
                }
            };
        self.verdicts.insert(*cube, v);
        v
    }

    fn tag(&self) -> OracleTag {
        OracleTag::P
    }
}

/// A disjoint cover of `region` by triadic cubes (elements may extend past it).
#[derive(Clone, Debug)]
pub struct Partition {
    pub window: Window,
    pub region: IBox,
    pub tag: OracleTag,
    pub mode: Mode,
    pub rule: GoodnessRule,
    elements: Vec<TriadicCube>,
    leaf: Vec<u32>,
}

/// The level-(k+1) cubes reachable in one step of the K(◻) growth rule.
pub fn k_moves(cube: &TriadicCube) -> Vec<TriadicCube> {
    let d = cube.d;
    let b = cube.bbox();
    let mut parents = BTreeSet::new();
    for mask in 0..(1usize << d) {
        let mut corner = [0i64; 3];
        for i in 0..d {
            corner[i] = if mask >> i & 1 == 0 { b.lo[i] - 1 } else { b.hi[i] + 1 };
        }
        parents.insert(TriadicCube::containing(d, corner, cube.level + 2));
    }
    parents.into_iter().flat_map(|q| q.successors().expect("level ≥ 2")).collect()
}

/// K(◻) truncated to cubes of level ≤ m meeting the window.
pub fn k_closure(cube: &TriadicCube, window: &Window) -> BTreeSet<TriadicCube> {
    let wb = window.bbox();
    let mut seen = BTreeSet::from([*cube]);
    let mut queue = VecDeque::from([*cube]);
    while let Some(c) = queue.pop_front() {
        if c.level >= window.m {
            continue;
        }
        for n in k_moves(&c) {
            if n.bbox().intersects(&wb) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}

struct Builder<'o, O: ?Sized> {
    oracle: &'o mut O,
    window: Window,
    gloc: HashMap<TriadicCube, bool>,
    gbar: HashMap<TriadicCube, bool>,
}

impl<O: CubeOracle + ?Sized> Builder<'_, O> {
    /// G_loc: the oracle, or good by default when the verdict would read edges
    /// outside the window.
    fn gloc(&mut self, c: &TriadicCube) -> bool {
        if c.level >= self.window.m {
            return true;
        }
        let reach = IBox::centered(c.d, c.center, (pow3(c.level + self.oracle.radius()) - 1) / 2);
        if !self.window.bbox().contains_box(&reach) {
            return true;
        }
        if let Some(&v) = self.gloc.get(c) {
            return v;
        }
        let v = self.oracle.good(c);
        self.gloc.insert(*c, v);
        v
    }

    /// Ḡ = {◻ ∈ G_loc : K(◻) ⊆ G_loc}, by recursion over one-step moves.
    fn gbar(&mut self, c: &TriadicCube) -> bool {
        if c.level >= self.window.m {
            return true;
        }
        if let Some(&v) = self.gbar.get(c) {
            return v;
        }
        let v = self.gloc(c) && (c.level + 1 >= self.window.m || k_moves(c).iter().all(|n| self.gbar(n)));
        self.gbar.insert(*c, v);
        v
    }
}

/// Localized stopping-time construction over `region ⊆ window`.
pub fn build_partition<O: CubeOracle + ?Sized>(
    oracle: &mut O,
    window: Window,
    region: IBox,
) -> Result<Partition> {
    if oracle.radius() > window.m {
        return invalid("oracle radius exceeds window");
    }
    if !window.bbox().contains_box(&region) || region.is_empty() {
        return invalid("partition region must be a nonempty box inside the window");
    }
    let tag = oracle.tag();
    let mut b = Builder { oracle, window, gloc: HashMap::new(), gbar: HashMap::new() };
    let mut elements = Vec::new();
    let mut leaf = vec![u32::MAX; region.len()];
    let mut stack = vec![window.cube()];
    while let Some(c) = stack.pop() {
        let cb = c.bbox();
        if !cb.intersects(&region) {
            continue;
        }
        let element = if c.level == 0 || !b.gbar(&c) {
            Some(c)
        } else {
            let succ = c.successors()?;
            if succ.iter().any(|s| !b.gbar(s)) {
                Some(c)
            } else {
                stack.extend(succ.into_iter().rev());
                None
            }
        };
        match element {
            Some(e) if b.gbar(&e) || e.level == 0 => {
                let id = elements.len() as u32;
                elements.push(e);
                for x in cb.intersect(&region).iter() {
                    leaf[region.local_index(&x)] = id;
                }
            }
            Some(e) => {
                // an ancestor outside Ḡ: every vertex is its own element
                for x in e.bbox().intersect(&region).iter() {
                    let id = elements.len() as u32;
                    elements.push(TriadicCube::containing(e.d, x, 0));
                    leaf[region.local_index(&x)] = id;
                }
            }
            None => {}
        }
    }
    Ok(Partition { window, region, tag, mode: Mode::Exact, rule: GoodnessRule::Crossing, elements, leaf })
}

/// Partition P: the stopping-time construction applied to good cubes.
pub fn partition_p<C: Conductance + ?Sized>(
    env: &C,
    window: Window,
    region: IBox,
    rule: GoodnessRule,
    mode: Mode,
) -> Result<Partition> {
    let mut oracle = GoodCubeOracle::new(env, rule, mode);
    let mut p = build_partition(&mut oracle, window, region)?;
    p.mode = mode;
    p.rule = rule;
    Ok(p)
}

/// Exponent t₀ = 2d(d+2) of the Q criterion.
pub fn q_exponent(d: usize) -> u32 {
    (2 * d * (d + 2)) as u32
}

/// Threshold 4·3^{t₀}: four times the full-lattice value of Λ_{t₀}.
pub fn q_threshold(d: usize) -> f64 {
    4.0 * 3f64.powi(q_exponent(d) as i32)
}

/// Q-good: P-good and Λ_{t₀}(◻, P) ≤ τ_Q.
pub struct QOracle<'a, O: ?Sized> {
    pub p_oracle: &'a mut O,
    pub p: &'a Partition,
    pub t: u32,
    pub tau: f64,
}

impl<O: CubeOracle + ?Sized> CubeOracle for QOracle<'_, O> {
    fn good(&mut self, cube: &TriadicCube) -> bool {
        self.p_oracle.good(cube) && self.p.lambda_t(&cube.bbox(), self.t as f64) <= self.tau
    }

    fn tag(&self) -> OracleTag {
        OracleTag::Q
    }
}

/// Partition Q; `p` must cover the whole window.
pub fn partition_q<C: Conductance + ?Sized>(
    env: &C,
    p: &Partition,
    region: IBox,
    tau: f64,
) -> Result<Partition> {
    if p.region != p.window.bbox() {
        return invalid("partition Q needs P over the whole window");
    }
    let mut po = GoodCubeOracle::new(env, p.rule, p.mode);
    let mut q = QOracle { p_oracle: &mut po, p, t: q_exponent(p.window.d), tau };
    let mut out = build_partition(&mut q, p.window, region)?;
    out.mode = p.mode;
    out.rule = p.rule;
    Ok(out)
}

impl Partition {
    pub fn d(&self) -> usize {
        self.window.d
    }

    pub fn elements(&self) -> &[TriadicCube] {
        &self.elements
    }

    /// ◻_S(x), for x in the region.
    pub fn element_of(&self, x: &Point) -> Option<TriadicCube> {
        self.region.contains(x).then(|| self.elements[self.leaf[self.region.local_index(x)] as usize])
    }

    /// True when the cube is a union of elements (it contains the element of its centre).
    pub fn in_p_star(&self, cube: &TriadicCube) -> bool {
        self.element_of(&cube.center).is_some_and(|e| e.level <= cube.level)
    }

    /// Distinct elements meeting the box, sorted.
    pub fn closure_elements(&self, u: &IBox) -> Vec<TriadicCube> {
        let mut set = BTreeSet::new();
        for x in u.intersect(&self.region).iter() {
            set.insert(self.leaf[self.region.local_index(&x)]);
        }
        set.into_iter().map(|i| self.elements[i as usize]).collect()
    }

    /// cl_S(U) as a sorted vertex list.
    pub fn closure(&self, u: &IBox) -> Vec<Point> {
        let mut v: Vec<Point> = self.closure_elements(u).iter().flat_map(|e| e.bbox().iter()).collect();
        v.sort();
        v
    }

    /// Λ_t(U, S) = |U|^{-1} Σ_{x ∈ cl_S(U)} size(◻_S(x))^t.
    pub fn lambda_t(&self, u: &IBox, t: f64) -> f64 {
        let total: f64 = self
            .closure_elements(u)
            .iter()
            .map(|e| e.vertex_count() as f64 * (e.size() as f64).powf(t))
            .sum();
        total / u.len() as f64
    }

    /// Per-vertex element sizes over the region.
    pub fn sizes(&self) -> Vec<i64> {
        self.leaf.iter().map(|&i| self.elements[i as usize].size()).collect()
    }

    /// Cover, disjointness and the neighbour size-ratio property over the region.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let r = self.region;
        for (id, e) in self.elements.iter().enumerate() {
            for x in e.bbox().intersect(&r).iter() {
                if self.leaf[r.local_index(&x)] as usize != id {
                    return Err(format!("element {e:?} does not own {x:?}"));
                }
            }
        }
        if self.leaf.iter().any(|&l| l as usize >= self.elements.len()) {
            return Err("uncovered vertex".into());
        }
        let d = self.d();
        let offsets: Vec<Point> = IBox::centered(d, [0; 3], 1).iter().filter(|o| *o != [0; 3]).collect();
        for x in r.iter() {
            let ex = self.element_of(&x).unwrap();
            for o in &offsets {
                let y = [x[0] + o[0], x[1] + o[1], x[2] + o[2]];
                if let Some(ey) = self.element_of(&y) {
                    if ex.level.abs_diff(ey.level) > 1 {
                        return Err(format!("neighbouring elements {ex:?} and {ey:?} differ by more than a factor 3"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Largest origin-centred 3^m ≤ window with Λ_t(◻_m) > threshold, or 1.
pub fn minimal_scale(p: &Partition, t: f64, threshold: f64) -> i64 {
    (1..=p.window.m)
        .rev()
        .map(|m| TriadicCube::origin(p.d(), m))
        .find(|c| p.region.contains_box(&c.bbox()) && p.lambda_t(&c.bbox(), t) > threshold)
        .map_or(1, |c| c.size())
}

#[derive(Clone, Debug)]
pub struct CoarsenessStats {
    pub t: f64,
    pub threshold: f64,
    pub lambdas: Vec<f64>,
    pub minimal_scales: Vec<i64>,
}

/// Λ_t of the window cube and the minimal scale for each partition of an ensemble.
pub fn coarseness_stats(ensemble: &[Partition], t: f64, threshold: f64) -> Result<CoarsenessStats> {
    if ensemble.is_empty() {
        return invalid("empty partition ensemble");
    }
    Ok(CoarsenessStats {
        t,
        threshold,
        lambdas: ensemble.iter().map(|p| p.lambda_t(&p.region, t)).collect(),
        minimal_scales: ensemble.iter().map(|p| minimal_scale(p, t, threshold)).collect(),
    })
}
