//! Triadic cubes, windows, boxes and edge indexing on Z^d (d = 2 or 3).
//!
//! Points are stored as `[i64; 3]`; in two dimensions the last coordinate is
//! always zero.

use std::collections::HashSet;

use crate::error::{invalid, Result};

/// Largest admissible triadic level.
pub const MAX_LEVEL: u32 = 12;

pub type Point = [i64; 3];

pub fn pow3(n: u32) -> i64 {
    3i64.pow(n)
}

pub fn check_dim(d: usize) -> Result<()> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        invalid(format!("dimension must be 2 or 3, got {d}"))
    }
}

/// Unit vector e_i.
pub fn unit(i: usize) -> Point {
    let mut e = [0; 3];
    e[i] = 1;
    e
}

pub fn add(x: Point, y: Point) -> Point {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

pub fn sub(x: Point, y: Point) -> Point {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
}

pub fn linf(x: Point, y: Point) -> i64 {
    (0..3).map(|i| (x[i] - y[i]).abs()).max().unwrap_or(0)
}

/// The 2d nearest neighbours of `x`.
pub fn neighbors(d: usize, x: Point) -> impl Iterator<Item = Point> {
    (0..2 * d).map(move |k| {
        let mut y = x;
        if k % 2 == 0 {
            y[k / 2] += 1;
        } else {
            y[k / 2] -= 1;
        }
        y
    })
}

/// Axis-aligned box of lattice points, bounds inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IBox {
    pub d: usize,
    pub lo: Point,
    pub hi: Point,
}

impl IBox {
    pub fn new(d: usize, lo: Point, hi: Point) -> Self {
        let mut b = IBox { d, lo, hi };
        for i in d..3 {
            b.lo[i] = 0;
            b.hi[i] = 0;
        }
        b
    }

    /// Cube of half-width `half` around `center` (side 2·half+1).
    pub fn centered(d: usize, center: Point, half: i64) -> Self {
        let mut lo = center;
        let mut hi = center;
        for i in 0..d {
            lo[i] -= half;
            hi[i] += half;
        }
        IBox::new(d, lo, hi)
    }

    pub fn is_empty(&self) -> bool {
        (0..self.d).any(|i| self.lo[i] > self.hi[i])
    }

    pub fn side(&self, i: usize) -> i64 {
        (self.hi[i] - self.lo[i] + 1).max(0)
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        (0..self.d).map(|i| self.side(i) as usize).product()
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.d).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }

    pub fn contains_box(&self, other: &IBox) -> bool {
        other.is_empty() || (0..self.d).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn intersect(&self, other: &IBox) -> IBox {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for i in 0..self.d {
            lo[i] = lo[i].max(other.lo[i]);
            hi[i] = hi[i].min(other.hi[i]);
        }
        IBox::new(self.d, lo, hi)
    }

    pub fn intersects(&self, other: &IBox) -> bool {
        !self.intersect(other).is_empty()
    }

    /// Distance in the ℓ∞ norm between the two point sets.
    pub fn dist_linf(&self, other: &IBox) -> i64 {
        (0..self.d)
            .map(|i| (other.lo[i] - self.hi[i]).max(self.lo[i] - other.hi[i]).max(0))
            .max()
            .unwrap_or(0)
    }

    /// Strides of the lexicographic layout (first coordinate most significant).
    pub fn strides(&self) -> [usize; 3] {
        let mut s = [0usize; 3];
        let mut acc = 1usize;
        for i in (0..self.d).rev() {
            s[i] = acc;
            acc *= self.side(i) as usize;
        }
        s
    }

    pub fn local_index(&self, x: &Point) -> usize {
        let s = self.strides();
        (0..self.d).map(|i| (x[i] - self.lo[i]) as usize * s[i]).sum()
    }

    pub fn point(&self, mut idx: usize) -> Point {
        let mut x = [0; 3];
        for i in (0..self.d).rev() {
            let w = self.side(i) as usize;
            x[i] = self.lo[i] + (idx % w) as i64;
            idx /= w;
        }
        x
    }

    /// Points in lexicographic order.
    pub fn iter(self) -> impl Iterator<Item = Point> {
        let n = self.len();
        (0..n).map(move |k| self.point(k))
    }

    pub fn shrink(&self, k: i64) -> IBox {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for i in 0..self.d {
            lo[i] += k;
            hi[i] -= k;
        }
        IBox::new(self.d, lo, hi)
    }

    /// True when `x` lies in the box but has a lattice neighbour outside it.
    pub fn on_boundary(&self, x: &Point) -> bool {
        self.contains(x) && (0..self.d).any(|i| x[i] == self.lo[i] || x[i] == self.hi[i])
    }

    /// ℓ∞ diameter of the box.
    pub fn diameter(&self) -> i64 {
        (0..self.d).map(|i| self.hi[i] - self.lo[i]).max().unwrap_or(0)
    }
}

/// A triadic cube z + (−3^n/2, 3^n/2)^d ∩ Z^d with z ∈ 3^n Z^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriadicCube {
    pub d: usize,
    pub level: u32,
    pub center: Point,
}

impl TriadicCube {
    pub fn new(d: usize, level: u32, center: Point) -> Result<Self> {
        check_dim(d)?;
        if level > MAX_LEVEL + 2 {
            return invalid(format!("triadic level {level} too large"));
        }
        let s = pow3(level);
        if (0..d).any(|i| center[i].rem_euclid(s) != 0) || (d..3).any(|i| center[i] != 0) {
            return invalid(format!("center {center:?} not on the level-{level} grid"));
        }
        Ok(TriadicCube { d, level, center })
    }

    /// The cube ◻_n(0).
    pub fn origin(d: usize, level: u32) -> Self {
        TriadicCube { d, level, center: [0; 3] }
    }

    /// The unique level-`n` triadic cube containing `x`.
    pub fn containing(d: usize, x: Point, n: u32) -> Self {
        let s = pow3(n);
        let h = (s - 1) / 2;
        let mut c = [0; 3];
        for i in 0..d {
            c[i] = (x[i] + h).div_euclid(s) * s;
        }
        TriadicCube { d, level: n, center: c }
    }

    pub fn size(&self) -> i64 {
        pow3(self.level)
    }

    pub fn half(&self) -> i64 {
        (self.size() - 1) / 2
    }

    pub fn bbox(&self) -> IBox {
        IBox::centered(self.d, self.center, self.half())
    }

    /// z + ◻_{n+1}: the threefold enlargement sharing the centre.
    pub fn enlarged(&self) -> IBox {
        IBox::centered(self.d, self.center, (3 * self.size() - 1) / 2)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.bbox().contains(x)
    }

    pub fn contains_cube(&self, other: &TriadicCube) -> bool {
        other.level <= self.level && self.contains(&other.center)
    }

    pub fn vertex_count(&self) -> usize {
        (self.size() as usize).pow(self.d as u32)
    }

    pub fn predecessor(&self) -> TriadicCube {
        TriadicCube::containing(self.d, self.center, self.level + 1)
    }

    /// The ancestor at level `n ≥ self.level`.
    pub fn ancestor(&self, n: u32) -> TriadicCube {
        TriadicCube::containing(self.d, self.center, n.max(self.level))
    }

    pub fn successors(&self) -> Result<Vec<TriadicCube>> {
        if self.level == 0 {
            return invalid("no successors: level-0 cube");
        }
        let s = pow3(self.level - 1);
        let n = 3usize.pow(self.d as u32);
        Ok((0..n)
            .map(|mut k| {
                let mut c = self.center;
                for i in 0..self.d {
                    c[i] += ((k % 3) as i64 - 1) * s;
                    k /= 3;
                }
                TriadicCube { d: self.d, level: self.level - 1, center: c }
            })
            .collect())
    }

    /// All level-`n` triadic cubes inside this cube, lexicographic by centre.
    pub fn subcubes(&self, n: u32) -> Vec<TriadicCube> {
        assert!(n <= self.level);
        let s = pow3(n);
        let k = pow3(self.level - n);
        let grid = IBox::centered(self.d, [0; 3], (k - 1) / 2);
        grid.iter()
            .map(|g| {
                let mut c = self.center;
                for i in 0..self.d {
                    c[i] += g[i] * s;
                }
                TriadicCube { d: self.d, level: n, center: c }
            })
            .collect()
    }
}

/// An origin-centred window ◻_m(0) with side L = 3^m.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub d: usize,
    pub m: u32,
}

impl Window {
    pub fn new(d: usize, m: u32) -> Result<Self> {
        check_dim(d)?;
        if m > MAX_LEVEL {
            return invalid(format!("window level {m} exceeds {MAX_LEVEL}"));
        }
        Ok(Window { d, m })
    }

    pub fn side(&self) -> i64 {
        pow3(self.m)
    }

    pub fn half(&self) -> i64 {
        (self.side() - 1) / 2
    }

    pub fn cube(&self) -> TriadicCube {
        TriadicCube::origin(self.d, self.m)
    }

    pub fn bbox(&self) -> IBox {
        self.cube().bbox()
    }

    pub fn n_vertices(&self) -> usize {
        (self.side() as usize).pow(self.d as u32)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.bbox().contains(x)
    }

    /// index(x) = Σ_i (x_i + ⌊L/2⌋)·L^{d−i}.
    pub fn index(&self, x: &Point) -> usize {
        let l = self.side() as usize;
        let h = self.half();
        (0..self.d).fold(0usize, |acc, i| acc * l + (x[i] + h) as usize)
    }

    pub fn point(&self, idx: usize) -> Point {
        self.bbox().point(idx)
    }

    pub fn edge_count(&self) -> usize {
        let l = self.side() as usize;
        self.d * l.pow(self.d as u32 - 1) * (l - 1)
    }

    /// Every unordered edge inside the window exactly once.
    pub fn edges(&self) -> impl Iterator<Item = EdgeRef> {
        let b = self.bbox();
        (0..self.d).flat_map(move |dir| {
            b.iter()
                .filter(move |x| x[dir] < b.hi[dir])
                .map(move |x| EdgeRef { base: x, dir })
        })
    }
}

/// The edge {base, base + e_dir}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub base: Point,
    pub dir: usize,
}

impl EdgeRef {
    /// Canonical orientation of the unordered pair {x, y}, if they are neighbours.
    pub fn between(x: Point, y: Point) -> Option<EdgeRef> {
        let diff = sub(y, x);
        let nz: Vec<usize> = (0..3).filter(|&i| diff[i] != 0).collect();
        if nz.len() != 1 || diff[nz[0]].abs() != 1 {
            return None;
        }
        let dir = nz[0];
        let base = if diff[dir] == 1 { x } else { y };
        Some(EdgeRef { base, dir })
    }

    pub fn head(&self) -> Point {
        add(self.base, unit(self.dir))
    }
}

/// Read access to edge conductances; zero means closed or absent.
pub trait Conductance {
    fn dim(&self) -> usize;
    /// Conductance of the edge {x, x + e_i}.
    fn conductance(&self, x: Point, i: usize) -> f64;

    fn conductance_between(&self, x: Point, y: Point) -> f64 {
        match EdgeRef::between(x, y) {
            Some(e) => self.conductance(e.base, e.dir),
            None => 0.0,
        }
    }
}

fn sorted(mut v: Vec<Point>) -> Vec<Point> {
    v.sort();
    v
}

/// int(U) = {x ∈ U : every lattice neighbour of x lies in U}.
pub fn interior_vertices(d: usize, region: &[Point]) -> Vec<Point> {
    let set: HashSet<Point> = region.iter().copied().collect();
    sorted(set.iter().copied().filter(|&x| neighbors(d, x).all(|y| set.contains(&y))).collect())
}

/// ∂U = U \ int(U).
pub fn boundary_vertices(d: usize, region: &[Point]) -> Vec<Point> {
    let set: HashSet<Point> = region.iter().copied().collect();
    sorted(set.iter().copied().filter(|&x| !neighbors(d, x).all(|y| set.contains(&y))).collect())
}

/// ∂_a U = U \ int_a(U), where int_a only looks through open edges.
pub fn a_boundary<C: Conductance + ?Sized>(env: &C, region: &[Point]) -> Vec<Point> {
    let d = env.dim();
    let set: HashSet<Point> = region.iter().copied().collect();
    sorted(
        set.iter()
            .copied()
            .filter(|&x| {
                neighbors(d, x).any(|y| env.conductance_between(x, y) != 0.0 && !set.contains(&y))
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_of_origin_and_shifted() {
        assert_eq!(TriadicCube::containing(2, [0, 0, 0], 1), TriadicCube::origin(2, 1));
        let c = TriadicCube::containing(2, [4, 0, 0], 1);
        assert_eq!(c.center, [3, 0, 0]);
        assert_eq!(TriadicCube::containing(2, [-2, 1, 0], 1).center, [-3, 0, 0]);
        assert_eq!(TriadicCube::containing(2, [13, -14, 0], 2).center, [9, -18, 0]);
        assert_eq!(TriadicCube::containing(2, [14, -14, 0], 3).center, [27, -27, 0]);
    }

    #[test]
    fn predecessor_examples() {
        assert_eq!(TriadicCube::origin(2, 1).predecessor(), TriadicCube::origin(2, 2));
        let c = TriadicCube::new(2, 0, [1, 1, 0]).unwrap();
        assert_eq!(c.predecessor(), TriadicCube::origin(2, 1));
    }

    #[test]
    fn successors_of_unit_level() {
        let s = TriadicCube::origin(2, 1).successors().unwrap();
        assert_eq!(s.len(), 9);
        let centers: HashSet<Point> = s.iter().map(|c| c.center).collect();
        for a in -1..=1 {
            for b in -1..=1 {
                assert!(centers.contains(&[a, b, 0]));
            }
        }
        assert!(TriadicCube::origin(2, 0).successors().is_err());
    }

    #[test]
    fn box_boundary_of_unit_cube() {
        let pts: Vec<Point> = TriadicCube::origin(2, 1).bbox().iter().collect();
        assert_eq!(interior_vertices(2, &pts), vec![[0, 0, 0]]);
        assert_eq!(boundary_vertices(2, &pts).len(), 8);
        let single = vec![[5, 5, 0]];
        assert!(interior_vertices(2, &single).is_empty());
        assert_eq!(boundary_vertices(2, &single), single);
    }

    #[test]
    fn boundary_count_formula() {
        for m in 2..=3u32 {
            let pts: Vec<Point> = TriadicCube::origin(2, m).bbox().iter().collect();
            let l = pow3(m);
            // count directly: points with some coordinate on a face
            let direct = pts.iter().filter(|x| (0..2).any(|i| x[i].abs() == (l - 1) / 2)).count();
            assert_eq!(boundary_vertices(2, &pts).len(), direct);
            assert_eq!(direct as i64, l * l - (l - 2) * (l - 2));
        }
    }

    #[test]
    fn window_index_matches_layout() {
        let w = Window::new(2, 2).unwrap();
        assert_eq!(w.index(&[-4, -4, 0]), 0);
        assert_eq!(w.index(&[-4, -3, 0]), 1);
        assert_eq!(w.index(&[-3, -4, 0]), 9);
        assert_eq!(w.index(&[4, 4, 0]), 80);
        for k in 0..81 {
            assert_eq!(w.index(&w.point(k)), k);
        }
        let w3 = Window::new(3, 1).unwrap();
        assert_eq!(w3.index(&[1, 0, -1]), 2 * 9 + 3);
    }

    #[test]
    fn edge_enumeration_count() {
        for (d, m) in [(2, 1), (2, 2), (3, 1)] {
            let w = Window::new(d, m).unwrap();
            let edges: Vec<EdgeRef> = w.edges().collect();
            assert_eq!(edges.len(), w.edge_count());
            let set: HashSet<EdgeRef> = edges.iter().copied().collect();
            assert_eq!(set.len(), edges.len());
        }
        assert_eq!(Window::new(2, 1).unwrap().edge_count(), 12);
    }

    #[test]
    fn edge_canonical_orientation() {
        let e = EdgeRef::between([1, 2, 0], [1, 1, 0]).unwrap();
        assert_eq!(e, EdgeRef { base: [1, 1, 0], dir: 1 });
        assert_eq!(EdgeRef::between([1, 1, 0], [1, 2, 0]), Some(e));
        assert!(EdgeRef::between([0, 0, 0], [1, 1, 0]).is_none());
    }

    #[test]
    fn box_distance() {
        let a = IBox::new(2, [0, 0, 0], [2, 2, 0]);
        let b = IBox::new(2, [3, 3, 0], [5, 5, 0]);
        assert_eq!(a.dist_linf(&b), 1);
        let c = IBox::new(2, [1, 5, 0], [1, 6, 0]);
        assert_eq!(a.dist_linf(&c), 3);
        assert_eq!(a.dist_linf(&a), 0);
    }

    struct Fixed(Vec<(EdgeRef, f64)>);
    impl Conductance for Fixed {
        fn dim(&self) -> usize {
            2
        }
        fn conductance(&self, x: Point, i: usize) -> f64 {
            let e = EdgeRef { base: x, dir: i };
            self.0.iter().find(|(f, _)| *f == e).map(|p| p.1).unwrap_or(0.0)
        }
    }

    #[test]
    fn a_boundary_examples() {
        let pts: Vec<Point> = TriadicCube::origin(2, 1).bbox().iter().collect();
        let none = Fixed(vec![]);
        assert!(a_boundary(&none, &pts).is_empty());
        // one open edge leaving the cube from (1,0) to (2,0); one inside
        let env = Fixed(vec![
            (EdgeRef { base: [1, 0, 0], dir: 0 }, 1.0),
            (EdgeRef { base: [0, 0, 0], dir: 0 }, 1.0),
        ]);
        assert_eq!(a_boundary(&env, &pts), vec![[1, 0, 0]]);
    }
}
