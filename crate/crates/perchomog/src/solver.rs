//! Weighted graph Laplacians on clusters, Dirichlet solves and the two cell
//! problems whose optimal values are μ and ν.

use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::coarsen::{cube_domain, CubeDomain, DomainStatus};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Conductance, IBox, Point, TriadicCube};
use crate::partition::Partition;

/// Vertex numbering of a finite point set through a dense box-local table.
#[derive(Clone, Debug)]
pub struct VertexIndex {
    pub bx: IBox,
    table: Vec<u32>,
    pub points: Vec<Point>,
}

const NONE: u32 = u32::MAX;

impl VertexIndex {
    /// Points are sorted lexicographically; duplicates are dropped.
    pub fn new(d: usize, points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return invalid("empty vertex set");
        }
        let mut pts = points.to_vec();
        pts.sort();
        pts.dedup();
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in &pts {
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let bx = IBox::new(d, lo, hi);
        let mut table = vec![NONE; bx.len()];
        for (k, p) in pts.iter().enumerate() {
            table[bx.local_index(p)] = k as u32;
        }
        Ok(VertexIndex { bx, table, points: pts })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, x: &Point) -> Option<usize> {
        if !self.bx.contains(x) {
            return None;
        }
        let k = self.table[self.bx.local_index(x)];
        (k != NONE).then_some(k as usize)
    }
}

/// The operator −∇·a∇ restricted to a vertex set: each unordered open edge
/// with both endpoints in the set appears once.
#[derive(Clone, Debug)]
pub struct ClusterOperator {
    pub index: VertexIndex,
    pub edges: Vec<(u32, u32, f64)>,
    pub diag: Vec<f64>,
}

impl ClusterOperator {
    pub fn assemble<C: Conductance + ?Sized>(env: &C, vertices: &[Point]) -> Result<Self> {
        let d = env.dim();
        let index = VertexIndex::new(d, vertices)?;
        let mut edges = Vec::new();
        let mut diag = vec![0.0; index.len()];
        for (k, x) in index.points.iter().enumerate() {
            for i in 0..d {
                let mut y = *x;
                y[i] += 1;
                if let Some(j) = index.get(&y) {
                    let a = env.conductance(*x, i);
                    if a > 0.0 {
                        edges.push((k as u32, j as u32, a));
                        diag[k] += a;
                        diag[j] += a;
                    }
                }
            }
        }
        Ok(ClusterOperator { index, edges, diag })
    }

    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.index.points
    }

    /// uᵀAv = Σ_{unordered edges} a (u(x)−u(y))(v(x)−v(y)) = ½⟨∇u, a∇v⟩.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j, a)| a * (u[i as usize] - u[j as usize]) * (v[i as usize] - v[j as usize]))
            .sum()
    }

    pub fn quad(&self, u: &[f64]) -> f64 {
        self.bilinear(u, u)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.diag.iter().zip(u).map(|(a, b)| a * b).collect();
        for &(i, j, a) in &self.edges {
            out[i as usize] -= a * u[j as usize];
            out[j as usize] -= a * u[i as usize];
        }
        out
    }

    /// Dense matrix, for small oracles.
    pub fn dense(&self) -> Mat<f64> {
        let n = self.n();
        let mut m = Mat::<f64>::zeros(n, n);
        for (k, &dk) in self.diag.iter().enumerate() {
            m[(k, k)] = dk;
        }
        for &(i, j, a) in &self.edges {
            m[(i as usize, j as usize)] -= a;
            m[(j as usize, i as usize)] -= a;
        }
        m
    }

    /// Connected components of the open graph restricted to `mask`; returns a
    /// component id per vertex (usize::MAX outside the mask).
    pub fn components(&self, mask: &[bool]) -> Vec<usize> {
        let n = self.n();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(i, j, _) in &self.edges {
            let (i, j) = (i as usize, j as usize);
            if mask[i] && mask[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..n).map(|k| if mask[k] { find(&mut parent, k) } else { usize::MAX }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Sparse Cholesky factorization.
    Direct,
    /// Conjugate gradients.
    Pcg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: None, precond: Preconditioner::Diagonal, method: Method::Direct }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 1e-4) {
            return invalid(format!("solver tolerance must lie in (0, 1e-4], got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Worst relative residual ‖b − Ax‖/‖b‖ over the right-hand sides.
    pub residual: f64,
}

impl SolveStats {
    pub fn merge(self, o: SolveStats) -> SolveStats {
        SolveStats { iterations: self.iterations + o.iterations, residual: self.residual.max(o.residual) }
    }
}

/// Symmetric sparse matrix in compressed-row form.
struct Csr {
    ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.ptr[r]..self.ptr[r + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            *o = s;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum Backend {
    Direct(Llt<usize, f64>),
    Pcg,
}

/// A factorized principal submatrix A_SS of a cluster operator.
pub struct SubsystemSolver {
    /// Position of each operator vertex in the subsystem (usize::MAX if absent).
    pub local: Vec<usize>,
    pub members: Vec<usize>,
    csr: Csr,
    diag: Vec<f64>,
    backend: Backend,
    opts: SolveOptions,
}

impl SubsystemSolver {
    pub fn new(op: &ClusterOperator, mask: &[bool], opts: SolveOptions) -> Result<Self> {
        opts.validate()?;
        let members: Vec<usize> = (0..op.n()).filter(|&k| mask[k]).collect();
        let mut local = vec![usize::MAX; op.n()];
        for (l, &k) in members.iter().enumerate() {
            local[k] = l;
        }
        let n = members.len();
        let diag: Vec<f64> = members.iter().map(|&k| op.diag[k]).collect();
        let mut rows: Vec<Vec<(u32, f64)>> = (0..n).map(|r| vec![(r as u32, diag[r])]).collect();
        for &(i, j, a) in &op.edges {
            let (li, lj) = (local[i as usize], local[j as usize]);
            if li != usize::MAX && lj != usize::MAX {
                rows[li].push((lj as u32, -a));
                rows[lj].push((li as u32, -a));
            }
        }
        let mut csr = Csr { ptr: vec![0], col: Vec::new(), val: Vec::new() };
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                csr.col.push(c);
                csr.val.push(v);
            }
            csr.ptr.push(csr.col.len());
        }
        let backend = match opts.method {
            Method::Direct if n > 0 => {
                let trip: Vec<Triplet<usize, usize, f64>> = (0..n)
                    .flat_map(|r| {
                        let csr = &csr;
                        (csr.ptr[r]..csr.ptr[r + 1]).map(move |k| Triplet::new(r, csr.col[k] as usize, csr.val[k]))
                    })
                    .collect();
                let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
                    .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))?;
                let sym = SymbolicLlt::try_new(a.symbolic(), Side::Lower)
                    .map_err(|e| Error::Numerical(format!("symbolic factorization: {e:?}")))?;
                let llt = Llt::try_new_with_symbolic(sym, a.as_ref(), Side::Lower)
                    .map_err(|e| Error::Numerical(format!("Cholesky factorization failed: {e:?}")))?;
                Backend::Direct(llt)
            }
            _ => Backend::Pcg,
        };
        Ok(SubsystemSolver { local, members, csr, diag, backend, opts })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        self.csr.mul(x, &mut ax);
        let r: Vec<f64> = ax.iter().zip(b).map(|(a, c)| c - a).collect();
        let nb = norm(b);
        if nb == 0.0 {
            norm(&r)
        } else {
            norm(&r) / nb
        }
    }

    /// Solve A_SS x = b for several right-hand sides (each of subsystem length).
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, SolveStats)> {
        let n = self.len();
        if n == 0 {
            return Ok((rhs.iter().map(|_| Vec::new()).collect(), SolveStats::default()));
        }
        let mut stats = SolveStats::default();
        let sols = match &self.backend {
            Backend::Direct(llt) => {
                let mut b = Mat::<f64>::zeros(n, rhs.len());
                for (c, r) in rhs.iter().enumerate() {
                    for (i, &v) in r.iter().enumerate() {
                        b[(i, c)] = v;
                    }
                }
                let x = llt.solve(&b);
                (0..rhs.len()).map(|c| (0..n).map(|i| x[(i, c)]).collect::<Vec<f64>>()).collect::<Vec<_>>()
            }
            Backend::Pcg => {
                let mut out = Vec::new();
                for r in rhs {
                    let (x, it) = self.pcg(r)?;
                    stats.iterations += it;
                    out.push(x);
                }
                out
            }
        };
        for (x, b) in sols.iter().zip(rhs) {
            stats.residual = stats.residual.max(self.residual(x, b));
        }
        Ok((sols, stats))
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let (mut v, s) = self.solve_many(&[rhs.to_vec()])?;
        Ok((v.pop().unwrap(), s))
    }

    fn pcg(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = b.len();
        let nb = norm(b);
        let mut x = vec![0.0; n];
        if nb == 0.0 {
            return Ok((x, 0));
        }
        let max_iter = self.opts.max_iter.unwrap_or(((20.0 * (n as f64).sqrt()) as usize).max(100));
        let pre = |r: &[f64], z: &mut [f64]| match self.opts.precond {
            Preconditioner::Diagonal => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.diag) {
                    *zi = ri / di;
                }
            }
            Preconditioner::None => z.copy_from_slice(r),
        };
        let mut r = b.to_vec();
        let mut z = vec![0.0; n];
        pre(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for it in 1..=max_iter {
            self.csr.mul(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= self.opts.tol * nb {
                return Ok((x, it));
            }
            pre(&r, &mut z);
            let rz2 = dot(&r, &z);
            let beta = rz2 / rz;
            rz = rz2;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Numerical(format!(
            "conjugate gradients did not converge in {max_iter} iterations (relative residual {:.3e})",
            norm(&r) / nb
        )))
    }
}

#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub u: Vec<f64>,
    pub stats: SolveStats,
    /// Free vertices in components with no prescribed vertex; set to 0.
    pub isolated: usize,
}

/// Solve −∇·a∇u = 0 at free vertices with u = g at fixed ones. `g` has one
/// entry per operator vertex; only fixed entries are read.
pub fn solve_dirichlet(op: &ClusterOperator, fixed: &[bool], g: &[f64], opts: SolveOptions) -> Result<DirichletSolution> {
    let n = op.n();
    let free: Vec<bool> = fixed.iter().map(|f| !f).collect();
    let comp = op.components(&free);
    let mut anchored = vec![false; n];
    for &(i, j, _) in &op.edges {
        let (i, j) = (i as usize, j as usize);
        if free[i] && fixed[j] {
            anchored[comp[i]] = true;
        }
        if free[j] && fixed[i] {
            anchored[comp[j]] = true;
        }
    }
    let solvable: Vec<bool> = (0..n).map(|k| free[k] && anchored[comp[k]]).collect();
    let isolated = (0..n).filter(|&k| free[k] && !solvable[k]).count();
    let sub = SubsystemSolver::new(op, &solvable, opts)?;
    let mut rhs = vec![0.0; sub.len()];
    for &(i, j, a) in &op.edges {
        let (i, j) = (i as usize, j as usize);
        if solvable[i] && fixed[j] {
            rhs[sub.local[i]] += a * g[j];
        }
        if solvable[j] && fixed[i] {
            rhs[sub.local[j]] += a * g[i];
        }
    }
    let (x, stats) = sub.solve(&rhs)?;
    let mut u: Vec<f64> = (0..n).map(|k| if fixed[k] { g[k] } else { 0.0 }).collect();
    for (l, &k) in sub.members.iter().enumerate() {
        u[k] = x[l];
    }
    Ok(DirichletSolution { u, stats, isolated })
}

/// Dirichlet problem on a box: unknowns are the vertices of `region`'s open
/// clusters that reach the vertex boundary of the box; data `g` on that boundary.
pub fn solve_dirichlet_box<C: Conductance + ?Sized>(
    env: &C,
    region: IBox,
    g: impl Fn(&Point) -> f64,
    opts: SolveOptions,
) -> Result<(ClusterOperator, DirichletSolution)> {
    let op = ClusterOperator::assemble(env, &region.iter().collect::<Vec<_>>())?;
    let fixed: Vec<bool> = op.points().iter().map(|x| region.on_boundary(x)).collect();
    let gv: Vec<f64> = op.points().iter().map(&g).collect();
    let sol = solve_dirichlet(&op, &fixed, &gv, opts)?;
    Ok((op, sol))
}

/// A vector field stored on the canonical edges of a box: `vals[k][i]` is
/// F(x + e_i, x) for the k-th vertex x of the box.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub bx: IBox,
    pub vals: Vec<[f64; 3]>,
}

impl VectorField {
    pub fn zeros(bx: IBox) -> Self {
        VectorField { bx, vals: vec![[0.0; 3]; bx.len()] }
    }

    /// The constant field q(x, y) = q·(x − y).
    pub fn constant(bx: IBox, q: [f64; 3]) -> Self {
        VectorField { bx, vals: vec![q; bx.len()] }
    }

    /// ∇u for u given on every vertex of the box.
    pub fn gradient(bx: IBox, u: &[f64]) -> Self {
        let s = bx.strides();
        let mut f = Self::zeros(bx);
        for k in 0..bx.len() {
            let x = bx.point(k);
            for i in 0..bx.d {
                if x[i] < bx.hi[i] {
                    f.vals[k][i] = u[k + s[i]] - u[k];
                }
            }
        }
        f
    }

    /// F(x, y) for neighbours x, y in the box.
    pub fn get(&self, x: &Point, y: &Point) -> f64 {
        for i in 0..self.bx.d {
            if y[i] == x[i] + 1 {
                return -self.vals[self.bx.local_index(x)][i];
            }
            if x[i] == y[i] + 1 {
                return self.vals[self.bx.local_index(y)][i];
            }
        }
        0.0
    }
}

/// ⟨F, G⟩ over ordered neighbour pairs of the box: twice the unordered sum.
pub fn inner(f: &VectorField, g: &VectorField) -> f64 {
    let bx = f.bx;
    let mut s = 0.0;
    for k in 0..bx.len() {
        let x = bx.point(k);
        for i in 0..bx.d {
            if x[i] < bx.hi[i] {
                s += f.vals[k][i] * g.vals[k][i];
            }
        }
    }
    2.0 * s
}

/// |F|(x) = (½ Σ_{y∼x, y ∈ box} F(x, y)²)^{1/2}.
pub fn mag(f: &VectorField, x: &Point) -> f64 {
    let bx = f.bx;
    let mut s = 0.0;
    for i in 0..bx.d {
        for sgn in [-1i64, 1] {
            let mut y = *x;
            y[i] += sgn;
            if bx.contains(&y) {
                s += f.get(x, &y).powi(2);
            }
        }
    }
    (0.5 * s).sqrt()
}

/// Optimizers of both cell problems on a cube for the d coordinate directions;
/// μ and ν at any direction follow by bilinearity.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub domain: CubeDomain,
    pub op: Option<ClusterOperator>,
    /// Minimizer of μ(U, e_i), one vector per direction, on `domain.cluster`.
    pub u: Vec<Vec<f64>>,
    /// Maximizer of ν(U, e_i).
    pub v: Vec<Vec<f64>>,
    /// μ(U, q) = −qᵀ M q.
    pub m: [[f64; 3]; 3],
    /// ν(U, p) = pᵀ N p.
    pub n: [[f64; 3]; 3],
    /// Worst relative residual of the linear solves.
    pub residual: f64,
    pub iterations: usize,
    /// Largest |ν − (−vᵀAv + 2ℓᵀAv)/|U|| over the directions.
    pub nu_crosscheck: f64,
    /// Linear coefficients c^{(i)} of ⟨e_i, ∇[w]_P⟩ = Σ c^{(i)}(x) w(x).
    pub coeffs: Vec<Vec<f64>>,
    /// Boundary set C_*(U) ∩ ∂cl_P(U), as a mask on the cluster.
    pub boundary: Vec<bool>,
}

impl CellSolution {
    pub fn degenerate(&self) -> bool {
        self.domain.status != DomainStatus::Ok
    }

    pub fn volume(&self) -> f64 {
        self.domain.cube.vertex_count() as f64
    }

    pub fn mu(&self, q: [f64; 3]) -> f64 {
        -quad_form(&self.m, q, self.domain.cube.d)
    }

    pub fn nu(&self, p: [f64; 3]) -> f64 {
        quad_form(&self.n, p, self.domain.cube.d)
    }

    fn combine(basis: &[Vec<f64>], q: [f64; 3]) -> Vec<f64> {
        let n = basis.first().map_or(0, |b| b.len());
        (0..n).map(|k| basis.iter().enumerate().map(|(i, b)| q[i] * b[k]).sum()).collect()
    }

    /// u(·, U, q) on the cluster.
    pub fn u_at(&self, q: [f64; 3]) -> Vec<f64> {
        Self::combine(&self.u, q)
    }

    /// v(·, U, p) on the cluster.
    pub fn v_at(&self, p: [f64; 3]) -> Vec<f64> {
        Self::combine(&self.v, p)
    }

    /// Coefficient vector of w ↦ ⟨q, ∇[w]_P⟩_{cl_P(U)}.
    pub fn coeff_at(&self, q: [f64; 3]) -> Vec<f64> {
        Self::combine(&self.coeffs, q)
    }
}

fn quad_form(m: &[[f64; 3]; 3], q: [f64; 3], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += q[i] * m[i][j] * q[j];
        }
    }
    s
}

/// Σ_{x ∈ box} ([x − e_i ∈ U] − [x + e_i ∈ U]) for a box inside U.
fn face_balance(elem: &IBox, u: &IBox, i: usize) -> f64 {
    let layer = (elem.len() as i64 / elem.side(i)) as f64;
    let hi = if elem.hi[i] == u.hi[i] { layer } else { 0.0 };
    let lo = if elem.lo[i] == u.lo[i] { layer } else { 0.0 };
    hi - lo
}

/// Solve both cell problems on a triadic cube. Degenerate domains (cube not a
/// union of elements, or anchors not joined by one cluster) give zeros.
pub fn solve_cell<C: Conductance + ?Sized>(
    env: &C,
    partition: &Partition,
    cube: &TriadicCube,
    opts: SolveOptions,
) -> Result<CellSolution> {
    let domain = cube_domain(env, partition, cube);
    solve_cell_on(env, domain, opts)
}

pub fn solve_cell_on<C: Conductance + ?Sized>(env: &C, domain: CubeDomain, opts: SolveOptions) -> Result<CellSolution> {
    let trim = domain.cube.bbox();
    solve_cell_trimmed(env, domain, trim, opts)
}

/// As [`solve_cell_on`], with the linear term ⟨q, ∇[u]⟩ integrated over the
/// sub-box `trim` only.
pub fn solve_cell_trimmed<C: Conductance + ?Sized>(
    env: &C,
    domain: CubeDomain,
    trim: IBox,
    opts: SolveOptions,
) -> Result<CellSolution> {
    opts.validate()?;
    let d = domain.cube.d;
    let zero = [[0.0; 3]; 3];
    if domain.status != DomainStatus::Ok {
        return Ok(CellSolution {
            domain,
            op: None,
            u: Vec::new(),
            v: Vec::new(),
            m: zero,
            n: zero,
            residual: 0.0,
            iterations: 0,
            nu_crosscheck: 0.0,
            coeffs: Vec::new(),
            boundary: Vec::new(),
        });
    }
    let ubox = domain.cube.bbox();
    let vol = domain.cube.vertex_count() as f64;
    let op = ClusterOperator::assemble(env, &domain.cluster)?;
    let n = op.n();
    let boundary: Vec<bool> = op.points().iter().map(|x| ubox.on_boundary(x)).collect();
    let interior: Vec<bool> = boundary.iter().map(|b| !b).collect();

    // c^{(i)} sits on the anchors: c_◻ = 2 Σ_{x∈◻∩T} b_i(x)
    let mut coeffs = vec![vec![0.0; n]; d];
    for (e, a) in domain.elements.iter().zip(&domain.anchors) {
        let part = e.bbox().intersect(&trim);
        if part.is_empty() {
            continue;
        }
        let k = a
            .and_then(|a| op.index.get(&a))
            .ok_or_else(|| Error::Numerical(format!("element {:?} has no anchor on the cluster", e)))?;
        for (i, c) in coeffs.iter_mut().enumerate() {
            c[k] += 2.0 * face_balance(&part, &trim, i);
        }
    }

    let ii = SubsystemSolver::new(&op, &interior, opts)?;
    let mut stats = SolveStats::default();

    // ν: Dirichlet data x_i on the boundary set
    let mut rhs_nu = Vec::new();
    let mut rhs_psi = Vec::new();
    for i in 0..d {
        let mut r = vec![0.0; ii.len()];
        for &(a, b, w) in &op.edges {
            let (a, b) = (a as usize, b as usize);
            if interior[a] && boundary[b] {
                r[ii.local[a]] += w * op.points()[b][i] as f64;
            }
            if interior[b] && boundary[a] {
                r[ii.local[b]] += w * op.points()[a][i] as f64;
            }
        }
        rhs_nu.push(r);
        rhs_psi.push(ii.members.iter().map(|&k| coeffs[i][k]).collect::<Vec<f64>>());
    }
    let mut all = rhs_nu.clone();
    all.extend(rhs_psi.iter().cloned());
    let (sols, s) = ii.solve_many(&all)?;
    stats = stats.merge(s);

    let normalize = |w: &mut Vec<f64>| {
        let mean: f64 = domain
            .elements
            .iter()
            .zip(&domain.anchors)
            .filter_map(|(e, a)| a.and_then(|a| op.index.get(&a)).map(|k| e.vertex_count() as f64 * w[k]))
            .sum::<f64>()
            / vol;
        w.iter_mut().for_each(|x| *x -= mean);
        mean
    };

    let mut v = Vec::new();
    for (i, sol) in sols.iter().take(d).enumerate() {
        let mut w: Vec<f64> = op.points().iter().map(|x| x[i] as f64).collect();
        for (l, &k) in ii.members.iter().enumerate() {
            w[k] = sol[l];
        }
        normalize(&mut w);
        v.push(w);
    }

    // μ: reduce the linear term to the boundary, then a grounded Neumann solve
    let mut ground = vec![true; n];
    ground[0] = false;
    let gs = SubsystemSolver::new(&op, &ground, opts)?;
    let mut rhs_mu = Vec::new();
    for (i, psi) in sols.iter().skip(d).enumerate() {
        let mut f = vec![0.0; n];
        for k in 0..n {
            if boundary[k] {
                f[k] = coeffs[i][k];
            }
        }
        for &(a, b, w) in &op.edges {
            let (a, b) = (a as usize, b as usize);
            if boundary[a] && interior[b] {
                f[a] += w * psi[ii.local[b]];
            }
            if boundary[b] && interior[a] {
                f[b] += w * psi[ii.local[a]];
            }
        }
        rhs_mu.push(gs.members.iter().map(|&k| 0.5 * f[k]).collect::<Vec<f64>>());
    }
    let (usols, s) = gs.solve_many(&rhs_mu)?;
    stats = stats.merge(s);
    let mut u = Vec::new();
    for sol in usols {
        let mut w = vec![0.0; n];
        for (l, &k) in gs.members.iter().enumerate() {
            w[k] = sol[l];
        }
        normalize(&mut w);
        u.push(w);
    }

    let mut m = zero;
    let mut nm = zero;
    for i in 0..d {
        for j in 0..d {
            m[i][j] = op.bilinear(&u[i], &u[j]) / vol;
            nm[i][j] = op.bilinear(&v[i], &v[j]) / vol;
        }
    }
    let mut cross = 0.0f64;
    for i in 0..d {
        let ell: Vec<f64> = op.points().iter().map(|x| x[i] as f64).collect();
        let alt = (-op.quad(&v[i]) + 2.0 * op.bilinear(&ell, &v[i])) / vol;
        cross = cross.max((alt - nm[i][i]).abs());
    }
    Ok(CellSolution {
        domain,
        op: Some(op),
        u,
        v,
        m,
        n: nm,
        residual: stats.residual,
        iterations: stats.iterations,
        nu_crosscheck: cross,
        coeffs,
        boundary,
    })
}

#[derive(Clone, Debug)]
pub struct VariationalResult {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

fn result_from(cell: &CellSolution, values: Vec<f64>, objective: f64) -> VariationalResult {
    VariationalResult {
        points: cell.op.as_ref().map(|o| o.points().to_vec()).unwrap_or_default(),
        values,
        objective,
        residual: cell.residual,
        iterations: cell.iterations,
        degenerate: cell.degenerate(),
    }
}

/// μ(U, q) and its normalized minimizer.
pub fn minimize_mu<C: Conductance + ?Sized>(
    env: &C,
    cube: &TriadicCube,
    partition: &Partition,
    q: [f64; 3],
    opts: SolveOptions,
) -> Result<(VariationalResult, f64)> {
    let cell = solve_cell(env, partition, cube, opts)?;
    let mu = cell.mu(q);
    Ok((result_from(&cell, cell.u_at(q), mu), mu))
}

/// ν(U, p) and its normalized maximizer.
pub fn solve_nu<C: Conductance + ?Sized>(
    env: &C,
    cube: &TriadicCube,
    partition: &Partition,
    p: [f64; 3],
    opts: SolveOptions,
) -> Result<(VariationalResult, f64)> {
    let cell = solve_cell(env, partition, cube, opts)?;
    let nu = cell.nu(p);
    Ok((result_from(&cell, cell.v_at(p), nu), nu))
}
