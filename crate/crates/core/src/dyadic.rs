//! Dyadic and shifted cube families, Calderon-Zygmund decomposition and
//! sparse construction.
//!
//! Grid cubes are measured in cells of a [`Grid`]: `lo` is the lower
//! corner cell and `side` the side length in cells. The dyadic tree is
//! rooted at the whole box; with `N` a power of two its cubes of side `s`
//! have `lo` divisible by `s`, i.e. they are anchored at coordinate 0.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::kernels::KernelSpec;
use crate::operators::{gated_backend, lerner_maximal, restrict, Backend, CubePool};
use crate::quad::neumaier_sum;
use crate::sampling::{ConeGrid, Grid, GridFunction};

/// Which lattice a cube belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shift {
    Standard,
    /// Shifted family index per axis, each in `1..=3`.
    Shifted([u8; 2]),
}

/// An axis-parallel cube in integer lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    pub n: usize,
    pub lo: [i64; 2],
    pub side: i64,
}

impl Cube {
    pub fn new(n: usize, lo: [i64; 2], side: i64) -> Self {
        let lo = if n == 1 { [lo[0], 0] } else { lo };
        Cube { n, lo, side }
    }

    /// The whole box of `grid`.
    pub fn root(grid: &Grid) -> Self {
        Cube::new(grid.n, [0, 0], grid.size as i64)
    }

    pub fn hi(&self, axis: usize) -> i64 {
        self.lo[axis] + self.side
    }

    pub fn contains_cell(&self, c: [usize; 2]) -> bool {
        (0..self.n).all(|a| {
            let v = c[a] as i64;
            v >= self.lo[a] && v < self.lo[a] + self.side
        })
    }

    pub fn contains(&self, other: &Cube) -> bool {
        (0..self.n).all(|a| other.lo[a] >= self.lo[a] && other.hi(a) <= self.hi(a))
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        (0..self.n).all(|a| other.lo[a] < self.hi(a) && self.lo[a] < other.hi(a))
    }

    /// Concentric dilation by an odd factor `k`.
    pub fn dilate(&self, k: i64) -> Cube {
        debug_assert!(k % 2 == 1);
        let d = (k - 1) / 2 * self.side;
        Cube::new(self.n, [self.lo[0] - d, self.lo[1] - d], self.side * k)
    }

    pub fn children(&self) -> Vec<Cube> {
        let s = self.side / 2;
        if s == 0 {
            return Vec::new();
        }
        if self.n == 1 {
            return vec![Cube::new(1, [self.lo[0], 0], s), Cube::new(1, [self.lo[0] + s, 0], s)];
        }
        let mut out = Vec::with_capacity(4);
        for a in 0..2 {
            for b in 0..2 {
                out.push(Cube::new(2, [self.lo[0] + a * s, self.lo[1] + b * s], s));
            }
        }
        out
    }

    /// Dyadic parent, anchored at lattice coordinate 0.
    pub fn parent(&self) -> Cube {
        let s = self.side * 2;
        let lo = [self.lo[0].div_euclid(s) * s, self.lo[1].div_euclid(s) * s];
        Cube::new(self.n, lo, s)
    }

    /// Volume in lattice units.
    pub fn volume(&self) -> i64 {
        self.side.pow(self.n as u32)
    }

    /// Clipped per-axis cell ranges `[lo, hi)` inside `grid`.
    pub fn clip(&self, grid: &Grid) -> Option<[(usize, usize); 2]> {
        let n = grid.size as i64;
        let mut r = [(0usize, 1usize); 2];
        for a in 0..self.n {
            let lo = self.lo[a].max(0);
            let hi = self.hi(a).min(n);
            if lo >= hi {
                return None;
            }
            r[a] = (lo as usize, hi as usize);
        }
        Some(r)
    }

    /// Flat indices of the cells of `grid` inside the cube.
    pub fn cells(&self, grid: &Grid) -> Vec<usize> {
        let Some(r) = self.clip(grid) else { return Vec::new() };
        let mut out = Vec::new();
        if grid.n == 1 {
            out.extend(r[0].0..r[0].1);
        } else {
            for i0 in r[0].0..r[0].1 {
                for i1 in r[1].0..r[1].1 {
                    out.push(i0 * grid.size + i1);
                }
            }
        }
        out
    }

    /// Generation relative to the root box (root is 0).
    pub fn generation(&self, grid: &Grid) -> i32 {
        (grid.size as f64 / self.side as f64).log2().round() as i32
    }

    /// Lower corner in physical coordinates.
    pub fn corner(&self, grid: &Grid) -> [f64; 2] {
        [-grid.r + self.lo[0] as f64 * grid.h, -grid.r + self.lo[1] as f64 * grid.h]
    }

    pub fn centre(&self, grid: &Grid) -> [f64; 2] {
        let c = self.corner(grid);
        let half = 0.5 * self.side as f64 * grid.h;
        [c[0] + half, if self.n == 2 { c[1] + half } else { 0.0 }]
    }

    pub fn side_length(&self, grid: &Grid) -> f64 {
        self.side as f64 * grid.h
    }

    pub fn is_dyadic(&self) -> bool {
        self.side > 0
            && (self.side as u64).is_power_of_two()
            && (0..self.n).all(|a| self.lo[a].rem_euclid(self.side) == 0)
    }
}

/// All dyadic cubes of the grid, root first, then by generation.
pub fn dyadic_cubes(grid: &Grid) -> Vec<Cube> {
    let mut out = vec![Cube::root(grid)];
    let mut i = 0;
    while i < out.len() {
        let c = out[i];
        out.extend(c.children());
        i += 1;
    }
    out
}

/// Dyadic subcubes of `q`, including `q`.
pub fn dyadic_subcubes(q: &Cube) -> Vec<Cube> {
    let mut out = vec![*q];
    let mut i = 0;
    while i < out.len() {
        let c = out[i];
        out.extend(c.children());
        i += 1;
    }
    out
}

fn abs_mass(f: &GridFunction, q: &Cube) -> f64 {
    neumaier_sum(q.cells(&f.grid).into_iter().map(|i| f.values[i].abs()))
}

/// `<|f|>` over the full cube `q`; parts outside the box count as zero.
pub fn cube_average(f: &GridFunction, q: &Cube) -> f64 {
    abs_mass(f, q) / q.volume() as f64
}

/// A bad part `b_j`, stored on the cells of its cube in flat-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadPart {
    pub cube: Cube,
    /// `<|f|>` over the cube.
    pub average: f64,
    pub values: Vec<f64>,
}

impl BadPart {
    pub fn to_grid_function(&self, grid: Grid) -> GridFunction {
        let mut g = GridFunction::zeros(grid);
        for (i, v) in self.cube.cells(&grid).into_iter().zip(&self.values) {
            g.values[i] = *v;
        }
        g
    }
}

/// `f = g + sum_j b_j` at height `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct CzDecomposition {
    pub rho: f64,
    pub good: GridFunction,
    pub bad: Vec<BadPart>,
}

impl CzDecomposition {
    /// Writes `good.csv`, `bad_<j>.csv` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.good.write_csv(&dir.join("good.csv"))?;
        let mut cubes = Vec::new();
        for (j, b) in self.bad.iter().enumerate() {
            let name = format!("bad_{j}.csv");
            b.to_grid_function(self.good.grid).write_csv(&dir.join(&name))?;
            cubes.push(serde_json::json!({"file": name, "cube": b.cube, "average": b.average}));
        }
        let manifest = serde_json::json!({
            "rho": self.rho,
            "grid": self.good.grid,
            "good": "good.csv",
            "bad": cubes,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Calderon-Zygmund decomposition over the box-rooted dyadic tree.
///
/// Selected cubes are the maximal dyadic cubes with `<|f|>_Q > rho`. The
/// parent bound `<|f|> <= 2^n rho` needs the root average to be at most
/// `rho`, so smaller heights are rejected.
pub fn cz_decompose(f: &GridFunction, rho: f64) -> Result<CzDecomposition> {
    let grid = f.grid;
    if !(rho > 0.0) || !rho.is_finite() {
        return param(format!("height must be positive, got {rho}"));
    }
    if !grid.is_dyadic() {
        return param("CZ decomposition needs 2R/h a power of two");
    }
    let root = Cube::root(&grid);
    let root_avg = cube_average(f, &root);
    if root_avg > rho {
        return param(format!("height {rho} is below the box average {root_avg}"));
    }
    let mut good = f.clone();
    let mut bad = Vec::new();
    let mut stack = vec![root];
    while let Some(q) = stack.pop() {
        let avg = cube_average(f, &q);
        if avg > rho {
            let cells = q.cells(&grid);
            let mean = neumaier_sum(cells.iter().map(|&i| f.values[i])) / cells.len() as f64;
            let values = cells
                .iter()
                .map(|&i| {
                    good.values[i] = mean;
                    f.values[i] - mean
                })
                .collect();
            bad.push(BadPart { cube: q, average: avg, values });
        } else {
            // children pushed in reverse so output follows lattice order
            stack.extend(q.children().into_iter().rev());
        }
    }
    Ok(CzDecomposition { rho, good, bad })
}

/// Violations of the CZ invariants, empty when all hold.
pub fn cz_violations(f: &GridFunction, cz: &CzDecomposition, tol: f64) -> Vec<String> {
    let grid = f.grid;
    let n = grid.n as i32;
    let rho = cz.rho;
    let mut out = Vec::new();
    let mut sum = cz.good.values.clone();
    let mut covered = vec![false; grid.len()];
    let mut total_volume = 0.0;
    for (j, b) in cz.bad.iter().enumerate() {
        let cells = b.cube.cells(&grid);
        for (&i, v) in cells.iter().zip(&b.values) {
            sum[i] += v;
            if covered[i] {
                out.push(format!("cube {j} overlaps an earlier cube"));
                break;
            }
            covered[i] = true;
        }
        let l1 = neumaier_sum(b.values.iter().map(|v| v.abs()));
        let integral = neumaier_sum(b.values.iter().copied());
        if integral.abs() > tol * l1.max(f64::MIN_POSITIVE) {
            out.push(format!("cube {j}: integral of b is {integral}"));
        }
        let avg = cube_average(f, &b.cube);
        if !(avg > rho && avg <= 2f64.powi(n) * rho) {
            out.push(format!("cube {j}: average {avg} outside ({rho}, {}]", 2f64.powi(n) * rho));
        }
        total_volume += b.cube.volume() as f64 * grid.cell_measure();
    }
    for i in 0..grid.len() {
        if (sum[i] - f.values[i]).abs() > tol {
            out.push(format!("cell {i}: g + sum b differs from f by {}", sum[i] - f.values[i]));
            break;
        }
    }
    let g_max = cz.good.linf();
    if g_max > 2f64.powi(n) * rho {
        out.push(format!("sup |g| = {g_max} exceeds 2^n rho"));
    }
    if total_volume > f.l1() / rho {
        out.push(format!("total cube measure {total_volume} exceeds ||f||_1 / rho = {}", f.l1() / rho));
    }
    out
}

/// A member of a sparse family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCube {
    pub cube: Cube,
    pub generation: i32,
    pub shift: Shift,
    /// Index of the cube whose stopping step produced this one.
    pub parent: Option<usize>,
}

/// Stopping data recorded at one node of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub cube: Cube,
    pub gamma: f64,
    pub threshold: f64,
    /// `|E|` in cells.
    pub exceptional_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub grid: Grid,
    pub root: Cube,
    pub eta: f64,
    pub cubes: Vec<FamilyCube>,
    #[serde(default)]
    pub nodes: Vec<NodeRecord>,
}

impl SparseFamily {
    /// Family of plain cubes under `root`, without parent links.
    pub fn from_cubes(grid: Grid, root: Cube, eta: f64, cubes: &[Cube]) -> Self {
        let cubes = cubes
            .iter()
            .map(|c| FamilyCube { cube: *c, generation: c.generation(&grid), shift: Shift::Standard, parent: None })
            .collect();
        SparseFamily { grid, root, eta, cubes, nodes: Vec::new() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Deepest nesting level below the root, root being 0.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        for i in 0..self.cubes.len() {
            let mut d = 0;
            let mut p = self.cubes[i].parent;
            while let Some(j) = p {
                d += 1;
                p = self.cubes[j].parent;
            }
            best = best.max(d);
        }
        best
    }
}

/// Worst sparseness ratio of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseReport {
    pub sparse: bool,
    /// `max_Q |union of members strictly inside Q| / |Q|`.
    pub worst_ratio: f64,
    pub worst_cube: Option<Cube>,
}

/// Exact lattice check of `|U_{R in family, R strictly inside Q} R| <= (1 - eta)|Q|`.
pub fn verify_sparse(family: &SparseFamily, eta: f64) -> Result<SparseReport> {
    if !(eta > 0.0 && eta < 1.0) {
        return param(format!("eta must lie in (0, 1), got {eta}"));
    }
    let cubes: Vec<Cube> = {
        let mut v: Vec<Cube> = family.cubes.iter().map(|c| c.cube).collect();
        v.sort();
        v.dedup();
        v
    };
    for c in &cubes {
        if c.n != family.root.n || !family.root.contains(c) {
            return Err(Error::Geometry(format!("cube {c:?} lies outside the root {:?}", family.root)));
        }
    }
    let mut worst = 0.0f64;
    let mut worst_cube = None;
    for q in &cubes {
        let side = q.side as usize;
        let mut mark = vec![false; side.pow(q.n as u32)];
        for r in &cubes {
            if r == q || !q.contains(r) {
                continue;
            }
            let o0 = (r.lo[0] - q.lo[0]) as usize;
            let o1 = (r.lo[1] - q.lo[1]) as usize;
            let s = r.side as usize;
            if q.n == 1 {
                mark[o0..o0 + s].iter_mut().for_each(|m| *m = true);
            } else {
                for a in o0..o0 + s {
                    mark[a * side + o1..a * side + o1 + s].iter_mut().for_each(|m| *m = true);
                }
            }
        }
        let ratio = mark.iter().filter(|m| **m).count() as f64 / mark.len() as f64;
        if ratio > worst || worst_cube.is_none() {
            worst = worst.max(ratio);
            worst_cube = Some(*q);
        }
    }
    Ok(SparseReport { sparse: worst <= 1.0 - eta, worst_ratio: worst, worst_cube })
}

/// `[sum_P (prod_i <|f_i|>_{dP})^2 1_P]^{1/2}` with `d` in `{1, 3}`.
pub fn sparse_rhs_eval(family: &SparseFamily, inputs: &[GridFunction], dilate: i64) -> Result<GridFunction> {
    if dilate != 1 && dilate != 3 {
        return param(format!("dilation must be 1 or 3, got {dilate}"));
    }
    if inputs.is_empty() || inputs.len() > 2 {
        return param("need one or two input functions");
    }
    let grid = family.grid;
    for f in inputs {
        if !f.grid.same_as(&grid) {
            return Err(Error::GridMismatch("input grid differs from the family grid".into()));
        }
    }
    let mut acc = vec![0.0; grid.len()];
    for c in &family.cubes {
        let big = c.cube.dilate(dilate);
        let prod: f64 = inputs.iter().map(|f| cube_average(f, &big)).product();
        for i in c.cube.cells(&grid) {
            acc[i] += prod * prod;
        }
    }
    Ok(GridFunction { grid, values: acc.into_iter().map(f64::sqrt).collect() })
}

/// Settings for [`sparse_construct`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseParams {
    /// `None` selects the automatic doubling search.
    pub gamma: Option<f64>,
    pub max_doublings: u32,
    pub backend: Backend,
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams { gamma: None, max_doublings: 200, backend: Backend::Direct }
    }
}

fn count_in(e: &[bool], grid: &Grid, p: &Cube) -> usize {
    p.cells(grid).into_iter().filter(|&i| e[i]).count()
}

/// Maximal dyadic `P` strictly inside `q` with `|P cap E| > 2^{-n-1}|P|`,
/// and their maximal distinct parents.
fn stopping_parents(e: &[bool], grid: &Grid, q: &Cube) -> Vec<Cube> {
    let n = q.n as u32;
    let mut selected = Vec::new();
    let mut stack: Vec<Cube> = q.children();
    while let Some(p) = stack.pop() {
        let cnt = count_in(e, grid, &p);
        if cnt == 0 {
            continue;
        }
        // |P cap E| / |P| > 2^{-n-1}  <=>  2^{n+1} cnt > |P|
        if (cnt as i64) << (n + 1) > p.volume() {
            selected.push(p);
        } else {
            stack.extend(p.children());
        }
    }
    let mut parents: Vec<Cube> = selected.iter().map(|p| p.parent()).collect();
    parents.sort();
    parents.dedup();
    let all = parents.clone();
    parents.retain(|p| !all.iter().any(|o| o != p && o.contains(p)));
    parents
}

/// Builds a 1/2-sparse family under `q0` by the stopping-time recursion.
///
/// At each node `Q` the input is `f 1_{3Q}`, `M = max(S_alpha, M_S)` over the
/// dyadic subcubes of `Q` and their triples, and
/// `E = {x in Q : M > gamma^{1/2} c_K <|f|>_{3Q}}` with
/// `c_K = [w]_Dini [phi]_Dini + 1`. In automatic mode `gamma` doubles from 1
/// until `|E| <= 2^{-n-1}|Q|` and the stopping parents cover at most half
/// of `Q`. Only maximal parents are kept, so siblings are disjoint.
pub fn sparse_construct(
    k: &KernelSpec,
    f: &GridFunction,
    q0: &Cube,
    cone: &ConeGrid,
    params: &SparseParams,
) -> Result<SparseFamily> {
    let grid = f.grid;
    if !grid.is_dyadic() || !q0.is_dyadic() || !Cube::root(&grid).contains(q0) {
        return param("sparse construction needs a dyadic grid and a dyadic cube inside the box");
    }
    if k.is_bilinear() {
        return param("sparse construction is implemented for linear kernels");
    }
    let triple = q0.dilate(3);
    let outside = f.values.iter().enumerate().any(|(i, v)| *v != 0.0 && !triple.contains_cell(grid.cell(i)));
    if outside {
        return Err(Error::Geometry("input is not supported in 3Q0".into()));
    }
    if let Some(g) = params.gamma {
        if !(g > 0.0) {
            return param(format!("gamma must be positive, got {g}"));
        }
    }
    let c_k = k.dini_product()? + 1.0;
    let mut family = SparseFamily {
        grid,
        root: *q0,
        eta: 0.5,
        cubes: vec![FamilyCube { cube: *q0, generation: q0.generation(&grid), shift: Shift::Standard, parent: None }],
        nodes: Vec::new(),
    };
    let mut queue = VecDeque::from([(0usize, f.clone())]);
    while let Some((idx, local_in)) = queue.pop_front() {
        let q = family.cubes[idx].cube;
        if q.side == 1 {
            continue;
        }
        let local = restrict(std::slice::from_ref(&local_in), &q.dilate(3), false).remove(0);
        let avg = cube_average(&local, &q.dilate(3));
        if avg == 0.0 {
            continue;
        }
        let out = lerner_maximal(
            k,
            std::slice::from_ref(&local),
            cone,
            &CubePool::DyadicAndTriples,
            Some(&q),
            params.backend,
        )?;
        let cells = q.cells(&grid);
        let mtilde: Vec<f64> = (0..grid.len()).map(|i| out.s.values[i].max(out.m.values[i])).collect();
        let half_volume = q.volume() / 2;
        let mut gamma = params.gamma.unwrap_or(1.0);
        let mut doublings = 0;
        let (e, parents, threshold) = loop {
            let threshold = gamma.sqrt() * c_k * avg;
            let mut e = vec![false; grid.len()];
            for &i in &cells {
                e[i] = mtilde[i] > threshold;
            }
            let e_count = cells.iter().filter(|&&i| e[i]).count();
            let parents = stopping_parents(&e, &grid, &q);
            let covered: i64 = parents.iter().map(|p| p.volume()).sum();
            let small = ((e_count as i64) << (q.n + 1)) <= q.volume();
            if params.gamma.is_some() || (small && covered <= half_volume) {
                break (e_count, parents, threshold);
            }
            doublings += 1;
            if doublings > params.max_doublings {
                return Err(Error::Construction(format!(
                    "gamma search stopped at {gamma} with |E| = {e_count} cells of {} in {q:?}",
                    q.volume()
                )));
            }
            gamma *= 2.0;
        };
        family.nodes.push(NodeRecord { cube: q, gamma, threshold, exceptional_cells: e });
        for p in parents {
            family.cubes.push(FamilyCube {
                cube: p,
                generation: p.generation(&grid),
                shift: Shift::Standard,
                parent: Some(idx),
            });
            queue.push_back((family.cubes.len() - 1, local.clone()));
        }
    }
    Ok(family)
}

/// [`sparse_construct`] with the FFT path when the kernel passes the gate.
pub fn sparse_construct_auto(k: &KernelSpec, f: &GridFunction, q0: &Cube, cone: &ConeGrid) -> Result<SparseFamily> {
    let params = SparseParams { backend: gated_backend(k), ..SparseParams::default() };
    sparse_construct(k, f, q0, cone, &params)
}

/// One of the shifted interval families in integer units of `2^{-g_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedFamily {
    pub k: u8,
    /// Length of one unit.
    pub unit: f64,
    pub g_min: i32,
    pub g_max: i32,
    /// `(lo, len)` in units, sorted.
    pub intervals: Vec<(i64, i64)>,
}

impl ShiftedFamily {
    /// Intervals `[lo, hi)` in physical coordinates.
    pub fn physical(&self) -> Vec<(f64, f64)> {
        self.intervals.iter().map(|&(lo, len)| (lo as f64 * self.unit, (lo + len) as f64 * self.unit)).collect()
    }

    pub fn contains(&self, lo: i64, len: i64) -> bool {
        self.intervals.binary_search(&(lo, len)).is_ok()
    }
}

/// Iteration budget for the closure fixpoint.
pub const SHIFTED_BUDGET: usize = 10_000_000;

/// Closure of `{[3j + k - 1, 3j + k)}` under the adjacency rule: an interval
/// of double or half length whose closure meets a member's closure in one
/// point joins the family. Lengths are `2^{-g}` for `g` in `g_min..=g_max`
/// (0 must be included) and only intervals meeting `[a, b]` are kept.
pub fn shifted_family(k: u8, g_min: i32, g_max: i32, window: (f64, f64)) -> Result<ShiftedFamily> {
    if !(1..=3).contains(&k) {
        return param(format!("shift index must be 1, 2 or 3, got {k}"));
    }
    if !(g_min <= 0 && 0 <= g_max) || g_max - g_min > 40 {
        return param("generation range must contain 0 and span at most 40");
    }
    let (a, b) = window;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return param("window must be a bounded nonempty interval");
    }
    let scale = 2f64.powi(g_max);
    let unit = 1.0 / scale;
    let one = 1i64 << g_max;
    let (wa, wb) = ((a * scale).floor() as i64, (b * scale).ceil() as i64);
    let min_len = 1i64;
    let max_len = 1i64 << (g_max - g_min);
    let inside = |lo: i64, len: i64| lo <= wb && lo + len > wa;
    let mut seen: HashSet<(i64, i64)> = HashSet::new();
    let mut queue = VecDeque::new();
    let j_lo = (wa.div_euclid(one) - 1) / 3 - 1;
    let j_hi = wb.div_euclid(one) / 3 + 1;
    for j in j_lo..=j_hi {
        let lo = (3 * j + k as i64 - 1) * one;
        if inside(lo, one) && seen.insert((lo, one)) {
            queue.push_back((lo, one));
        }
    }
    let mut steps = 0usize;
    while let Some((lo, len)) = queue.pop_front() {
        steps += 1;
        if steps > SHIFTED_BUDGET {
            return Err(Error::BudgetExceeded { partial: seen.len() as f64 });
        }
        for nl in [len * 2, len / 2] {
            if nl < min_len || nl > max_len || (nl == len / 2 && len % 2 != 0) {
                continue;
            }
            // touching on the right: [hi, hi + nl); on the left: [lo - nl, lo)
            for cand in [(lo + len, nl), (lo - nl, nl)] {
                if inside(cand.0, cand.1) && seen.insert(cand) {
                    queue.push_back(cand);
                }
            }
        }
    }
    let mut intervals: Vec<(i64, i64)> = seen.into_iter().collect();
    intervals.sort();
    Ok(ShiftedFamily { k, unit, g_min, g_max, intervals })
}

/// Products of equal-length intervals from families `k[0]` and `k[1]`,
/// as `(lo, len)` per axis in units.
pub fn shifted_product(a: &ShiftedFamily, b: &ShiftedFamily) -> Vec<[(i64, i64); 2]> {
    let mut out = Vec::new();
    for &x in &a.intervals {
        for &y in b.intervals.iter().filter(|y| y.1 == x.1) {
            out.push([x, y]);
        }
    }
    out
}

/// Outcome of the covering check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub checked: usize,
    pub failures: usize,
    pub first_failure: Option<(f64, f64)>,
    /// Largest `len(member) / len(interval)` needed.
    pub worst_ratio: f64,
}

/// Checks that every interval `[lo, hi)` with endpoints on the unit lattice,
/// inside `window` and of length at most `max_len`, lies in a member of one
/// of `families` whose length is at most `factor` times its own.
pub fn covering_check(
    families: &[ShiftedFamily],
    window: (f64, f64),
    max_len: f64,
    factor: f64,
) -> Result<CoveringReport> {
    let Some(first) = families.first() else {
        return param("no families given");
    };
    if families.iter().any(|f| f.g_max != first.g_max) {
        return param("families must share the unit");
    }
    let scale = 2f64.powi(first.g_max);
    let (wa, wb) = ((window.0 * scale).round() as i64, (window.1 * scale).round() as i64);
    let lmax = (max_len * scale).floor() as i64;
    let mut report = CoveringReport { checked: 0, failures: 0, first_failure: None, worst_ratio: 0.0 };
    for len in 1..=lmax {
        for lo in wa..=wb - len {
            report.checked += 1;
            let mut best: Option<i64> = None;
            for fam in families {
                let mut m = 1i64 << (first.g_max - fam.g_min);
                while m >= len {
                    if (m as f64) <= factor * len as f64 {
                        let found = (lo + len - m..=lo).any(|s| fam.contains(s, m));
                        if found {
                            best = Some(best.map_or(m, |b: i64| b.min(m)));
                        }
                    }
                    m /= 2;
                }
            }
            match best {
                Some(m) => report.worst_ratio = report.worst_ratio.max(m as f64 / len as f64),
                None => {
                    report.failures += 1;
                    if report.first_failure.is_none() {
                        report.first_failure = Some((lo as f64 / scale, (lo + len) as f64 / scale));
                    }
                }
            }
        }
    }
    Ok(report)
}
