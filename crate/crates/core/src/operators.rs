//! Discrete square functions, maximal operators and the auxiliary
//! majorants used in the domination arguments.
//!
//! Conventions: `psi_t f(x) = t^{-n} int psi(x/t, y/t) f(y) dy` evaluated by
//! the midpoint rule on the grid; bilinear kernels use `t^{-2n}` and a
//! double sum. Cone points outside the box are dropped.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dyadic::{dyadic_cubes, dyadic_subcubes, Cube};
use crate::error::{param, Error, Result};
use crate::kernels::{cube_maximal, KernelKind, KernelSpec};
use crate::moduli::{dini_constant, Modulus};
use crate::sampling::{ConeGrid, Grid, GridFunction, Stencil};

/// Evaluation strategy for `psi_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// Midpoint sums; the reference path.
    Direct,
    /// Zero-padded FFT convolution for convolution kernels; other kernels
    /// fall back to direct sums.
    Fft,
}

fn check_inputs(k: &KernelSpec, inputs: &[GridFunction]) -> Result<Grid> {
    if inputs.len() != k.arity() {
        return param(format!("kernel {} takes {} inputs, got {}", k.name, k.arity(), inputs.len()));
    }
    let g = inputs[0].grid;
    for f in &inputs[1..] {
        inputs[0].check_grid(f)?;
    }
    Ok(g)
}

fn support(f: &GridFunction) -> Vec<([usize; 2], f64)> {
    f.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (f.grid.cell(i), *v)).collect()
}

/// `t^{-n} phi(d h / t)` for all lattice differences, indexed by
/// `d + N - 1` per axis.
fn difference_table(k: &KernelSpec, grid: &Grid, t: f64) -> Vec<f64> {
    let n = grid.n;
    let w = 2 * grid.size - 1;
    let off = grid.size as i64 - 1;
    let scale = t.powi(-(n as i32));
    let p = match &k.kind {
        KernelKind::Convolution(p) => p,
        _ => unreachable!(),
    };
    if n == 1 {
        (0..w).map(|i| scale * p.eval(&[(i as i64 - off) as f64 * grid.h / t])).collect()
    } else {
        (0..w * w)
            .into_par_iter()
            .map(|idx| {
                let (a, b) = (idx / w, idx % w);
                let x = [(a as i64 - off) as f64 * grid.h / t, (b as i64 - off) as f64 * grid.h / t];
                scale * p.eval(&x)
            })
            .collect()
    }
}

fn conv_direct(grid: &Grid, table: &[f64], supp: &[([usize; 2], f64)]) -> Vec<f64> {
    let hn = grid.cell_measure();
    let size = grid.size;
    let w = 2 * size - 1;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.cell(i);
            let mut acc = 0.0;
            if grid.n == 1 {
                for &(s, v) in supp {
                    acc += table[c[0] + size - 1 - s[0]] * v;
                }
            } else {
                for &(s, v) in supp {
                    acc += table[(c[0] + size - 1 - s[0]) * w + (c[1] + size - 1 - s[1])] * v;
                }
            }
            acc * hn
        })
        .collect()
}

fn fft_2d(data: &mut [Complex64], m: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        for i in 0..m {
            col[i] = data[i * m + j];
        }
        fft.process(&mut col);
        for i in 0..m {
            data[i * m + j] = col[i];
        }
    }
}

fn conv_fft(grid: &Grid, table: &[f64], f: &GridFunction) -> Vec<f64> {
    let size = grid.size;
    let m = 2 * size;
    let off = size as i64 - 1;
    let w = 2 * size - 1;
    let mut planner = FftPlanner::<f64>::new();
    let hn = grid.cell_measure();
    if grid.n == 1 {
        let mut a = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..size {
            a[i].re = f.values[i];
        }
        let mut b = vec![Complex64::new(0.0, 0.0); m];
        for (i, v) in table.iter().enumerate() {
            let d = i as i64 - off;
            b[d.rem_euclid(m as i64) as usize].re = *v;
        }
        let fwd = planner.plan_fft_forward(m);
        fwd.process(&mut a);
        fwd.process(&mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x *= *y;
        }
        planner.plan_fft_inverse(m).process(&mut a);
        return (0..size).map(|i| a[i].re / m as f64 * hn).collect();
    }
    let mut a = vec![Complex64::new(0.0, 0.0); m * m];
    for i0 in 0..size {
        for i1 in 0..size {
            a[i0 * m + i1].re = f.values[i0 * size + i1];
        }
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m * m];
    for a0 in 0..w {
        for a1 in 0..w {
            let d0 = (a0 as i64 - off).rem_euclid(m as i64) as usize;
            let d1 = (a1 as i64 - off).rem_euclid(m as i64) as usize;
            b[d0 * m + d1].re = table[a0 * w + a1];
        }
    }
    fft_2d(&mut a, m, false, &mut planner);
    fft_2d(&mut b, m, false, &mut planner);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    fft_2d(&mut a, m, true, &mut planner);
    let norm = (m * m) as f64;
    let mut out = vec![0.0; size * size];
    for i0 in 0..size {
        for i1 in 0..size {
            out[i0 * size + i1] = a[i0 * m + i1].re / norm * hn;
        }
    }
    out
}

/// `psi_t` applied to `inputs` (one function for linear kernels, two for
/// bilinear ones), sampled on the common grid.
pub fn psi_t_apply(k: &KernelSpec, inputs: &[GridFunction], t: f64, backend: Backend) -> Result<GridFunction> {
    let grid = check_inputs(k, inputs)?;
    if !(t > 0.0) {
        return param("t must be positive");
    }
    let values = psi_t_values(k, inputs, &grid, t, backend);
    Ok(GridFunction { grid, values })
}

fn psi_t_values(k: &KernelSpec, inputs: &[GridFunction], grid: &Grid, t: f64, backend: Backend) -> Vec<f64> {
    let n = grid.n;
    match &k.kind {
        KernelKind::Convolution(_) => {
            let table = difference_table(k, grid, t);
            let supp = support(&inputs[0]);
            if supp.is_empty() {
                return vec![0.0; grid.len()];
            }
            let dense = supp.len() * 16 > grid.len();
            if backend == Backend::Fft && dense {
                conv_fft(grid, &table, &inputs[0])
            } else {
                conv_direct(grid, &table, &supp)
            }
        }
        KernelKind::Linear(f) => {
            let supp = support(&inputs[0]);
            let pts: Vec<([f64; 2], f64)> = supp
                .iter()
                .map(|&(c, v)| ([grid.coord(c[0]) / t, if n == 2 { grid.coord(c[1]) / t } else { 0.0 }], v))
                .collect();
            let scale = grid.cell_measure() * t.powi(-(n as i32));
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let p = grid.point(i);
                    let x = [p[0] / t, p[1] / t];
                    pts.iter().map(|(y, v)| f(&x[..n], &y[..n]) * v).sum::<f64>() * scale
                })
                .collect()
        }
        KernelKind::BilinearConvolution(_) | KernelKind::Bilinear(_) => {
            let s1 = support(&inputs[0]);
            let s2 = support(&inputs[1]);
            let pts = |s: &[([usize; 2], f64)]| -> Vec<([f64; 2], f64)> {
                s.iter()
                    .map(|&(c, v)| ([grid.coord(c[0]) / t, if n == 2 { grid.coord(c[1]) / t } else { 0.0 }], v))
                    .collect()
            };
            let (p1, p2) = (pts(&s1), pts(&s2));
            let scale = grid.cell_measure().powi(2) * t.powi(-2 * n as i32);
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let p = grid.point(i);
                    let x = [p[0] / t, p[1] / t];
                    let mut acc = 0.0;
                    for (y1, v1) in &p1 {
                        let mut inner = 0.0;
                        for (y2, v2) in &p2 {
                            inner += k.eval_bilinear(&x[..n], &y1[..n], &y2[..n]) * v2;
                        }
                        acc += inner * v1;
                    }
                    acc * scale
                })
                .collect()
        }
    }
}

/// `psi_t f` at every scale of a cone.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStack {
    pub grid: Grid,
    pub t: Vec<f64>,
    pub log_weight: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Computes `psi_t f` at the scales of `cone`.
pub fn psi_levels(k: &KernelSpec, inputs: &[GridFunction], cone: &ConeGrid, backend: Backend) -> Result<LevelStack> {
    let grid = check_inputs(k, inputs)?;
    check_cone(&grid, cone)?;
    let values = cone.levels.iter().map(|l| psi_t_values(k, inputs, &grid, l.t, backend)).collect();
    Ok(LevelStack { grid, t: cone.scales(), log_weight: cone.levels.iter().map(|l| l.log_weight).collect(), values })
}

fn check_cone(grid: &Grid, cone: &ConeGrid) -> Result<()> {
    if cone.n != grid.n || (cone.h - grid.h).abs() > 1e-12 * grid.h {
        return Err(Error::GridMismatch(format!(
            "cone built for n={}, h={} used on n={}, h={}",
            cone.n, cone.h, grid.n, grid.h
        )));
    }
    Ok(())
}

/// Per-row dyadic block sums of a nonnegative array. A window sum is
/// assembled from at most `2 log N` nonnegative blocks, so it keeps full
/// relative accuracy far from the mass, unlike prefix-sum differences.
struct RowSums {
    rows: Vec<Vec<Vec<f64>>>,
}

impl RowSums {
    fn new(values: &[f64], row_len: usize) -> Self {
        let rows = values
            .chunks(row_len)
            .map(|row| {
                let mut levels = vec![row.to_vec()];
                while levels.last().unwrap().len() > 1 {
                    let prev = levels.last().unwrap();
                    let next: Vec<f64> = prev.chunks(2).map(|c| c.iter().sum()).collect();
                    levels.push(next);
                }
                levels
            })
            .collect();
        RowSums { rows }
    }

    /// Sum over `[lo, hi)` of row `r`.
    fn range(&self, r: usize, mut lo: usize, hi: usize) -> f64 {
        let levels = &self.rows[r];
        let mut acc = 0.0;
        while lo < hi {
            let mut k = 0;
            while k + 1 < levels.len() && lo.is_multiple_of(2 << k) && lo + (2 << k) <= hi {
                k += 1;
            }
            acc += levels[k][lo >> k];
            lo += 1 << k;
        }
        acc
    }
}

fn cone_sum(grid: &Grid, sums: &RowSums, stencil: &Stencil, c: [usize; 2]) -> f64 {
    let n = grid.size as i64;
    if grid.n == 1 {
        let k = stencil.rows[0].1;
        let lo = (c[0] as i64 - k).max(0) as usize;
        let hi = (c[0] as i64 + k).min(n - 1) as usize;
        return sums.range(0, lo, hi + 1);
    }
    let mut acc = 0.0;
    for &(a, b) in &stencil.rows {
        let r = c[0] as i64 + a;
        if r < 0 || r >= n {
            continue;
        }
        let lo = (c[1] as i64 - b).max(0) as usize;
        let hi = (c[1] as i64 + b).min(n - 1) as usize;
        acc += sums.range(r as usize, lo, hi + 1);
    }
    acc
}

impl LevelStack {
    fn check(&self, cone: &ConeGrid) -> Result<()> {
        check_cone(&self.grid, cone)?;
        let same = cone.levels.len() == self.t.len()
            && cone.levels.iter().zip(&self.t).all(|(l, t)| (l.t - t).abs() <= 1e-12 * t);
        if same {
            Ok(())
        } else {
            Err(Error::GridMismatch("cone scales differ from the stored levels".into()))
        }
    }

    fn squares(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| v.iter().map(|x| x * x).collect()).collect()
    }

    fn square_sums(&self) -> Vec<RowSums> {
        self.values
            .par_iter()
            .map(|v| {
                let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
                RowSums::new(&sq, self.grid.size)
            })
            .collect()
    }

    /// `S_alpha^2` at the given flat indices.
    pub fn square_sq_at(&self, cone: &ConeGrid, cells: &[usize]) -> Result<Vec<f64>> {
        self.check(cone)?;
        Ok(square_sq_from(&self.grid, cone, &self.square_sums(), cells))
    }

    /// `S_alpha f` on the whole grid.
    pub fn square_function(&self, cone: &ConeGrid) -> Result<GridFunction> {
        let cells: Vec<usize> = (0..self.grid.len()).collect();
        let v = self.square_sq_at(cone, &cells)?;
        Ok(GridFunction { grid: self.grid, values: v.into_iter().map(f64::sqrt).collect() })
    }

    /// `g*_lambda f` using every box point at every stored scale.
    pub fn g_star(&self, lambda: f64) -> GridFunction {
        let grid = self.grid;
        let n = grid.n;
        let size = grid.size;
        let sq = self.squares();
        let weights: Vec<Vec<f64>> = self
            .t
            .iter()
            .map(|&t| {
                let e = n as f64 * lambda;
                if n == 1 {
                    (0..size).map(|d| (t / (t + d as f64 * grid.h)).powf(e)).collect()
                } else {
                    (0..size * size)
                        .map(|idx| {
                            let (a, b) = ((idx / size) as f64, (idx % size) as f64);
                            (t / (t + grid.h * (a * a + b * b).sqrt())).powf(e)
                        })
                        .collect()
                }
            })
            .collect();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let c = grid.cell(i);
                let mut total = 0.0;
                for (j, &t) in self.t.iter().enumerate() {
                    let wt = &weights[j];
                    let s = &sq[j];
                    let mut acc = 0.0;
                    if n == 1 {
                        for (y, v) in s.iter().enumerate() {
                            acc += wt[c[0].abs_diff(y)] * v;
                        }
                    } else {
                        for y in 0..grid.len() {
                            let (y0, y1) = (y / size, y % size);
                            acc += wt[c[0].abs_diff(y0) * size + c[1].abs_diff(y1)] * s[y];
                        }
                    }
                    total += acc * (grid.h / t).powi(n as i32) * self.log_weight[j];
                }
                total.sqrt()
            })
            .collect();
        GridFunction { grid, values }
    }

    /// `self - other`, level by level.
    pub fn minus(&self, other: &LevelStack) -> LevelStack {
        let values =
            self.values.iter().zip(&other.values).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        LevelStack { grid: self.grid, t: self.t.clone(), log_weight: self.log_weight.clone(), values }
    }
}

fn square_sq_from(grid: &Grid, cone: &ConeGrid, sq: &[RowSums], cells: &[usize]) -> Vec<f64> {
    cells
        .par_iter()
        .map(|&i| {
            let c = grid.cell(i);
            cone.levels
                .iter()
                .zip(sq)
                .map(|(l, s)| cone_sum(grid, s, &l.stencil, c) * (grid.h / l.t).powi(grid.n as i32) * l.log_weight)
                .sum()
        })
        .collect()
}

/// `S_alpha f(x) = (sum_levels sum_{|y-x| < alpha t} |psi_t f(y)|^2 (h/t)^n ln r)^{1/2}`.
pub fn square_function(
    k: &KernelSpec,
    inputs: &[GridFunction],
    cone: &ConeGrid,
    backend: Backend,
) -> Result<GridFunction> {
    psi_levels(k, inputs, cone, backend)?.square_function(cone)
}

/// `g*_lambda f`; needs `lambda > 2` (linear) or `lambda > 4` (bilinear).
pub fn g_star(
    k: &KernelSpec,
    inputs: &[GridFunction],
    cone: &ConeGrid,
    lambda: f64,
    backend: Backend,
) -> Result<GridFunction> {
    let min = 2.0 * k.arity() as f64;
    if !(lambda > min) {
        return param(format!("g* needs lambda > {min}, got {lambda}"));
    }
    Ok(psi_levels(k, inputs, cone, backend)?.g_star(lambda))
}

/// Variants of the Hardy-Littlewood maximal operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxVariant {
    /// Uncentred, over grid-aligned cubes inside the box.
    Hl,
    /// Over dyadic cubes of the box-rooted tree.
    Dyadic,
    /// `(M_hl |f|^s)^{1/s}`.
    Powered(f64),
}

fn sliding_max(vals: &[f64], win: usize, out_len: usize) -> Vec<f64> {
    // out[x] = max vals[i] for i in [x - win + 1, x] cap [0, vals.len())
    let mut out = vec![f64::NEG_INFINITY; out_len];
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0usize;
    for (x, o) in out.iter_mut().enumerate() {
        while next < vals.len() && next <= x {
            while dq.back().is_some_and(|&b| vals[b] <= vals[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&f| f + win <= x) {
            dq.pop_front();
        }
        if let Some(&f) = dq.front() {
            *o = vals[f];
        }
    }
    out
}

/// Maximal function of `|f|` (or `|f|^s`).
pub fn maximal(f: &GridFunction, variant: MaxVariant) -> Result<GridFunction> {
    let grid = f.grid;
    let size = grid.size;
    match variant {
        MaxVariant::Powered(s) => {
            if !(s > 0.0) {
                return param("power must be positive");
            }
            let g = GridFunction { grid, values: f.values.iter().map(|v| v.abs().powf(s)).collect() };
            let m = maximal(&g, MaxVariant::Hl)?;
            Ok(GridFunction { grid, values: m.values.iter().map(|v| v.powf(1.0 / s)).collect() })
        }
        MaxVariant::Dyadic => {
            if !grid.is_dyadic() {
                return param("dyadic maximal function needs 2R/h a power of two");
            }
            let mut out = vec![0.0f64; grid.len()];
            for q in dyadic_cubes(&grid) {
                let cells = q.cells(&grid);
                let avg = cells.iter().map(|&i| f.values[i].abs()).sum::<f64>() / cells.len() as f64;
                for &i in &cells {
                    out[i] = out[i].max(avg);
                }
            }
            Ok(GridFunction { grid, values: out })
        }
        MaxVariant::Hl => {
            let abs: Vec<f64> = f.values.iter().map(|v| v.abs()).collect();
            if grid.n == 1 {
                let mut pre = vec![0.0; size + 1];
                for i in 0..size {
                    pre[i + 1] = pre[i] + abs[i];
                }
                let per_len: Vec<Vec<f64>> = (1..=size)
                    .into_par_iter()
                    .map(|l| {
                        let means: Vec<f64> = (0..=size - l).map(|i| (pre[i + l] - pre[i]) / l as f64).collect();
                        sliding_max(&means, l, size)
                    })
                    .collect();
                let values = (0..size).map(|x| per_len.iter().map(|m| m[x]).fold(0.0, f64::max)).collect();
                return Ok(GridFunction { grid, values });
            }
            let w = size + 1;
            let mut pre = vec![0.0; w * w];
            for i in 0..size {
                for j in 0..size {
                    pre[(i + 1) * w + j + 1] =
                        abs[i * size + j] + pre[i * w + j + 1] + pre[(i + 1) * w + j] - pre[i * w + j];
                }
            }
            let per_len: Vec<Vec<f64>> = (1..=size)
                .into_par_iter()
                .map(|l| {
                    let m = size - l + 1;
                    let area = (l * l) as f64;
                    let mut means = vec![0.0; m * m];
                    for i in 0..m {
                        for j in 0..m {
                            means[i * m + j] = (pre[(i + l) * w + j + l] - pre[i * w + j + l] - pre[(i + l) * w + j]
                                + pre[i * w + j])
                                / area;
                        }
                    }
                    // max over rows then columns
                    let mut rows = vec![0.0; m * size];
                    for i in 0..m {
                        let r = sliding_max(&means[i * m..(i + 1) * m], l, size);
                        rows[i * size..(i + 1) * size].copy_from_slice(&r);
                    }
                    let mut out = vec![0.0; size * size];
                    let mut col = vec![0.0; m];
                    for j in 0..size {
                        for i in 0..m {
                            col[i] = rows[i * size + j];
                        }
                        let c = sliding_max(&col, l, size);
                        for i in 0..size {
                            out[i * size + j] = c[i];
                        }
                    }
                    out
                })
                .collect();
            let values = (0..size * size).map(|x| per_len.iter().map(|m| m[x]).fold(0.0, f64::max)).collect();
            Ok(GridFunction { grid, values })
        }
    }
}

/// Cube pools for the local maximal operators.
#[derive(Debug, Clone, PartialEq)]
pub enum CubePool {
    /// Dyadic cubes together with their concentric triples.
    DyadicAndTriples,
    Dyadic,
    Custom(Vec<Cube>),
}

impl CubePool {
    /// Cubes of the pool restricted to dyadic subcubes of `within`.
    pub fn cubes(&self, grid: &Grid, within: Option<&Cube>) -> Vec<Cube> {
        let base = match within {
            Some(q) => dyadic_subcubes(q),
            None => dyadic_cubes(grid),
        };
        match self {
            CubePool::Dyadic => base,
            CubePool::DyadicAndTriples => {
                let mut v = base.clone();
                v.extend(base.iter().map(|c| c.dilate(3)));
                v
            }
            CubePool::Custom(c) => c.clone(),
        }
    }
}

/// Output of [`lerner_maximal`].
#[derive(Debug, Clone, PartialEq)]
pub struct LernerOutput {
    /// `sup_Q 1_Q(x) |S f(x)^2 - S(f 1_{3Q})(x)^2|^{1/2}`
    pub m: GridFunction,
    /// `sup_Q 1_Q(x) S(f 1_{R^n \ 3Q})(x)`; linear kernels only.
    pub n: Option<GridFunction>,
    /// `S_alpha` of the (localized) input at the evaluated points.
    pub s: GridFunction,
    pub pool_size: usize,
}

/// Multiplies every input by the indicator of `q` (or of its complement).
pub fn restrict(inputs: &[GridFunction], q: &Cube, complement: bool) -> Vec<GridFunction> {
    inputs
        .iter()
        .map(|f| {
            let mut g = f.clone();
            for (i, v) in g.values.iter_mut().enumerate() {
                let inside = q.contains_cell(f.grid.cell(i));
                if inside == complement {
                    *v = 0.0;
                }
            }
            g
        })
        .collect()
}

/// Local sharp maximal operators over a cube pool. With `region`, the
/// inputs are first multiplied by `1_{3 region}` and only points of
/// `region` and pool cubes inside it are used.
pub fn lerner_maximal(
    k: &KernelSpec,
    inputs: &[GridFunction],
    cone: &ConeGrid,
    pool: &CubePool,
    region: Option<&Cube>,
    backend: Backend,
) -> Result<LernerOutput> {
    let grid = check_inputs(k, inputs)?;
    if !grid.is_dyadic() {
        return param("local maximal operators need 2R/h a power of two");
    }
    let local: Vec<GridFunction> = match region {
        Some(q) => restrict(inputs, &q.dilate(3), false),
        None => inputs.to_vec(),
    };
    let points: Vec<usize> = match region {
        Some(q) => q.cells(&grid),
        None => (0..grid.len()).collect(),
    };
    let cubes = pool.cubes(&grid, region);
    let full = psi_levels(k, &local, cone, backend)?;
    let sq_full = full.square_sums();
    let s2: HashMap<usize, f64> = points.iter().copied().zip(square_sq_from(&grid, cone, &sq_full, &points)).collect();

    let mut m = vec![f64::NAN; grid.len()];
    let mut nn = vec![f64::NAN; grid.len()];
    for &i in &points {
        m[i] = f64::NEG_INFINITY;
        nn[i] = f64::NEG_INFINITY;
    }
    let linear = !k.is_bilinear();
    for q in &cubes {
        let mut cells: Vec<usize> = q.cells(&grid);
        cells.retain(|i| s2.contains_key(i));
        if cells.is_empty() {
            continue;
        }
        let near = restrict(&local, &q.dilate(3), false);
        let inner = psi_levels(k, &near, cone, backend)?;
        let s2_in = square_sq_from(&grid, cone, &inner.square_sums(), &cells);
        let s2_out =
            if linear { Some(square_sq_from(&grid, cone, &full.minus(&inner).square_sums(), &cells)) } else { None };
        for (j, &i) in cells.iter().enumerate() {
            let d = (s2[&i] - s2_in[j]).abs().sqrt();
            m[i] = m[i].max(d);
            if let Some(o) = &s2_out {
                nn[i] = nn[i].max(o[j].sqrt());
            }
        }
    }
    let uncovered: Vec<usize> = points.iter().copied().filter(|&i| m[i] == f64::NEG_INFINITY).collect();
    if let Some(&first) = uncovered.first() {
        return Err(Error::Coverage { count: uncovered.len(), first });
    }
    let fix =
        |v: Vec<f64>| GridFunction { grid, values: v.into_iter().map(|x| if x.is_nan() { 0.0 } else { x }).collect() };
    let mut sv = vec![0.0; grid.len()];
    for (&i, v) in &s2 {
        sv[i] = v.sqrt();
    }
    Ok(LernerOutput {
        m: fix(m),
        n: if linear { Some(fix(nn)) } else { None },
        s: GridFunction { grid, values: sv },
        pool_size: cubes.len(),
    })
}

/// Majorant of `S_1 b(x)` away from the cube `Q(c, ell)` (side `ell`)
/// carrying `b`:
/// `A [w] |x-c|^{-n} phi(2 sqrt(n) ell/|x-c|) ||b||_1`
/// `+ sum_k A 2^{-kn/2} (2^k ell + |x-c|)^{-n} w(2^{k+2} ell/(2^k ell + |x-c|)) ||b||_1`.
/// Needs `|x - c| > 64 n ell`; the series is cut at `k_max` plus a
/// geometric tail bound.
pub fn far_field_majorant(k: &KernelSpec, b_l1: f64, centre: &[f64], ell: f64, x: &[f64], k_max: u32) -> Result<f64> {
    let n = centre.len();
    let dist = centre.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if !(dist > 64.0 * n as f64 * ell) {
        return Err(Error::Geometry(format!("|x - c| = {dist} must exceed 64 n ell = {}", 64.0 * n as f64 * ell)));
    }
    let d = dini_constant(&k.w, 1e-9)?;
    if d.divergent {
        return Err(Error::Divergent(format!("Dini constant of {}", k.w.name())));
    }
    let nf = n as f64;
    let head = k.a * d.value * dist.powf(-nf) * k.phi.eval(2.0 * nf.sqrt() * ell / dist);
    let mut series = 0.0;
    for j in 1..=k_max {
        let s = 2f64.powi(j as i32) * ell;
        series += 2f64.powf(-(j as f64) * nf / 2.0) * (s + dist).powf(-nf) * k.w.eval(4.0 * s / (s + dist));
    }
    let q = 2f64.powf(-nf / 2.0);
    let tail = k.w.eval(1.0) * dist.powf(-nf) * q.powi(k_max as i32 + 1) / (1.0 - q);
    Ok((head + k.a * (series + tail)) * b_l1)
}

/// A cube `Q(c, r)` (closed, half-side `r`) with weight `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCube {
    pub centre: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
}

/// `F_w(x) = sum_k lambda_k M 1_{Q_k}(x) w(r_k / (r_k + |x - c_k|))` on the
/// grid. Cubes must have pairwise disjoint interiors.
pub fn marcinkiewicz_fw(w: &Modulus, cubes: &[WeightedCube], grid: &Grid) -> Result<GridFunction> {
    for (i, a) in cubes.iter().enumerate() {
        if a.centre.len() != grid.n || !(a.r > 0.0) || !(a.lambda >= 0.0) {
            return param(format!("cube #{i} has wrong dimension, non-positive radius or negative weight"));
        }
        for (j, b) in cubes.iter().enumerate().skip(i + 1) {
            let overlap = a.centre.iter().zip(&b.centre).all(|(p, q)| (p - q).abs() < a.r + b.r);
            if overlap {
                return Err(Error::Disjointness(i, j));
            }
        }
    }
    Ok(GridFunction::from_fn(*grid, |x| {
        cubes
            .iter()
            .map(|c| {
                let d = x.iter().zip(&c.centre).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                c.lambda * cube_maximal(x, &c.centre, c.r) * w.eval(c.r / (c.r + d))
            })
            .sum()
    }))
}

/// Outcome of comparing the FFT path with direct sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub kernel: String,
    pub cases: usize,
    /// `max |fft - direct| / max |direct|` over all cases.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Agreement threshold for the FFT path.
pub const FFT_GATE_TOL: f64 = 1e-8;

/// Compares the two backends on `cases` seeded random inputs.
pub fn fft_oracle_gate(k: &KernelSpec, cases: usize, seed: u64) -> Result<GateReport> {
    if k.is_bilinear() || !matches!(k.kind, KernelKind::Convolution(_)) {
        return param("the FFT path applies to linear convolution kernels");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for c in 0..cases {
        let n = if c % 3 == 2 { 2 } else { 1 };
        let size = if n == 1 { 1usize << rng.gen_range(6..10) } else { 1usize << rng.gen_range(4..6) };
        let h = 1.0 / (1u64 << rng.gen_range(2..5)) as f64;
        let grid = Grid::new(n, size as f64 * h / 2.0, h)?;
        let vals: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = GridFunction::from_values(grid, vals)?;
        let t = h * 2f64.powf(rng.gen_range(1.0..(size as f64).log2()));
        let a = psi_t_apply(k, std::slice::from_ref(&f), t, Backend::Direct)?;
        let b = psi_t_apply(k, std::slice::from_ref(&f), t, Backend::Fft)?;
        let scale = a.linf().max(f64::MIN_POSITIVE);
        let err = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    Ok(GateReport { kernel: k.name.clone(), cases, max_rel_err: worst, passed: worst <= FFT_GATE_TOL })
}

/// Backend for campaigns: FFT only after the kernel passed the gate on 10
/// seeded cases (cached per kernel name), direct sums otherwise.
pub fn gated_backend(k: &KernelSpec) -> Backend {
    static CACHE: OnceLock<Mutex<HashMap<String, bool>>> = OnceLock::new();
    if !matches!(k.kind, KernelKind::Convolution(_)) {
        return Backend::Direct;
    }
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&ok) = cache.lock().unwrap().get(&k.name) {
        return if ok { Backend::Fft } else { Backend::Direct };
    }
    let ok = fft_oracle_gate(k, 10, 0x5eed).map(|r| r.passed).unwrap_or(false);
    cache.lock().unwrap().insert(k.name.clone(), ok);
    if ok {
        Backend::Fft
    } else {
        Backend::Direct
    }
}
