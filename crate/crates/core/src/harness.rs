//! Verification campaigns, fitted-constant reports and the configuration
//! layer behind the command-line tool.
//!
//! Inequalities with implicit constants are reported as fitted constants
//! with a stability criterion; only identities carry hard tolerances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{
    cz_decompose, cz_violations, sparse_construct, sparse_rhs_eval, verify_sparse, Cube, SparseFamily, SparseParams,
};
use crate::error::{param, Error, Result};
use crate::kernels::{
    example_kernel, fourier_decay_profile, kernel_condition_check, ConditionMode, KernelKind, KernelSpec, SamplePlan,
};
use crate::moduli::{dini_constant, dini_inequality_suite, Modulus, SuiteParams};
use crate::operators::{
    gated_backend, marcinkiewicz_fw, maximal, psi_levels, psi_t_apply, square_function, Backend, MaxVariant,
    WeightedCube,
};
use crate::sampling::{build_cone, default_cone, sample_function, ConeGrid, FunctionSpec, Grid, GridFunction};

/// Pass rule of a [`FitReport`], evaluated on its stored ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    /// `|ratio_i / target_i - 1| <= tol` for every `i`.
    WithinRelative { targets: Vec<f64>, tol: f64 },
    /// `max / min <= limit`.
    SpreadAtMost { limit: f64 },
    /// `max / median <= limit`.
    MaxOverMedianAtMost { limit: f64 },
    /// Every ratio `<= limit`.
    AllAtMost { limit: f64 },
    /// Least-squares slope of `ln ratio` against `ln abscissa` is `<= limit`.
    SlopeAtMost { limit: f64 },
    /// Every ratio finite.
    Finite,
}

/// Least-squares fit of `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual.
    pub residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return param("a line fit needs at least two points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return param("abscissae must not all coincide");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LineFit { slope, intercept, residual })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

impl Criterion {
    pub fn evaluate(&self, ratios: &[f64], abscissae: &[f64]) -> bool {
        if ratios.is_empty() {
            return false;
        }
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let finite = ratios.iter().all(|r| r.is_finite());
        match self {
            Criterion::WithinRelative { targets, tol } => {
                targets.len() == ratios.len() && ratios.iter().zip(targets).all(|(r, t)| (r / t - 1.0).abs() <= *tol)
            }
            Criterion::SpreadAtMost { limit } => finite && min > 0.0 && max / min <= *limit,
            Criterion::MaxOverMedianAtMost { limit } => {
                let med = median(ratios);
                finite && med > 0.0 && max / med <= *limit
            }
            Criterion::AllAtMost { limit } => ratios.iter().all(|r| *r <= *limit),
            Criterion::SlopeAtMost { limit } => {
                let lx: Vec<f64> = abscissae.iter().map(|a| a.ln()).collect();
                let ly: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
                finite && min > 0.0 && fit_line(&lx, &ly).map(|f| f.slope <= *limit).unwrap_or(false)
            }
            Criterion::Finite => finite,
        }
    }
}

/// Fitted constants with the ratios they come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub name: String,
    /// Sample positions matching `ratios` (aperture, run index, ...).
    pub abscissae: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest ratio, the smallest constant valid for all samples.
    pub fitted: f64,
    pub fit: Option<LineFit>,
    pub criterion: Criterion,
    pub passed: bool,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
}

impl FitReport {
    pub fn new(name: &str, abscissae: Vec<f64>, ratios: Vec<f64>, criterion: Criterion) -> Self {
        let fitted = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let fit = if matches!(criterion, Criterion::SlopeAtMost { .. }) && ratios.iter().all(|r| *r > 0.0) {
            let lx: Vec<f64> = abscissae.iter().map(|a| a.ln()).collect();
            let ly: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
            fit_line(&lx, &ly).ok()
        } else {
            None
        };
        let passed = criterion.evaluate(&ratios, &abscissae);
        FitReport {
            name: name.into(),
            abscissae,
            ratios,
            fitted,
            fit,
            criterion,
            passed,
            seed: None,
            notes: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    /// Recomputes the verdict from the stored ratios.
    pub fn recheck(&self) -> bool {
        self.criterion.evaluate(&self.ratios, &self.abscissae)
    }
}

/// Weak-type level-set profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakProfile {
    /// `sup_rho rho^e |{Sf > rho}| / fnorm^e`.
    pub sup: f64,
    pub argmax_rho: f64,
    /// Same sup on the rho grid with geometric midpoints inserted.
    pub refined_sup: f64,
    /// `refined_sup / sup`; 1 for the exact profile.
    pub stability: f64,
    /// No level set was nonempty.
    pub degenerate: bool,
}

fn level_measure(values: &[f64], rho: f64, cell: f64) -> f64 {
    values.iter().filter(|v| **v > rho).count() as f64 * cell
}

fn profile_on(values: &[f64], cell: f64, e: f64, rhos: &[f64]) -> (f64, f64) {
    let mut best = (0.0, f64::NAN);
    for &r in rhos {
        let v = r.powf(e) * level_measure(values, r, cell);
        if v > best.0 {
            best = (v, r);
        }
    }
    best
}

/// Weak-type profile of an operator output. With an empty `rho_grid` the
/// sup over all `rho > 0` is computed exactly from the sorted values.
pub fn weak_type_profile(sf: &GridFunction, fnorm: f64, exponent: f64, rho_grid: &[f64]) -> Result<WeakProfile> {
    if !(exponent > 0.0) {
        return param("exponent must be positive");
    }
    if rho_grid.iter().any(|r| !(*r > 0.0)) || rho_grid.windows(2).any(|w| w[1] <= w[0]) {
        return param("rho grid must be positive and increasing");
    }
    let cell = sf.grid.cell_measure();
    let (raw, rho, refined) = if rho_grid.is_empty() {
        let mut v: Vec<f64> = sf.values.iter().copied().filter(|x| *x > 0.0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        let mut best = (0.0, f64::NAN);
        for (k, x) in v.iter().enumerate() {
            // just below x, every value >= x is counted
            let s = x.powf(exponent) * (k + 1) as f64 * cell;
            if s > best.0 {
                best = (s, *x);
            }
        }
        (best.0, best.1, best.0)
    } else {
        let (s, r) = profile_on(&sf.values, cell, exponent, rho_grid);
        let mut fine = Vec::with_capacity(2 * rho_grid.len());
        for w in rho_grid.windows(2) {
            fine.push(w[0]);
            fine.push((w[0] * w[1]).sqrt());
        }
        fine.push(*rho_grid.last().unwrap());
        let (s2, _) = profile_on(&sf.values, cell, exponent, &fine);
        (s, r, s2)
    };
    let degenerate = raw == 0.0;
    if degenerate {
        return Ok(WeakProfile { sup: 0.0, argmax_rho: f64::NAN, refined_sup: 0.0, stability: 1.0, degenerate });
    }
    if !(fnorm > 0.0) {
        return param("input norm must be positive for a nonzero output");
    }
    let scale = fnorm.powf(exponent);
    Ok(WeakProfile {
        sup: raw / scale,
        argmax_rho: rho,
        refined_sup: refined / scale,
        stability: refined / raw,
        degenerate,
    })
}

/// Which norm [`aperture_scaling_check`] compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApertureNorm {
    L2,
    Weak,
}

/// Relative tolerance of the L^2 aperture identity.
pub const APERTURE_TOL: f64 = 0.05;

/// `||S_alpha f||_2^2 / ||S_1 f||_2^2` against `alpha^n` (L2), or the
/// fitted exponent of the weak profile in `alpha` (Weak, limit `n + 1/2`).
/// `cone` fixes the scales; its aperture is ignored.
pub fn aperture_scaling_check(
    k: &KernelSpec,
    inputs: &[GridFunction],
    cone: &ConeGrid,
    alphas: &[f64],
    norm: ApertureNorm,
    backend: Backend,
) -> Result<FitReport> {
    if alphas.is_empty() || alphas.iter().any(|a| ![1.0, 2.0, 4.0, 8.0].contains(a)) {
        return param("apertures must be taken from {1, 2, 4, 8}");
    }
    let stack = psi_levels(k, inputs, cone, backend)?;
    let n = inputs[0].grid.n as i32;
    let fnorm: f64 = inputs.iter().map(|f| f.l1()).product();
    match norm {
        ApertureNorm::L2 => {
            let base = stack.square_function(&cone.with_alpha(1.0)?)?.l2().powi(2);
            let mut ratios = Vec::new();
            for &a in alphas {
                let s = stack.square_function(&cone.with_alpha(a)?)?;
                ratios.push(s.l2().powi(2) / base);
            }
            let targets = alphas.iter().map(|a| a.powi(n)).collect();
            Ok(FitReport::new(
                "aperture_l2",
                alphas.to_vec(),
                ratios,
                Criterion::WithinRelative { targets, tol: APERTURE_TOL },
            ))
        }
        ApertureNorm::Weak => {
            let e = 1.0 / inputs.len() as f64;
            let mut ratios = Vec::new();
            for &a in alphas {
                let s = stack.square_function(&cone.with_alpha(a)?)?;
                ratios.push(weak_type_profile(&s, fnorm, e, &[])?.sup);
            }
            Ok(FitReport::new(
                "aperture_weak",
                alphas.to_vec(),
                ratios,
                Criterion::SlopeAtMost { limit: n as f64 + 0.5 },
            ))
        }
    }
}

/// Weights `w_i` with exponents `p_i` and the derived `nu = prod w_i^{p/p_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<GridFunction>,
    pub exponents: Vec<f64>,
    /// `1/p = sum 1/p_i`.
    pub p: f64,
    pub nu: GridFunction,
}

impl WeightVector {
    pub fn new(weights: Vec<GridFunction>, exponents: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() > 2 || weights.len() != exponents.len() {
            return param("need one or two weights with matching exponents");
        }
        if exponents.iter().any(|p| !(*p > 1.0) || !p.is_finite()) {
            return param("exponents must lie in (1, inf)");
        }
        for w in &weights[1..] {
            weights[0].check_grid(w)?;
        }
        for w in &weights {
            if let Some(i) = w.values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Positivity(i));
            }
        }
        let p = 1.0 / exponents.iter().map(|q| 1.0 / q).sum::<f64>();
        let grid = weights[0].grid;
        let nu = GridFunction {
            grid,
            values: (0..grid.len())
                .map(|i| weights.iter().zip(&exponents).map(|(w, q)| w.values[i].powf(p / q)).product())
                .collect(),
        };
        Ok(WeightVector { weights, exponents, p, nu })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }
}

struct Prefix {
    n: usize,
    size: usize,
    data: Vec<f64>,
}

impl Prefix {
    fn new(f: &[f64], n: usize, size: usize) -> Self {
        if n == 1 {
            let mut data = vec![0.0; size + 1];
            for i in 0..size {
                data[i + 1] = data[i] + f[i];
            }
            return Prefix { n, size, data };
        }
        let w = size + 1;
        let mut data = vec![0.0; w * w];
        for i in 0..size {
            for j in 0..size {
                data[(i + 1) * w + j + 1] =
                    f[i * size + j] + data[i * w + j + 1] + data[(i + 1) * w + j] - data[i * w + j];
            }
        }
        Prefix { n, size, data }
    }

    fn mean(&self, a: usize, b: usize, l: usize) -> f64 {
        if self.n == 1 {
            return (self.data[a + l] - self.data[a]) / l as f64;
        }
        let w = self.size + 1;
        let d = &self.data;
        (d[(a + l) * w + b + l] - d[a * w + b + l] - d[(a + l) * w + b] + d[a * w + b]) / (l * l) as f64
    }
}

fn apvec_factors(wv: &WeightVector) -> (Prefix, Vec<(Prefix, f64)>) {
    let grid = wv.nu.grid;
    let nu = Prefix::new(&wv.nu.values, grid.n, grid.size);
    let duals = wv
        .weights
        .iter()
        .zip(&wv.exponents)
        .map(|(w, &q)| {
            let qd = q / (q - 1.0);
            let s: Vec<f64> = w.values.iter().map(|v| v.powf(1.0 - qd)).collect();
            (Prefix::new(&s, grid.n, grid.size), wv.p / qd)
        })
        .collect();
    (nu, duals)
}

fn apvec_term(nu: &Prefix, duals: &[(Prefix, f64)], a: usize, b: usize, l: usize) -> f64 {
    let mut v = nu.mean(a, b, l);
    for (d, e) in duals {
        v *= d.mean(a, b, l).powf(*e);
    }
    v
}

/// `[w]_{A_p} = sup_Q (avg_Q nu) prod_j (avg_Q w_j^{1 - p_j'})^{p/p_j'}` over
/// all grid-aligned cubes with at least `min_side` cells per side.
pub fn apvec_constant(wv: &WeightVector, min_side: usize) -> Result<f64> {
    let grid = wv.nu.grid;
    if min_side == 0 || min_side > grid.size {
        return param(format!("minimum side must be in 1..={}", grid.size));
    }
    let (nu, duals) = apvec_factors(wv);
    let size = grid.size;
    let mut best = 0.0f64;
    for l in min_side..=size {
        for a in 0..=size - l {
            let b_range = if grid.n == 1 { 0..1 } else { 0..size - l + 1 };
            for b in b_range {
                best = best.max(apvec_term(&nu, &duals, a, b, l));
            }
        }
    }
    Ok(best)
}

/// The same supremum over an explicit pool of cubes inside the box.
pub fn apvec_constant_on(wv: &WeightVector, pool: &[Cube]) -> Result<f64> {
    let grid = wv.nu.grid;
    let (nu, duals) = apvec_factors(wv);
    let mut best = 0.0f64;
    for q in pool {
        if q.n != grid.n || q.side <= 0 || !Cube::root(&grid).contains(q) {
            return Err(Error::Geometry(format!("cube {q:?} is not inside the box")));
        }
        best = best.max(apvec_term(&nu, &duals, q.lo[0] as usize, q.lo[1] as usize, q.side as usize));
    }
    Ok(best)
}

fn weighted_lp(f: &GridFunction, w: &GridFunction, p: f64) -> f64 {
    let s: f64 = f.values.iter().zip(&w.values).map(|(a, b)| a.abs().powf(p) * b).sum();
    (s * f.grid.cell_measure()).powf(1.0 / p)
}

/// `||S f||_{L^p(nu)} / prod_i ||f_i||_{L^{p_i}(w_i)}`; 0 when the inputs
/// vanish.
pub fn weighted_norm_ratio(
    k: &KernelSpec,
    inputs: &[GridFunction],
    wv: &WeightVector,
    cone: &ConeGrid,
    backend: Backend,
) -> Result<f64> {
    if inputs.len() != wv.m() {
        return param("one weight per input is required");
    }
    let rhs: f64 = inputs.iter().zip(&wv.weights).zip(&wv.exponents).map(|((f, w), &q)| weighted_lp(f, w, q)).product();
    if rhs == 0.0 {
        return Ok(0.0);
    }
    let s = square_function(k, inputs, cone, backend)?;
    Ok(weighted_lp(&s, &wv.nu, wv.p) / rhs)
}

/// Stability of the weighted ratio over a family of inputs: max within
/// `limit` times the median.
pub fn weighted_norm_check(
    k: &KernelSpec,
    families: &[Vec<GridFunction>],
    wv: &WeightVector,
    cone: &ConeGrid,
    limit: f64,
    backend: Backend,
) -> Result<FitReport> {
    let mut ratios = Vec::new();
    for inputs in families {
        ratios.push(weighted_norm_ratio(k, inputs, wv, cone, backend)?);
    }
    let xs = (0..ratios.len()).map(|i| i as f64).collect();
    Ok(FitReport::new("weighted_norm", xs, ratios, Criterion::MaxOverMedianAtMost { limit }))
}

/// `h^n sum_E sqrt(Sf) <= C sqrt(W ||f||_1 |E|)` with `W` the exact weak
/// profile of `Sf`. On the lattice measure the inequality holds with `C = 2`.
pub fn kolmogorov_check(sf: &GridFunction, fnorm: f64, sets: &[Vec<usize>]) -> Result<FitReport> {
    let w = weak_type_profile(sf, fnorm, 1.0, &[])?.sup;
    let cell = sf.grid.cell_measure();
    let mut ratios = Vec::new();
    for e in sets {
        if e.iter().any(|&i| i >= sf.grid.len()) {
            return param("set index outside the grid");
        }
        let lhs: f64 = e.iter().map(|&i| sf.values[i].max(0.0).sqrt()).sum::<f64>() * cell;
        let rhs = (w * fnorm * e.len() as f64 * cell).sqrt();
        ratios.push(if lhs == 0.0 { 0.0 } else { lhs / rhs });
    }
    let xs = (0..ratios.len()).map(|i| i as f64).collect();
    Ok(FitReport::new("kolmogorov", xs, ratios, Criterion::AllAtMost { limit: 2.0 }))
}

/// Pointwise `g*_lambda f <= C sum_{k=0}^{K} 2^{-k lambda n/2} S_{2^{k+1}} f`.
/// Splitting `y` into the annuli `2^k t <= |x-y| < 2^{k+1} t` gives `C = 1`
/// whenever `2^{K+1} t_min` exceeds the box diameter.
pub fn g_star_cascade_check(
    k: &KernelSpec,
    inputs: &[GridFunction],
    cone: &ConeGrid,
    lambda: f64,
    terms: u32,
    backend: Backend,
) -> Result<FitReport> {
    let min = 2.0 * k.arity() as f64;
    if !(lambda > min) {
        return param(format!("g* needs lambda > {min}, got {lambda}"));
    }
    let stack = psi_levels(k, inputs, cone, backend)?;
    let g = stack.g_star(lambda);
    let n = g.grid.n as f64;
    let mut cascade = vec![0.0; g.grid.len()];
    for j in 0..=terms {
        let s = stack.square_function(&cone.with_alpha(2f64.powi(j as i32 + 1))?)?;
        let c = 2f64.powf(-(j as f64) * lambda * n / 2.0);
        for (a, v) in cascade.iter_mut().zip(&s.values) {
            *a += c * v;
        }
    }
    let ratios: Vec<f64> = g
        .values
        .iter()
        .zip(&cascade)
        .map(|(a, b)| {
            if *a == 0.0 {
                0.0
            } else if *b == 0.0 {
                f64::INFINITY
            } else {
                a / b
            }
        })
        .collect();
    let xs = (0..ratios.len()).map(|i| g.grid.point(i)[0]).collect();
    let diameter = g.grid.size as f64 * g.grid.h * n.sqrt();
    let report = FitReport::new("g_star_cascade", xs, ratios, Criterion::AllAtMost { limit: 1.0 + 1e-10 });
    Ok(if 2f64.powi(terms as i32 + 1) * cone.t_min > diameter {
        report
    } else {
        report.note("cascade truncated inside the box; C = 1 is not guaranteed")
    })
}

/// Pointwise sup over cone points of `t^{-2n} int int |Phi| |f1 f2|`
/// against `log(2 + alpha) [w]_Dini M f1(x) M f2(x)`.
pub fn bilinear_envelope_check(
    k: &KernelSpec,
    f1: &GridFunction,
    f2: &GridFunction,
    cone: &ConeGrid,
) -> Result<FitReport> {
    if !k.is_bilinear() {
        return param("envelope check needs a bilinear kernel");
    }
    f1.check_grid(f2)?;
    let inner = k.clone();
    let abs = KernelSpec::bilinear(&format!("|{}|", k.name), k.w.clone(), k.phi.clone(), move |x, y1, y2| {
        inner.eval_bilinear(x, y1, y2).abs()
    });
    let a1 = GridFunction { grid: f1.grid, values: f1.values.iter().map(|v| v.abs()).collect() };
    let a2 = GridFunction { grid: f2.grid, values: f2.values.iter().map(|v| v.abs()).collect() };
    let grid = f1.grid;
    let size = grid.size as i64;
    let mut sup = vec![0.0f64; grid.len()];
    for level in &cone.levels {
        let env = psi_t_apply(&abs, &[a1.clone(), a2.clone()], level.t, Backend::Direct)?;
        for i in 0..grid.len() {
            let c = grid.cell(i);
            for &(a, b) in &level.stencil.rows {
                let (r, lo, hi) = if grid.n == 1 {
                    (0, (c[0] as i64 - b).max(0), (c[0] as i64 + b).min(size - 1))
                } else {
                    let r = c[0] as i64 + a;
                    if r < 0 || r >= size {
                        continue;
                    }
                    (r, (c[1] as i64 - b).max(0), (c[1] as i64 + b).min(size - 1))
                };
                for j in lo..=hi {
                    let idx = if grid.n == 1 { j as usize } else { (r * size + j) as usize };
                    sup[i] = sup[i].max(env.values[idx]);
                }
            }
        }
    }
    let m1 = maximal(f1, MaxVariant::Hl)?;
    let m2 = maximal(f2, MaxVariant::Hl)?;
    let dini = dini_constant(&k.w, 1e-9)?.value;
    let scale = (2.0 + cone.alpha).ln() * dini;
    let ratios: Vec<f64> = (0..grid.len())
        .map(|i| {
            let rhs = scale * m1.values[i] * m2.values[i];
            if sup[i] == 0.0 {
                0.0
            } else {
                sup[i] / rhs
            }
        })
        .collect();
    let xs = (0..grid.len()).map(|i| grid.point(i)[0]).collect();
    Ok(FitReport::new("bilinear_envelope", xs, ratios, Criterion::Finite))
}

/// Random compactly supported input: two to six narrow bumps of random
/// sign and height, kept inside 90% of the box.
pub fn spiky_function(grid: Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..7);
    let bumps: Vec<([f64; 2], f64, f64)> = (0..m)
        .map(|_| {
            let c = [rng.gen_range(-0.9 * grid.r..0.9 * grid.r), rng.gen_range(-0.9 * grid.r..0.9 * grid.r)];
            (c, rng.gen_range(1.0..4.0) * grid.h, rng.gen_range(-3.0..3.0))
        })
        .collect();
    GridFunction::from_fn(grid, |x| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let s: f64 = x.iter().zip(c).map(|(p, q)| ((p - q) / w).powi(2)).sum();
                if s < 1.0 {
                    a * (-1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            })
            .sum()
    })
}

/// One sparse-domination run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationRun {
    pub family: SparseFamily,
    pub sparse: bool,
    pub worst_ratio: f64,
    /// `max_{x in Q0} S_alpha f(x) / RHS(x)`.
    pub constant: f64,
}

pub fn sparse_domination_run(
    k: &KernelSpec,
    f: &GridFunction,
    q0: &Cube,
    cone: &ConeGrid,
    backend: Backend,
) -> Result<DominationRun> {
    let params = SparseParams { backend, ..SparseParams::default() };
    let family = sparse_construct(k, f, q0, cone, &params)?;
    let rep = verify_sparse(&family, 0.5)?;
    let s = square_function(k, std::slice::from_ref(f), cone, backend)?;
    let rhs = sparse_rhs_eval(&family, std::slice::from_ref(f), 3)?;
    let mut constant = 0.0f64;
    for i in q0.cells(&f.grid) {
        if s.values[i] > 0.0 {
            constant = constant.max(if rhs.values[i] > 0.0 { s.values[i] / rhs.values[i] } else { f64::INFINITY });
        }
    }
    Ok(DominationRun { family, sparse: rep.sparse, worst_ratio: rep.worst_ratio, constant })
}

/// Sparse domination over `runs` seeded spiky inputs on the whole box:
/// every family 1/2-sparse and max/median of the fitted constants `<= 10`.
pub fn sparse_domination_campaign(
    k: &KernelSpec,
    grid: Grid,
    cone: &ConeGrid,
    runs: u64,
    seed: u64,
    backend: Backend,
) -> Result<(FitReport, Vec<DominationRun>)> {
    let q0 = Cube::root(&grid);
    let mut out = Vec::new();
    for r in 0..runs {
        let f = spiky_function(grid, seed.wrapping_add(r));
        out.push(sparse_domination_run(k, &f, &q0, cone, backend)?);
    }
    let ratios: Vec<f64> = out.iter().map(|r| r.constant).collect();
    let xs = (0..ratios.len()).map(|i| i as f64).collect();
    let mut report =
        FitReport::new("sparse_domination", xs, ratios, Criterion::MaxOverMedianAtMost { limit: 10.0 }).with_seed(seed);
    let not_sparse = out.iter().filter(|r| !r.sparse).count();
    if not_sparse > 0 {
        report.passed = false;
        report = report.note(format!("{not_sparse} families failed the sparseness check"));
    }
    Ok((report, out))
}

/// Disjoint random cubes for the Marcinkiewicz function: radii in
/// `[h, 1]`, weights in `[0, 1]`, centres inside the box.
pub fn random_disjoint_cubes(grid: &Grid, count: usize, seed: u64) -> Vec<WeightedCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<WeightedCube> = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < 100_000 {
        attempts += 1;
        let r = rng.gen_range(grid.h..=1.0);
        let centre: Vec<f64> = (0..grid.n).map(|_| rng.gen_range(-grid.r + r..grid.r - r)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let clear = out.iter().all(|c| c.centre.iter().zip(&centre).any(|(a, b)| (a - b).abs() >= c.r + r));
        if clear {
            out.push(WeightedCube { centre, r, lambda });
        }
    }
    out
}

/// `h^n sum_x F_w(x)^2 / sum_k lambda_k^2 |Q_k|` over seeded
/// configurations; spread within `4x`.
pub fn marcinkiewicz_campaign(w: &Modulus, grid: &Grid, configs: u64, cubes: usize, seed: u64) -> Result<FitReport> {
    let mut ratios = Vec::new();
    for c in 0..configs {
        let family = random_disjoint_cubes(grid, cubes, seed.wrapping_add(c));
        let f = marcinkiewicz_fw(w, &family, grid)?;
        let lhs = f.l2().powi(2);
        let rhs: f64 = family.iter().map(|q| q.lambda * q.lambda * (2.0 * q.r).powi(grid.n as i32)).sum();
        ratios.push(lhs / rhs);
    }
    let xs = (0..ratios.len()).map(|i| i as f64).collect();
    Ok(FitReport::new("marcinkiewicz_l2", xs, ratios, Criterion::SpreadAtMost { limit: 4.0 }).with_seed(seed))
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    pub tmin: Option<f64>,
    pub tmax: Option<f64>,
    #[serde(default = "default_q")]
    pub q: u32,
}

fn default_q() -> u32 {
    4
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig { tmin: None, tmax: None, q: 4 }
    }
}

/// Campaign configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    /// `dini`, `kernel-check`, `eval-s`, `eval-gstar`, `cz`, `sparse`,
    /// `verify-sparse`, `verify-weak`, `verify-aperture`,
    /// `verify-domination`, `verify-weighted`, `verify-marcinkiewicz`,
    /// `bench`.
    pub campaign: String,
    pub kernel: String,
    pub modulus: String,
    pub function: String,
    /// Second input for bilinear kernels; defaults to `function`.
    pub function2: Option<String>,
    pub n: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub h: f64,
    #[serde(deserialize_with = "one_or_many")]
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub cone: ConeConfig,
    pub rho_grid: Vec<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Number of seeded runs for stability campaigns.
    pub runs: u64,
    /// Weight id (a function id) and exponent for weighted campaigns.
    pub weight: String,
    pub p: f64,
    /// Sparse family file for `verify-sparse`.
    pub family: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            campaign: "verify-aperture".into(),
            kernel: "ex1:kappa=3".into(),
            modulus: "log:3".into(),
            function: "gaussian:sigma=1".into(),
            function2: None,
            n: 1,
            r: 32.0,
            h: 1.0 / 16.0,
            alpha: vec![1.0, 2.0, 4.0],
            lambda: 3.0,
            cone: ConeConfig { tmin: None, tmax: Some(4.0), q: 4 },
            rho_grid: Vec::new(),
            seed: 1,
            out_dir: PathBuf::from("out"),
            runs: 20,
            weight: "abspow:0.5".into(),
            p: 2.0,
            family: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.r, self.h).map_err(|e| Error::Parse(format!("fields `n`, `R`, `h`: {e}")))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        example_kernel(&self.kernel, self.n).map_err(|e| Error::Parse(format!("field `kernel`: {e}")))
    }

    pub fn modulus_spec(&self) -> Result<Modulus> {
        Modulus::parse(&self.modulus).map_err(|e| Error::Parse(format!("field `modulus`: {e}")))
    }

    fn sample(&self, id: &str, field: &str, grid: Grid) -> Result<GridFunction> {
        let spec = FunctionSpec::parse(id).map_err(|e| Error::Parse(format!("field `{field}`: {e}")))?;
        sample_function(&spec, grid)
    }

    /// Inputs for the configured kernel.
    pub fn inputs(&self, grid: Grid, k: &KernelSpec) -> Result<Vec<GridFunction>> {
        let f = self.sample(&self.function, "function", grid)?;
        if k.is_bilinear() {
            let id = self.function2.clone().unwrap_or_else(|| self.function.clone());
            Ok(vec![f, self.sample(&id, "function2", grid)?])
        } else {
            Ok(vec![f])
        }
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha.first().copied().unwrap_or(1.0)
    }

    pub fn cone_for(&self, grid: &Grid, alpha: f64) -> Result<ConeGrid> {
        match (self.cone.tmin, self.cone.tmax) {
            (None, None) if self.cone.q == 4 => default_cone(grid, alpha),
            (a, b) => {
                build_cone(alpha, grid.n, grid.h, a.unwrap_or(2.0 * grid.h), b.unwrap_or(2.0 * grid.r), self.cone.q)
            }
        }
    }
}

/// One line of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryItem {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

/// Written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub campaign: String,
    pub seed: u64,
    pub items: Vec<SummaryItem>,
    pub reports: Vec<FitReport>,
    /// Output files relative to `out_dir`.
    pub files: Vec<String>,
    pub passed: bool,
}

impl RunSummary {
    fn item(&mut self, name: &str, passed: bool, value: f64, detail: impl Into<String>) {
        self.items.push(SummaryItem { name: name.into(), passed, value, detail: detail.into() });
    }

    fn report(&mut self, r: FitReport) {
        self.item(&r.name.clone(), r.passed, r.fitted, format!("{:?}", r.criterion));
        self.reports.push(r);
    }

    /// Names of failed items.
    pub fn failures(&self) -> Vec<String> {
        self.items.iter().filter(|i| !i.passed).map(|i| i.name.clone()).collect()
    }
}

fn write_table(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>], files: &mut Vec<String>) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    files.push(name.into());
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// Runs the configured campaign, writing `summary.json` and its tables
/// into `out_dir`. `oracle` forces direct summation everywhere.
pub fn cli_run(cfg: &CampaignConfig, oracle: bool) -> Result<RunSummary> {
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut s = RunSummary {
        campaign: cfg.campaign.clone(),
        seed: cfg.seed,
        items: vec![],
        reports: vec![],
        files: vec![],
        passed: true,
    };
    let backend_for = |k: &KernelSpec| if oracle { Backend::Direct } else { gated_backend(k) };
    match cfg.campaign.as_str() {
        "dini" => {
            let w = cfg.modulus_spec()?;
            let d = match dini_constant(&w, 1e-10) {
                Err(Error::Divergent(msg)) => {
                    s.item("dini_constant", false, f64::INFINITY, msg);
                    return finish(&dir, s);
                }
                r => r?,
            };
            s.item("dini_constant", !d.divergent, d.value, w.name());
            if d.divergent {
                return finish(&dir, s);
            }
            let suite = dini_inequality_suite(&w, SuiteParams { n: cfg.n, ..SuiteParams::default() })?;
            let rows: Vec<Vec<String>> =
                suite.items.iter().map(|i| vec![i.item.clone(), fmt(i.lhs), fmt(i.reference), fmt(i.ratio)]).collect();
            write_table(&dir, "dini.csv", &["item", "lhs", "reference", "ratio"], &rows, &mut s.files)?;
        }
        "kernel-check" => {
            let k = cfg.kernel_spec()?;
            let mut modes = vec!["size", "smooth_x", "smooth_y", "log_ratio"];
            if k.is_bilinear() {
                modes.push("smooth_y2");
            }
            let mut rows = Vec::new();
            for m in modes {
                let mode = ConditionMode::parse(m, 0.5)?;
                let r =
                    kernel_condition_check(&k, mode, cfg.n, &SamplePlan { seed: cfg.seed, ..SamplePlan::default() })?;
                rows.push(vec![
                    r.mode.clone(),
                    fmt(r.max_ratio),
                    fmt(r.growth),
                    r.samples.to_string(),
                    r.flagged.to_string(),
                ]);
                s.item(&format!("condition_{m}"), !r.flagged, r.max_ratio, format!("growth {:?}", r.growth));
            }
            write_table(
                &dir,
                "kernel_check.csv",
                &["mode", "max_ratio", "growth", "samples", "flagged"],
                &rows,
                &mut s.files,
            )?;
            if cfg.n == 1 && matches!(k.kind, KernelKind::Convolution(_)) {
                let f = fourier_decay_profile(&k, 2.0, 2.0, 1 << 14, 1.0 / 64.0)?;
                s.item("fourier_decay", !f.flagged, f.max_ratio, format!("at zero {:?}", f.at_zero));
            }
        }
        "eval-s" | "eval-gstar" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let inputs = cfg.inputs(grid, &k)?;
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let out = if cfg.campaign == "eval-s" {
                square_function(&k, &inputs, &cone, backend_for(&k))?
            } else {
                crate::operators::g_star(&k, &inputs, &cone, cfg.lambda, backend_for(&k))?
            };
            let name = if cfg.campaign == "eval-s" { "s.csv" } else { "gstar.csv" };
            out.write_csv(&dir.join(name))?;
            s.files.push(name.into());
            s.item("output_l2", out.values.iter().all(|v| v.is_finite()), out.l2(), name);
        }
        "cz" => {
            let grid = cfg.grid()?;
            let f = cfg.sample(&cfg.function, "function", grid)?;
            let mut rows = Vec::new();
            let mut all_ok = true;
            for (j, &rho) in cfg.rho_grid.iter().enumerate() {
                let cz = cz_decompose(&f, rho)?;
                let v = cz_violations(&f, &cz, 1e-12);
                all_ok &= v.is_empty();
                let sub = format!("cz_{j}");
                cz.write_dir(&dir.join(&sub))?;
                s.files.push(format!("{sub}/manifest.json"));
                rows.push(vec![fmt(rho), cz.bad.len().to_string(), v.len().to_string()]);
            }
            write_table(&dir, "cz.csv", &["rho", "cubes", "violations"], &rows, &mut s.files)?;
            s.item("cz_invariants", all_ok && !cfg.rho_grid.is_empty(), cfg.rho_grid.len() as f64, "heights checked");
        }
        "sparse" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let f = cfg.sample(&cfg.function, "function", grid)?;
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let run = sparse_domination_run(&k, &f, &Cube::root(&grid), &cone, backend_for(&k))?;
            std::fs::write(dir.join("family.json"), run.family.to_json()?)?;
            s.files.push("family.json".into());
            s.item("sparse", run.sparse, run.worst_ratio, format!("{} cubes", run.family.cubes.len()));
            s.item("domination_constant", run.constant.is_finite(), run.constant, "max S / sparse bound on Q0");
        }
        "verify-sparse" => {
            let path =
                cfg.family.clone().ok_or_else(|| Error::Parse("field `family`: required for verify-sparse".into()))?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let fam = SparseFamily::from_json(&text)?;
            let r = verify_sparse(&fam, 0.5)?;
            s.item("sparse", r.sparse, r.worst_ratio, format!("worst cube {:?}", r.worst_cube));
        }
        "verify-weak" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let inputs = cfg.inputs(grid, &k)?;
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let sf = square_function(&k, &inputs, &cone, backend_for(&k))?;
            let fnorm: f64 = inputs.iter().map(|f| f.l1()).product();
            let e = 1.0 / inputs.len() as f64;
            let prof = weak_type_profile(&sf, fnorm, e, &cfg.rho_grid)?;
            let rows: Vec<Vec<String>> = cfg
                .rho_grid
                .iter()
                .map(|&r| vec![fmt(r), fmt(level_measure(&sf.values, r, grid.cell_measure()))])
                .collect();
            write_table(&dir, "weak.csv", &["rho", "level_measure"], &rows, &mut s.files)?;
            s.item(
                "weak_profile",
                prof.sup.is_finite() && prof.stability <= 2.0,
                prof.sup,
                format!("stability {:?}", prof.stability),
            );
            if !k.is_bilinear() {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let sets: Vec<Vec<usize>> =
                    (0..10).map(|_| (0..grid.len()).filter(|_| rng.gen_bool(0.3)).collect()).collect();
                s.report(kolmogorov_check(&sf, fnorm, &sets)?.with_seed(cfg.seed));
            }
        }
        "verify-aperture" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let inputs = cfg.inputs(grid, &k)?;
            let cone = cfg.cone_for(&grid, 1.0)?;
            let r = aperture_scaling_check(&k, &inputs, &cone, &cfg.alpha, ApertureNorm::L2, backend_for(&k))?;
            let rows: Vec<Vec<String>> = r
                .abscissae
                .iter()
                .zip(&r.ratios)
                .map(|(a, q)| vec![fmt(*a), fmt(*q), fmt(a.powi(grid.n as i32))])
                .collect();
            write_table(&dir, "aperture.csv", &["alpha", "ratio", "target"], &rows, &mut s.files)?;
            s.report(r);
        }
        "verify-domination" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let (r, runs) = sparse_domination_campaign(&k, grid, &cone, cfg.runs, cfg.seed, backend_for(&k))?;
            let rows: Vec<Vec<String>> = runs
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    vec![i.to_string(), d.family.cubes.len().to_string(), fmt(d.worst_ratio), fmt(d.constant)]
                })
                .collect();
            write_table(&dir, "domination.csv", &["run", "cubes", "worst_ratio", "constant"], &rows, &mut s.files)?;
            s.report(r);
            let f = cfg.sample(&cfg.function, "function", grid)?;
            let gcone = cfg.cone_for(&grid, 1.0)?;
            s.report(g_star_cascade_check(&k, &[f], &gcone, cfg.lambda, 8, backend_for(&k))?);
        }
        "verify-weighted" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let w = cfg.sample(&cfg.weight, "weight", grid)?;
            let wv = WeightVector::new(vec![w; k.arity()], vec![cfg.p; k.arity()])?;
            let a = apvec_constant(&wv, 4)?;
            s.item("apvec_constant", a.is_finite(), a, format!("weight {}", cfg.weight));
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let families: Vec<Vec<GridFunction>> = (0..cfg.runs)
                .map(|r| {
                    (0..k.arity()).map(|j| spiky_function(grid, cfg.seed.wrapping_add(100 * r + j as u64))).collect()
                })
                .collect();
            s.report(weighted_norm_check(&k, &families, &wv, &cone, 4.0, backend_for(&k))?.with_seed(cfg.seed));
        }
        "verify-marcinkiewicz" => {
            let grid = cfg.grid()?;
            let w = cfg.modulus_spec()?;
            let r = marcinkiewicz_campaign(&w, &grid, cfg.runs, 50, cfg.seed)?;
            let rows: Vec<Vec<String>> =
                r.ratios.iter().enumerate().map(|(i, q)| vec![i.to_string(), fmt(*q)]).collect();
            write_table(&dir, "marcinkiewicz.csv", &["config", "ratio"], &rows, &mut s.files)?;
            s.report(r);
        }
        "bench" => {
            let grid = cfg.grid()?;
            let k = cfg.kernel_spec()?;
            let inputs = cfg.inputs(grid, &k)?;
            let cone = cfg.cone_for(&grid, cfg.alpha0())?;
            let mut rows = Vec::new();
            let mut outs = BTreeMap::new();
            for (name, b) in [("direct", Backend::Direct), ("fft", Backend::Fft)] {
                let t = std::time::Instant::now();
                let out = square_function(&k, &inputs, &cone, b)?;
                rows.push(vec![name.to_string(), fmt(t.elapsed().as_secs_f64())]);
                outs.insert(name, out);
            }
            let d = &outs["direct"];
            let err = d.values.iter().zip(&outs["fft"].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                / d.linf().max(f64::MIN_POSITIVE);
            write_table(&dir, "bench.csv", &["backend", "seconds"], &rows, &mut s.files)?;
            s.item("fft_agreement", err <= crate::operators::FFT_GATE_TOL, err, "max relative difference");
        }
        other => return Err(Error::Parse(format!("field `campaign`: unknown campaign `{other}`"))),
    }
    finish(&dir, s)
}

fn finish(dir: &Path, mut s: RunSummary) -> Result<RunSummary> {
    s.passed = s.items.iter().all(|i| i.passed);
    s.files.push("summary.json".into());
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&s)?)?;
    Ok(s)
}
