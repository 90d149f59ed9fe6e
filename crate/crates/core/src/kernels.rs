//! Kernel families and numerical checks of their size and smoothness
//! conditions.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::moduli::{dini_constant, Modulus};

/// `sup` over closed axis-parallel cubes `Q` containing `u` of
/// `|Q cap [-1,1]^n| / |Q|`, i.e. the uncentred maximal function of the
/// indicator of `[-1,1]^n` at `u`. Exact for `n <= 2`.
pub fn unit_cube_maximal(u: &[f64]) -> f64 {
    let n = u.len();
    let d: Vec<f64> = u.iter().map(|c| (c.abs() - 1.0).max(0.0)).collect();
    if d.iter().all(|&v| v == 0.0) {
        return 1.0;
    }
    // Along each axis the best overlap of a side-s interval is
    // clamp(s - d_i, 0, 2); maximise the product over s.
    let value = |s: f64| -> f64 { d.iter().map(|&di| (s - di).clamp(0.0, 2.0) / s).product() };
    let mut best = 0.0f64;
    for &di in &d {
        for s in [di, di + 2.0] {
            if s > 0.0 {
                best = best.max(value(s));
            }
        }
        if n > 1 && di > 0.0 {
            best = best.max(value(n as f64 * di / (n as f64 - 1.0)));
        }
    }
    best
}

/// `M 1_{Q(c, r)}(y)` for the closed cube of centre `c`, half-side `r`.
pub fn cube_maximal(y: &[f64], c: &[f64], r: f64) -> f64 {
    let u: Vec<f64> = y.iter().zip(c).map(|(a, b)| (a - b) / r).collect();
    unit_cube_maximal(&u)
}

type LinFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type BiFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
type ProfFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Convolution profiles `phi` with `psi(x, y) = phi(x - y)`.
#[derive(Clone)]
pub enum Profile {
    /// `sin x_1 / ((1+|x|^2)^{n/2} log^kappa(2+|x|^2))`
    LogSine {
        kappa: f64,
    },
    /// `d/dx_1 [(1+|x|^2)^{-(n-1)/2} log^{-kappa}(2+|x|^2)]`
    LogDerivative {
        kappa: f64,
    },
    /// `1_{[-1,1]^n} / 2^n`
    Box,
    /// Linear interpolation of a 1-D table, zero outside its range.
    Table {
        x: Vec<f64>,
        v: Vec<f64>,
    },
    Custom(ProfFn),
}

impl Profile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().map(|c| c * c).sum();
        match self {
            Profile::LogSine { kappa } => {
                let n = x.len() as f64;
                x[0].sin() / ((1.0 + s).powf(0.5 * n) * (2.0 + s).ln().powf(*kappa))
            }
            Profile::LogDerivative { kappa } => {
                let n = x.len() as f64;
                let l = (2.0 + s).ln();
                let g1 = -0.5 * (n - 1.0) * (1.0 + s).powf(-0.5 * (n + 1.0)) * l.powf(-kappa);
                let g2 = -kappa * (1.0 + s).powf(-0.5 * (n - 1.0)) * l.powf(-kappa - 1.0) / (2.0 + s);
                2.0 * x[0] * (g1 + g2)
            }
            Profile::Box => {
                if x.iter().all(|c| c.abs() <= 1.0) {
                    0.5f64.powi(x.len() as i32)
                } else {
                    0.0
                }
            }
            Profile::Table { x: xs, v } => {
                let t = x[0];
                if t < xs[0] || t > xs[xs.len() - 1] {
                    return 0.0;
                }
                let j = xs.partition_point(|&a| a <= t).min(xs.len() - 1).max(1);
                let (x0, x1) = (xs[j - 1], xs[j]);
                v[j - 1] + (v[j] - v[j - 1]) * (t - x0) / (x1 - x0)
            }
            Profile::Custom(f) => f(x),
        }
    }

    /// Reads a two-column CSV `(x, phi(x))`, header optional.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let (mut xs, mut vs) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            match (rec.get(0).map(str::parse::<f64>), rec.get(1).map(str::parse::<f64>)) {
                (Some(Ok(a)), Some(Ok(b))) => {
                    xs.push(a);
                    vs.push(b);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("profile row {i} is not numeric"))),
            }
        }
        if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
            return param("profile table needs >= 2 rows with increasing abscissae");
        }
        Ok(Profile::Table { x: xs, v: vs })
    }
}

/// Bilinear convolution profiles with `psi(x, y1, y2) = Phi(x - y1, x - y2)`.
#[derive(Clone)]
pub enum BiProfile {
    /// `sin(u_1 + v_1) / ((1+|u|^2+|v|^2)^n log^kappa(2+|u|^2+|v|^2))`
    LogSine {
        kappa: f64,
    },
    Custom(LinFn),
}

impl BiProfile {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            BiProfile::LogSine { kappa } => {
                let n = u.len() as i32;
                let s: f64 = u.iter().chain(v).map(|c| c * c).sum();
                (u[0] + v[0]).sin() / ((1.0 + s).powi(n) * (2.0 + s).ln().powf(*kappa))
            }
            BiProfile::Custom(f) => f(u, v),
        }
    }
}

#[derive(Clone)]
pub enum KernelKind {
    Convolution(Profile),
    Linear(LinFn),
    BilinearConvolution(BiProfile),
    Bilinear(BiFn),
}

/// A kernel with its declared moduli and size constant.
#[derive(Clone)]
pub struct KernelSpec {
    pub name: String,
    pub kind: KernelKind,
    pub w: Modulus,
    pub phi: Modulus,
    /// Declared size constant `A`.
    pub a: f64,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KernelSpec({}, w={}, phi={})", self.name, self.w.name(), self.phi.name())
    }
}

impl KernelSpec {
    pub fn is_bilinear(&self) -> bool {
        matches!(self.kind, KernelKind::Bilinear(_) | KernelKind::BilinearConvolution(_))
    }

    /// Arity `m` of the kernel.
    pub fn arity(&self) -> usize {
        if self.is_bilinear() {
            2
        } else {
            1
        }
    }

    /// `psi(x, y)`; zero for bilinear kernels.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::Convolution(p) => {
                let mut d = [0.0; 2];
                for i in 0..x.len() {
                    d[i] = x[i] - y[i];
                }
                p.eval(&d[..x.len()])
            }
            KernelKind::Linear(f) => f(x, y),
            _ => 0.0,
        }
    }

    /// `psi(x, y1, y2)`; zero for linear kernels.
    pub fn eval_bilinear(&self, x: &[f64], y1: &[f64], y2: &[f64]) -> f64 {
        match &self.kind {
            KernelKind::BilinearConvolution(p) => {
                let n = x.len();
                let mut u = [0.0; 2];
                let mut v = [0.0; 2];
                for i in 0..n {
                    u[i] = x[i] - y1[i];
                    v[i] = x[i] - y2[i];
                }
                p.eval(&u[..n], &v[..n])
            }
            KernelKind::Bilinear(f) => f(x, y1, y2),
            _ => 0.0,
        }
    }

    /// `[w]_Dini [phi]_Dini`.
    pub fn dini_product(&self) -> Result<f64> {
        let dw = dini_constant(&self.w, 1e-9)?;
        let dp = dini_constant(&self.phi, 1e-9)?;
        if dw.divergent || dp.divergent {
            return Err(Error::Divergent(format!("Dini constant of the moduli of {}", self.name)));
        }
        Ok(dw.value * dp.value)
    }

    pub fn linear(
        name: &str,
        w: Modulus,
        phi: Modulus,
        f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        KernelSpec { name: name.into(), kind: KernelKind::Linear(Arc::new(f)), w, phi, a: 1.0 }
    }

    pub fn bilinear(
        name: &str,
        w: Modulus,
        phi: Modulus,
        f: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        KernelSpec { name: name.into(), kind: KernelKind::Bilinear(Arc::new(f)), w, phi, a: 1.0 }
    }

    pub fn convolution(name: &str, profile: Profile, w: Modulus, phi: Modulus) -> Self {
        KernelSpec { name: name.into(), kind: KernelKind::Convolution(profile), w, phi, a: 1.0 }
    }
}

fn named(rest: &str, key: &str, pos: usize) -> Option<f64> {
    let parts: Vec<&str> = rest.split(',').filter(|s| !s.trim().is_empty()).collect();
    for p in &parts {
        if let Some((k, v)) = p.split_once('=') {
            if k.trim() == key {
                return v.trim().parse().ok();
            }
        }
    }
    parts.iter().filter(|p| !p.contains('=')).nth(pos).and_then(|v| v.trim().parse().ok())
}

/// Builds a kernel from its id.
///
/// `ex1:kappa=k` (k > 1), `ex2:kappa=k,beta=b` (k > 2, b > 1, k - b > 1),
/// `ex3:kappa=k` (k > 2), `bex1:kappa=k` (bilinear, k > 2), `box`,
/// `table:path.csv` (1-D profile).
pub fn example_kernel(id: &str, n: usize) -> Result<KernelSpec> {
    if !(n == 1 || n == 2) {
        return param(format!("dimension must be 1 or 2, got {n}"));
    }
    let (head, rest) = id.trim().split_once(':').unwrap_or((id.trim(), ""));
    let kappa = named(rest, "kappa", 0);
    let need_kappa = |lo: f64| -> Result<f64> {
        match kappa {
            Some(k) if k > lo => Ok(k),
            Some(k) => param(format!("{head} needs kappa > {lo}, got {k}")),
            None => param(format!("{head} needs a kappa parameter")),
        }
    };
    let spec = match head {
        "ex1" => {
            let k = need_kappa(1.0)?;
            let w = Modulus::log_decay(k)?;
            KernelSpec::convolution(&format!("ex1:kappa={k}"), Profile::LogSine { kappa: k }, w.clone(), w)
        }
        "ex2" => {
            let k = need_kappa(2.0)?;
            let b = named(rest, "beta", 1).ok_or_else(|| Error::Parameter("ex2 needs beta".into()))?;
            if !(b > 1.0 && k - b > 1.0) {
                return param(format!("ex2 needs beta > 1 and kappa - beta > 1, got kappa={k}, beta={b}"));
            }
            let (w, phi) = Modulus::log_split(k, b)?;
            KernelSpec::convolution(&format!("ex2:kappa={k},beta={b}"), Profile::LogSine { kappa: k }, w, phi)
        }
        "ex3" => {
            let k = need_kappa(2.0)?;
            let w = Modulus::log_decay(k)?;
            KernelSpec::convolution(&format!("ex3:kappa={k}"), Profile::LogDerivative { kappa: k }, w.clone(), w)
        }
        "bex1" => {
            let k = need_kappa(2.0)?;
            let w = Modulus::log_decay(k)?;
            KernelSpec {
                name: format!("bex1:kappa={k}"),
                kind: KernelKind::BilinearConvolution(BiProfile::LogSine { kappa: k }),
                w: w.clone(),
                phi: w,
                a: 1.0,
            }
        }
        "box" => {
            let w = Modulus::log_decay(3.0)?;
            KernelSpec::convolution("box", Profile::Box, w.clone(), w)
        }
        "table" => {
            if n != 1 {
                return param("table profiles are one-dimensional");
            }
            let w = Modulus::log_decay(3.0)?;
            KernelSpec::convolution(&format!("table:{rest}"), Profile::from_csv(Path::new(rest))?, w.clone(), w)
        }
        _ => return Err(Error::Parse(format!("unknown kernel id `{id}`"))),
    };
    Ok(spec)
}

/// Which condition to sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConditionMode {
    Size,
    SmoothX,
    /// Perturbation of input slot `slot` (always 0 for linear kernels).
    SmoothY {
        slot: usize,
    },
    /// `min(1, |h|^gamma) log(2 + (1+|x|)/|h|) / log(2+|x|)`, `|h| <= |x|/2`.
    LogRatio {
        gamma: f64,
    },
}

impl ConditionMode {
    pub fn parse(s: &str, gamma: f64) -> Result<Self> {
        Ok(match s {
            "size" => ConditionMode::Size,
            "smooth_x" => ConditionMode::SmoothX,
            "smooth_y" | "smooth_y1" => ConditionMode::SmoothY { slot: 0 },
            "smooth_y2" => ConditionMode::SmoothY { slot: 1 },
            "log_ratio" => ConditionMode::LogRatio { gamma },
            _ => return Err(Error::Parse(format!("unknown condition mode `{s}`"))),
        })
    }

    fn label(&self) -> String {
        match self {
            ConditionMode::Size => "size".into(),
            ConditionMode::SmoothX => "smooth_x".into(),
            ConditionMode::SmoothY { slot } => format!("smooth_y{}", slot + 1),
            ConditionMode::LogRatio { gamma } => format!("log_ratio(gamma={gamma})"),
        }
    }
}

/// Sampling plan for [`kernel_condition_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Distances `|x - y|` are `2^{j/4}` between these bounds.
    pub dist_min: f64,
    pub dist_max: f64,
    pub base_points: usize,
    pub directions: usize,
    /// Relative increments `|h| / |x - y|` are `2^{-j/2}` down to this.
    pub h_frac_min: f64,
    /// Domain extension factor for the growth test.
    pub extension: f64,
    /// Declared threshold for `max_ratio`.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            dist_min: 1.0 / 16.0,
            dist_max: 64.0,
            base_points: 3,
            directions: 3,
            h_frac_min: 1.0 / 1024.0,
            extension: 16.0,
            threshold: f64::INFINITY,
            seed: 1,
        }
    }
}

/// Largest allowed growth of `max_ratio` under domain extension.
pub const GROWTH_LIMIT: f64 = 1.2;

/// Outcome of a condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub mode: String,
    pub max_ratio: f64,
    /// Concatenated sample coordinates `(x, y[, y2], h)` at the maximum.
    pub argmax: Vec<f64>,
    pub samples: usize,
    /// `max_ratio` on the extended domain over that on the base domain.
    pub growth: f64,
    pub flagged: bool,
}

fn geometric(lo: f64, hi: f64, per_octave: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = (lo.log2() * per_octave).ceil() as i64;
    loop {
        let v = 2f64.powf(j as f64 / per_octave);
        if v > hi * (1.0 + 1e-12) {
            break;
        }
        out.push(v);
        j += 1;
    }
    out
}

fn unit_dirs(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    if n == 1 {
        return vec![[1.0, 0.0], [-1.0, 0.0]];
    }
    let mut dirs = vec![[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..count {
        let a: f64 = rng.gen_range(0.0..2.0 * PI);
        dirs.push([a.cos(), a.sin()]);
    }
    dirs
}

struct Running {
    best: f64,
    arg: Vec<f64>,
    count: usize,
}

impl Running {
    fn push(&mut self, r: f64, arg: impl FnOnce() -> Vec<f64>) {
        self.count += 1;
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > self.best {
            self.best = r;
            self.arg = arg();
        }
    }
}

fn sweep(k: &KernelSpec, mode: ConditionMode, n: usize, plan: &SamplePlan, lo: f64, hi: f64, h_min: f64) -> Running {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let dists = geometric(lo, hi, 4.0);
    let fracs: Vec<f64> = geometric(h_min, 0.49, 2.0);
    let dirs = unit_dirs(n, plan.directions, &mut rng);
    let bases: Vec<[f64; 2]> = (0..plan.base_points)
        .map(|_| [rng.gen_range(-4.0..4.0), if n == 2 { rng.gen_range(-4.0..4.0) } else { 0.0 }])
        .collect();
    let mut acc = Running { best: 0.0, arg: Vec::new(), count: 0 };
    let wmod = &k.w;
    let pmod = &k.phi;
    let at = |base: &[f64; 2], dir: &[f64; 2], d: f64| -> [f64; 2] { [base[0] + d * dir[0], base[1] + d * dir[1]] };

    if let ConditionMode::LogRatio { gamma } = mode {
        for &d in &dists {
            for &f in &fracs {
                let hh = d * f;
                let q = hh.powf(gamma).min(1.0) * (2.0 + (1.0 + d) / hh).ln() / (2.0 + d).ln();
                acc.push(q, || vec![d, hh]);
            }
        }
        return acc;
    }

    if !k.is_bilinear() {
        for base in &bases {
            let x = &base[..n];
            for dir in &dirs {
                for &d in &dists {
                    let yv = at(base, dir, d);
                    let y = &yv[..n];
                    let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                    let env = unit_cube_maximal(&diff) * wmod.eval(1.0 / (1.0 + d));
                    let psi = k.eval(x, y);
                    match mode {
                        ConditionMode::Size => acc.push(psi.abs() / env, || [x, y].concat()),
                        _ => {
                            for hdir in &dirs {
                                for &f in &fracs {
                                    let hh = d * f;
                                    let hv = [hh * hdir[0], hh * hdir[1]];
                                    let h = &hv[..n];
                                    let moved: Vec<f64> = match mode {
                                        ConditionMode::SmoothX => x.iter().zip(h).map(|(a, b)| a + b).collect(),
                                        _ => y.iter().zip(h).map(|(a, b)| a + b).collect(),
                                    };
                                    let other = match mode {
                                        ConditionMode::SmoothX => k.eval(&moved, y),
                                        _ => k.eval(x, &moved),
                                    };
                                    let denom = env * pmod.eval(hh / (1.0 + d));
                                    acc.push((psi - other).abs() / denom, || [x, y, h].concat());
                                }
                            }
                        }
                    }
                }
            }
        }
        return acc;
    }

    // Bilinear: y1 at distance d, y2 at distance rho * d.
    let rhos = [0.0, 0.125, 1.0, 8.0];
    for base in &bases {
        let x = &base[..n];
        for (di, dir1) in dirs.iter().enumerate() {
            let dir2 = &dirs[(di + 1) % dirs.len()];
            for &d in &dists {
                for &rho in &rhos {
                    let y1v = at(base, dir1, d);
                    let y2v = at(base, dir2, rho * d);
                    let (y1, y2) = (&y1v[..n], &y2v[..n]);
                    let total = d + rho * d;
                    let env = (1.0 + total).powi(-2 * n as i32) * wmod.eval(1.0 / (1.0 + total));
                    let psi = k.eval_bilinear(x, y1, y2);
                    match mode {
                        ConditionMode::Size => acc.push(psi.abs() / env, || [x, y1, y2].concat()),
                        _ => {
                            let reach = d.max(rho * d);
                            for hdir in &dirs {
                                for &f in &fracs {
                                    let hh = reach * f;
                                    let hv = [hh * hdir[0], hh * hdir[1]];
                                    let h = &hv[..n];
                                    let shift =
                                        |p: &[f64]| -> Vec<f64> { p.iter().zip(h).map(|(a, b)| a + b).collect() };
                                    let other = match mode {
                                        ConditionMode::SmoothX => k.eval_bilinear(&shift(x), y1, y2),
                                        ConditionMode::SmoothY { slot: 0 } => k.eval_bilinear(x, &shift(y1), y2),
                                        _ => k.eval_bilinear(x, y1, &shift(y2)),
                                    };
                                    let denom = env * pmod.eval(hh / (1.0 + total));
                                    acc.push((psi - other).abs() / denom, || [x, y1, y2, h].concat());
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Samples the ratio of `|psi|` (or of its increments) to the envelope of
/// the chosen condition. The plan is run on its base domain and on a domain
/// extended by `plan.extension` (larger distances, smaller increments).
pub fn kernel_condition_check(
    k: &KernelSpec,
    mode: ConditionMode,
    n: usize,
    plan: &SamplePlan,
) -> Result<ConditionReport> {
    if !(n == 1 || n == 2) {
        return param("dimension must be 1 or 2");
    }
    if !(plan.dist_min > 0.0 && plan.dist_max > plan.dist_min && plan.extension > 1.0 && plan.h_frac_min > 0.0) {
        return param("sample plan needs 0 < dist_min < dist_max, extension > 1, h_frac_min > 0");
    }
    if let ConditionMode::SmoothY { slot } = mode {
        if slot >= k.arity() {
            return param(format!("slot {slot} out of range for arity {}", k.arity()));
        }
    }
    if let ConditionMode::LogRatio { gamma } = mode {
        if !(gamma > 0.0) {
            return param("log_ratio needs gamma > 0");
        }
    }
    let base = sweep(k, mode, n, plan, plan.dist_min, plan.dist_max, plan.h_frac_min);
    let ext = sweep(
        k,
        mode,
        n,
        plan,
        plan.dist_min / plan.extension,
        plan.dist_max * plan.extension,
        plan.h_frac_min / plan.extension.powi(2),
    );
    let growth = if base.best > 0.0 {
        ext.best / base.best
    } else if ext.best > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let flagged = !ext.best.is_finite() || ext.best > plan.threshold || growth > GROWTH_LIMIT;
    Ok(ConditionReport {
        mode: mode.label(),
        max_ratio: ext.best,
        argmax: ext.arg,
        samples: base.count + ext.count,
        growth,
        flagged,
    })
}

/// Result of [`fourier_decay_profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierReport {
    /// `max_xi |F psi(xi)| (1 + |xi|^l) log^{kappa-1}(2 + 1/|xi|)` on the finer grid.
    pub max_ratio: f64,
    pub argmax_xi: f64,
    pub coarse_max_ratio: f64,
    /// `|F psi(0)|` on the finer grid.
    pub at_zero: f64,
    pub points: usize,
    pub spacing: f64,
    /// Set when the weighted transform peaks in the top half of the band.
    pub flagged: bool,
}

struct Spectrum {
    max_ratio: f64,
    argmax: f64,
    at_zero: f64,
    nyquist: f64,
}

fn weighted_spectrum(p: &Profile, points: usize, dx: f64, l: f64, kappa: f64) -> Spectrum {
    let centre = (points as f64 - 1.0) / 2.0;
    let mut buf: Vec<Complex64> =
        (0..points).map(|j| Complex64::new(p.eval(&[(j as f64 - centre) * dx]), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(points).process(&mut buf);
    let scale = dx / (2.0 * PI).sqrt();
    let mut best = 0.0f64;
    let mut arg = 0.0;
    for (k, c) in buf.iter().enumerate().skip(1) {
        let kk = if k < points / 2 { k as f64 } else { k as f64 - points as f64 };
        let xi = (2.0 * PI * kk / (points as f64 * dx)).abs();
        let r = c.norm() * scale * (1.0 + xi.powf(l)) * (2.0 + 1.0 / xi).ln().powf(kappa - 1.0);
        if r > best {
            best = r;
            arg = xi;
        }
    }
    Spectrum { max_ratio: best, argmax: arg, at_zero: buf[0].norm() * scale, nyquist: PI / dx }
}

/// Weighted Fourier decay of a 1-D convolution profile, sampled on a
/// symmetric grid of `points` cells of width `spacing` and on a grid with
/// twice the points at half the spacing. Transform convention
/// `(2 pi)^{-1/2} int f(x) e^{-i x xi} dx`.
///
/// Errors with a resolution error when the two grids disagree by more
/// than 2x while the transform is otherwise decaying.
pub fn fourier_decay_profile(k: &KernelSpec, l: f64, kappa: f64, points: usize, spacing: f64) -> Result<FourierReport> {
    let profile = match &k.kind {
        KernelKind::Convolution(p) => p,
        _ => return param("Fourier profiles need a convolution kernel"),
    };
    if points < 16 || !points.is_power_of_two() || !(spacing > 0.0) {
        return param("points must be a power of two >= 16 and spacing positive");
    }
    let coarse = weighted_spectrum(profile, points, spacing, l, kappa);
    let fine = weighted_spectrum(profile, 2 * points, spacing / 2.0, l, kappa);
    let high_band = fine.argmax > 0.5 * fine.nyquist || coarse.argmax > 0.5 * coarse.nyquist;
    let change = fine.max_ratio / coarse.max_ratio;
    if !high_band && !(0.5..=2.0).contains(&change) {
        return Err(Error::Resolution(format!(
            "weighted transform changed by {change:.3}x under refinement; use finer spacing"
        )));
    }
    Ok(FourierReport {
        max_ratio: fine.max_ratio,
        argmax_xi: fine.argmax,
        coarse_max_ratio: coarse.max_ratio,
        at_zero: fine.at_zero,
        points: 2 * points,
        spacing: spacing / 2.0,
        flagged: high_band || !fine.max_ratio.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_envelope(u: &[f64]) -> f64 {
        let d: Vec<f64> = u.iter().map(|c| (c.abs() - 1.0).max(0.0)).collect();
        let f = |s: f64| -> f64 { d.iter().map(|&di| (s - di).clamp(0.0, 2.0) / s).product() };
        let top = d.iter().cloned().fold(0.0, f64::max) * 3.0 + 4.0;
        let steps = 100_000;
        let (mut best, mut at) = (0.0f64, 0.0);
        for i in 1..=steps {
            let s = top * i as f64 / steps as f64;
            if f(s) > best {
                best = f(s);
                at = s;
            }
        }
        let w = top / steps as f64;
        for i in 0..=100_000 {
            let s = at - w + 2.0 * w * i as f64 / 100_000.0;
            if s > 0.0 {
                best = best.max(f(s));
            }
        }
        best
    }

    #[test]
    fn one_dimensional_envelope_closed_form() {
        for u in [0.0, 0.5, 1.0, 1.5, 3.0, 10.0, -7.0] {
            let expect = (2.0 / (1.0 + f64::abs(u))).min(1.0);
            assert!((unit_cube_maximal(&[u]) - expect).abs() < 1e-15, "u={u}");
        }
    }

    #[test]
    fn two_dimensional_envelope_matches_scan() {
        for u in [[0.5, 3.0], [2.0, 2.0], [5.0, 1.5], [10.0, 0.0], [1.2, 1.1]] {
            let a = unit_cube_maximal(&u);
            let b = brute_envelope(&u);
            assert!(a >= b - 1e-12 && a - b < 1e-9, "{u:?}: {a} vs {b}");
        }
    }

    #[test]
    fn derivative_profile_matches_finite_difference() {
        let k = 3.0;
        let g = |x: &[f64]| {
            let s: f64 = x.iter().map(|c| c * c).sum();
            let n = x.len() as f64;
            (1.0 + s).powf(-0.5 * (n - 1.0)) * (2.0 + s).ln().powf(-k)
        };
        let p = Profile::LogDerivative { kappa: k };
        for x in [[0.3, 0.0], [1.7, -0.4], [-2.5, 3.0]] {
            for n in [1usize, 2] {
                let e = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[0] += e;
                xm[0] -= e;
                let fd = (g(&xp[..n]) - g(&xm[..n])) / (2.0 * e);
                assert!((p.eval(&x[..n]) - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn parameter_constraints() {
        assert!(example_kernel("ex2:kappa=3,beta=2.5", 1).is_err());
        assert!(example_kernel("ex2:kappa=3,beta=0.9", 1).is_err());
        assert!(example_kernel("ex2:kappa=4,beta=1.5", 1).is_ok());
        assert!(example_kernel("ex3:kappa=2", 1).is_err());
        assert!(example_kernel("ex1:kappa=2", 2).is_ok());
        assert!(example_kernel("nope", 1).is_err());
    }
}
