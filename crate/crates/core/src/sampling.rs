//! Lattice functions on `[-R, R)^n` and cone discretizations.
//!
//! A grid has `N = 2R/h` cells per axis. Cell `i` is `[-R + i h, -R + (i+1) h)`
//! and its sample point is the midpoint. Functions vanish outside the box.
//! Two-dimensional data are stored row-major: index `i0 * N + i1`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Cell-centred lattice geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub r: f64,
    pub h: f64,
    /// Cells per axis.
    pub size: usize,
}

impl Grid {
    /// `2R/h` must be `m 2^k` with odd `m <= 15`.
    pub fn new(n: usize, r: f64, h: f64) -> Result<Self> {
        if !(n == 1 || n == 2) {
            return param(format!("dimension must be 1 or 2, got {n}"));
        }
        if !(r > 0.0 && h > 0.0) || !r.is_finite() || !h.is_finite() {
            return param(format!("R and h must be positive, got R={r}, h={h}"));
        }
        let ratio = 2.0 * r / h;
        let size = ratio.round();
        if size < 2.0 || (ratio - size).abs() > 1e-9 * size {
            return param(format!("2R/h = {ratio} is not an integer >= 2"));
        }
        let size = size as usize;
        let odd = size >> size.trailing_zeros();
        if odd > 15 {
            return param(format!("2R/h = {size} is not a small integer times a power of two"));
        }
        Ok(Grid { n, r, h, size })
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Midpoint of cell `i` along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.r + (i as f64 + 0.5) * self.h
    }

    /// Cell index along one axis of the cell containing `x`.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let i = ((x + self.r) / self.h).floor();
        if i >= 0.0 && (i as usize) < self.size {
            Some(i as usize)
        } else {
            None
        }
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        match self.n {
            1 => [self.coord(idx), 0.0],
            _ => [self.coord(idx / self.size), self.coord(idx % self.size)],
        }
    }

    /// Per-axis cell indices of a flat index.
    pub fn cell(&self, idx: usize) -> [usize; 2] {
        match self.n {
            1 => [idx, 0],
            _ => [idx / self.size, idx % self.size],
        }
    }

    pub fn flat(&self, cell: [usize; 2]) -> usize {
        match self.n {
            1 => cell[0],
            _ => cell[0] * self.size + cell[1],
        }
    }

    /// Flat index of the cell containing `x`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let i0 = self.cell_of(x[0])?;
        if self.n == 1 {
            return Some(i0);
        }
        let i1 = self.cell_of(x[1])?;
        Some(i0 * self.size + i1)
    }

    pub fn cell_measure(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    /// True when `N` is a power of two, which dyadic operations require.
    pub fn is_dyadic(&self) -> bool {
        self.size.is_power_of_two()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && self.size == other.size && self.r == other.r && self.h == other.h
    }
}

/// Samples of a function on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for a grid of {} points", values.len(), grid.len())));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                f(&p[..grid.n])
            })
            .collect();
        GridFunction { grid, values }
    }

    pub fn l1(&self) -> f64 {
        self.grid.cell_measure() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn l2(&self) -> f64 {
        (self.grid.cell_measure() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn lp(&self, p: f64) -> f64 {
        (self.grid.cell_measure() * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        self.grid.cell_measure() * crate::quad::neumaier_sum(self.values.iter().copied())
    }

    pub fn scaled(&self, c: f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(GridFunction { grid: self.grid, values })
    }

    pub fn check_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    /// Indices of non-zero samples.
    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] != 0.0).collect()
    }

    /// Writes `# n=.. R=.. h=..` then one `coords..,value` row per point.
    /// Values use shortest round-trip formatting, so reading back is exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# n={} R={:?} h={:?}", self.grid.n, self.grid.r, self.grid.h)?;
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            if self.grid.n == 1 {
                writeln!(out, "{:?},{:?}", p[0], v)?;
            } else {
                writeln!(out, "{:?},{:?},{:?}", p[0], p[1], v)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let grid = parse_header(header)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_reader(text.as_bytes());
        let mut values = Vec::with_capacity(grid.len());
        for rec in rdr.records() {
            let rec = rec?;
            let v = rec
                .get(grid.n)
                .ok_or_else(|| Error::Parse("missing value column".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            values.push(v);
        }
        Self::from_values(grid, values)
    }

    /// Binary layout: `n` as u32, `R` and `h` as f64, then the samples as
    /// f64; everything little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&(self.grid.n as u32).to_le_bytes())?;
        out.write_all(&self.grid.r.to_le_bytes())?;
        out.write_all(&self.grid.h.to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut rdr = BufReader::new(File::open(path)?);
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        rdr.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        rdr.read_exact(&mut b8)?;
        let r = f64::from_le_bytes(b8);
        rdr.read_exact(&mut b8)?;
        let h = f64::from_le_bytes(b8);
        let grid = Grid::new(n, r, h)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            rdr.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(GridFunction { grid, values })
    }
}

fn parse_header(line: &str) -> Result<Grid> {
    let body =
        line.trim().strip_prefix('#').ok_or_else(|| Error::Parse("CSV must start with `# n=.. R=.. h=..`".into()))?;
    let (mut n, mut r, mut h) = (None, None, None);
    for tok in body.split_whitespace() {
        match tok.split_once('=') {
            Some(("n", v)) => n = v.parse::<usize>().ok(),
            Some(("R", v)) => r = v.parse::<f64>().ok(),
            Some(("h", v)) => h = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    match (n, r, h) {
        (Some(n), Some(r), Some(h)) => Grid::new(n, r, h),
        _ => Err(Error::Parse(format!("bad grid header `{line}`"))),
    }
}

/// Named input functions.
///
/// Ids: `gaussian[:sigma=s,center=c]`, `bump[:center=c,radius=r]`,
/// `indicator:lo,hi` (half-open cube), `closed:lo,hi` (closed cube), `hat`,
/// `haar[:lo=a,len=l]`, `const:c`, `abspow:a` (`|x|^a`),
/// `random:seed=s,lo=a,hi=b` (i.i.d. uniform on `[-1, 1]` over `[a, b)^n`),
/// `csv:path`, `bin:path`.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSpec {
    Gaussian { sigma: f64, center: f64 },
    Bump { center: f64, radius: f64 },
    Indicator { lo: f64, hi: f64, closed: bool },
    Hat,
    Haar { lo: f64, len: f64 },
    Constant(f64),
    AbsPower(f64),
    Random { seed: u64, lo: f64, hi: f64 },
    Csv(String),
    Binary(String),
}

fn kv(rest: &str) -> Vec<(Option<String>, String)> {
    rest.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| match s.split_once('=') {
            Some((k, v)) => (Some(k.trim().to_string()), v.trim().to_string()),
            None => (None, s.trim().to_string()),
        })
        .collect()
}

fn get_num(args: &[(Option<String>, String)], key: &str, pos: usize, default: Option<f64>) -> Result<f64> {
    let named = args.iter().find(|(k, _)| k.as_deref() == Some(key));
    let raw = match named {
        Some((_, v)) => Some(v.clone()),
        None => args.iter().filter(|(k, _)| k.is_none()).nth(pos).map(|(_, v)| v.clone()),
    };
    match raw {
        Some(v) => v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number for {key}: `{v}`"))),
        None => default.ok_or_else(|| Error::Parse(format!("missing parameter `{key}`"))),
    }
}

impl FunctionSpec {
    pub fn parse(id: &str) -> Result<Self> {
        let (head, rest) = id.trim().split_once(':').unwrap_or((id.trim(), ""));
        let a = kv(rest);
        Ok(match head {
            "gaussian" => FunctionSpec::Gaussian {
                sigma: get_num(&a, "sigma", 0, Some(1.0))?,
                center: get_num(&a, "center", 1, Some(0.0))?,
            },
            "bump" => FunctionSpec::Bump {
                center: get_num(&a, "center", 0, Some(0.0))?,
                radius: get_num(&a, "radius", 1, Some(1.0))?,
            },
            "indicator" | "closed" => FunctionSpec::Indicator {
                lo: get_num(&a, "lo", 0, None)?,
                hi: get_num(&a, "hi", 1, None)?,
                closed: head == "closed",
            },
            "hat" => FunctionSpec::Hat,
            "haar" => {
                FunctionSpec::Haar { lo: get_num(&a, "lo", 0, Some(0.0))?, len: get_num(&a, "len", 1, Some(1.0))? }
            }
            "const" => FunctionSpec::Constant(get_num(&a, "c", 0, Some(1.0))?),
            "abspow" => FunctionSpec::AbsPower(get_num(&a, "a", 0, None)?),
            "random" => FunctionSpec::Random {
                seed: get_num(&a, "seed", 0, Some(0.0))? as u64,
                lo: get_num(&a, "lo", 1, Some(-1.0))?,
                hi: get_num(&a, "hi", 2, Some(1.0))?,
            },
            "csv" => FunctionSpec::Csv(rest.to_string()),
            "bin" => FunctionSpec::Binary(rest.to_string()),
            _ => return Err(Error::Parse(format!("unknown function id `{id}`"))),
        })
    }
}

/// Samples `spec` at the midpoints of `grid`.
pub fn sample_function(spec: &FunctionSpec, grid: Grid) -> Result<GridFunction> {
    let inside = |x: &[f64], lo: f64, hi: f64, closed: bool| {
        x.iter().all(|&c| if closed { c >= lo && c <= hi } else { c >= lo && c < hi })
    };
    let norm2 = |x: &[f64], c: f64| x.iter().map(|v| (v - c) * (v - c)).sum::<f64>();
    Ok(match spec {
        FunctionSpec::Gaussian { sigma, center } => {
            if !(*sigma > 0.0) {
                return param("gaussian width must be positive");
            }
            GridFunction::from_fn(grid, |x| (-norm2(x, *center) / (sigma * sigma)).exp())
        }
        FunctionSpec::Bump { center, radius } => {
            if !(*radius > 0.0) {
                return param("bump radius must be positive");
            }
            GridFunction::from_fn(grid, |x| {
                let s = norm2(x, *center) / (radius * radius);
                if s < 1.0 {
                    (-1.0 / (1.0 - s)).exp()
                } else {
                    0.0
                }
            })
        }
        FunctionSpec::Indicator { lo, hi, closed } => {
            GridFunction::from_fn(grid, |x| if inside(x, *lo, *hi, *closed) { 1.0 } else { 0.0 })
        }
        FunctionSpec::Hat => GridFunction::from_fn(grid, |x| x.iter().map(|c| (1.0 - c.abs()).max(0.0)).product()),
        FunctionSpec::Haar { lo, len } => GridFunction::from_fn(grid, |x| {
            if !inside(x, *lo, lo + len, false) {
                return 0.0;
            }
            if x[0] < lo + 0.5 * len {
                1.0
            } else {
                -1.0
            }
        }),
        FunctionSpec::Constant(c) => GridFunction::from_fn(grid, |_| *c),
        FunctionSpec::AbsPower(a) => GridFunction::from_fn(grid, |x| norm2(x, 0.0).sqrt().powf(*a)),
        FunctionSpec::Random { seed, lo, hi } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut f = GridFunction::zeros(grid);
            for i in 0..grid.len() {
                let p = grid.point(i);
                let u: f64 = rng.gen_range(-1.0..1.0);
                if inside(&p[..grid.n], *lo, *hi, false) {
                    f.values[i] = u;
                }
            }
            f
        }
        FunctionSpec::Csv(path) => {
            let f = GridFunction::read_csv(Path::new(path))?;
            resample_check(f, grid)?
        }
        FunctionSpec::Binary(path) => {
            let f = GridFunction::read_binary(Path::new(path))?;
            resample_check(f, grid)?
        }
    })
}

fn resample_check(f: GridFunction, grid: Grid) -> Result<GridFunction> {
    if f.grid.same_as(&grid) {
        Ok(f)
    } else {
        Err(Error::GridMismatch(format!("file grid {:?} differs from requested {:?}", f.grid, grid)))
    }
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("dimension {n} unsupported"),
    }
}

/// Lattice offsets `k h` with `|k h| < rho h`, stored as rows: for each
/// first-axis offset `a`, second-axis offsets `-b..=b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub rows: Vec<(i64, i64)>,
}

impl Stencil {
    /// Offsets strictly inside the radius `rho` (in cells).
    pub fn disc(n: usize, rho: f64) -> Self {
        let strict_max = |r2: f64| -> i64 {
            // largest k >= 0 with k^2 < r2
            if r2 <= 0.0 {
                return -1;
            }
            let mut k = r2.sqrt().floor() as i64;
            while k > 0 && (k * k) as f64 >= r2 {
                k -= 1;
            }
            while (((k + 1) * (k + 1)) as f64) < r2 {
                k += 1;
            }
            k
        };
        let r2 = rho * rho;
        let k = strict_max(r2);
        if n == 1 {
            return Stencil { rows: vec![(0, k)] };
        }
        let rows = (-k..=k).map(|a| (a, strict_max(r2 - (a * a) as f64))).filter(|&(_, b)| b >= 0).collect();
        Stencil { rows }
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(|&(_, b)| (2 * b + 1) as usize).sum()
    }

    /// Largest absolute offset along the first axis.
    pub fn reach(&self) -> i64 {
        self.rows.iter().map(|&(a, b)| a.abs().max(b)).max().unwrap_or(0)
    }
}

/// One scale of a discretized cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeLevel {
    pub t: f64,
    /// `ln r` for the geometric ratio `r = 2^{1/q}`.
    pub log_weight: f64,
    pub stencil: Stencil,
}

/// Discretization of `{(y, t): |x - y| < alpha t, t_min <= t <= t_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeGrid {
    pub alpha: f64,
    pub n: usize,
    pub h: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub q: u32,
    pub levels: Vec<ConeLevel>,
}

/// Levels sit at log-midpoints of `[t_min r^j, t_min r^{j+1}]`,
/// `r = 2^{1/q}`, covering `[t_min, t_max]`.
pub fn build_cone(alpha: f64, n: usize, h: f64, t_min: f64, t_max: f64, q: u32) -> Result<ConeGrid> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return param(format!("aperture must be >= 1, got {alpha}"));
    }
    if !(n == 1 || n == 2) || !(h > 0.0) || q == 0 {
        return param("need n in {1, 2}, h > 0 and q >= 1");
    }
    if !(t_min >= h * (1.0 - 1e-12)) || !(t_max > t_min) {
        return param(format!("need h <= t_min < t_max, got t_min={t_min}, t_max={t_max}, h={h}"));
    }
    if alpha * t_min < h {
        return Err(Error::Resolution(format!("alpha t_min = {} is below h = {h}", alpha * t_min)));
    }
    let ln_r = std::f64::consts::LN_2 / q as f64;
    let count = ((t_max / t_min).ln() / ln_r - 1e-9).ceil().max(1.0) as usize;
    let levels = (0..count)
        .map(|j| {
            let t = t_min * ((j as f64 + 0.5) * ln_r).exp();
            ConeLevel { t, log_weight: ln_r, stencil: Stencil::disc(n, alpha * t / h) }
        })
        .collect();
    Ok(ConeGrid { alpha, n, h, t_min, t_max, q, levels })
}

impl ConeGrid {
    /// Same scales with a different aperture.
    pub fn with_alpha(&self, alpha: f64) -> Result<ConeGrid> {
        build_cone(alpha, self.n, self.h, self.t_min, self.t_max, self.q)
    }

    pub fn scales(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.t).collect()
    }

    /// `sum_levels |stencil| (h/t)^n ln r`, the discrete counterpart of
    /// `|B(0,1)| alpha^n ln(t_max/t_min)`.
    pub fn discrete_volume(&self) -> f64 {
        self.levels.iter().map(|l| l.stencil.count() as f64 * (self.h / l.t).powi(self.n as i32) * l.log_weight).sum()
    }
}

/// Default cone: `t_min = 2h`, `t_max = 2R`, four levels per octave.
pub fn default_cone(grid: &Grid, alpha: f64) -> Result<ConeGrid> {
    build_cone(alpha, grid.n, grid.h, 2.0 * grid.h, 2.0 * grid.r, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_non_integer_ratio() {
        assert!(Grid::new(1, 1.0, 0.3).is_err());
        assert!(Grid::new(1, 2.0, 0.5).is_ok());
        assert!(Grid::new(3, 2.0, 0.5).is_err());
        assert!(Grid::new(1, 17.0 / 2.0, 0.5).is_err());
    }

    #[test]
    fn closed_indicator_samples() {
        let g = Grid::new(1, 2.0, 0.5).unwrap();
        let f = sample_function(&FunctionSpec::parse("closed:-1,1").unwrap(), g).unwrap();
        assert_eq!(f.values, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((f.l1() - 2.0).abs() <= g.h);
    }

    #[test]
    fn stencil_is_strict() {
        let s = Stencil::disc(1, 2.0);
        assert_eq!(s.rows, vec![(0, 1)]);
        assert_eq!(Stencil::disc(2, 1.0).count(), 1);
        assert_eq!(Stencil::disc(2, 1.5).count(), 9);
    }

    #[test]
    fn cone_resolution_error() {
        assert!(matches!(build_cone(1.0, 1, 1.0, 0.5, 4.0, 2), Err(Error::Parameter(_))));
        assert!(build_cone(1.0, 1, 1.0, 1.0, 4.0, 2).is_ok());
    }
}
