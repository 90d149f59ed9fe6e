//! Moduli of continuity and Dini-type quantities.
//!
//! A modulus is a non-decreasing `w: [0, inf) -> [0, inf)` extended
//! constantly past `t = 1`. Every modulus can be evaluated on the
//! logarithmic scale, `w(e^{-u})`, which keeps arguments such as
//! `t = e^{-1e15}` representable.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::quad::{adaptive_simpson, half_line, DEFAULT_MAX_EVALS};

type CustomFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Power {
        delta: f64,
    },
    /// `log^{-kappa/2}(2 + 1/t)`
    LogDecay {
        kappa: f64,
    },
    /// `log^{-p}(1 + 1/t)`
    LogPower {
        p: f64,
    },
    Table {
        t: Vec<f64>,
        w: Vec<f64>,
    },
    Root {
        inner: Box<Modulus>,
        m: f64,
    },
    Custom(CustomFn),
}

/// A modulus of continuity.
#[derive(Clone)]
pub struct Modulus {
    name: String,
    kind: Kind,
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Modulus({})", self.name)
    }
}

/// `ln(1 + e^u)` without overflow.
fn log1p_exp(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `ln(2 + e^u)` without overflow.
fn log2p_exp(u: f64) -> f64 {
    if u > 0.0 {
        u + (2.0 * (-u).exp()).ln_1p()
    } else {
        (2.0 + u.exp()).ln()
    }
}

impl Modulus {
    /// `t^delta`, `0 < delta <= 1`.
    pub fn power(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return param(format!("power modulus needs 0 < delta <= 1, got {delta}"));
        }
        Ok(Modulus { name: format!("power:{delta}"), kind: Kind::Power { delta } })
    }

    /// `log^{-kappa/2}(2 + 1/min(1, t))`.
    pub fn log_decay(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return param(format!("log modulus needs kappa > 0, got {kappa}"));
        }
        Ok(Modulus { name: format!("log:{kappa}"), kind: Kind::LogDecay { kappa } })
    }

    /// The pair `(w, phi)` with `w = log^{beta-kappa}(1 + 1/t)` and
    /// `phi = log^{-beta}(1 + 1/t)`.
    pub fn log_split(kappa: f64, beta: f64) -> Result<(Self, Self)> {
        if !(beta > 0.0 && kappa > beta) {
            return param(format!("split modulus needs 0 < beta < kappa, got kappa={kappa}, beta={beta}"));
        }
        let w = Modulus { name: format!("logsplit:{kappa},{beta}"), kind: Kind::LogPower { p: kappa - beta } };
        let phi = Modulus { name: format!("logsplit-phi:{beta}"), kind: Kind::LogPower { p: beta } };
        Ok((w, phi))
    }

    /// Piecewise linear modulus through `(t_i, w_i)`; interpolates to
    /// `w(0) = 0` below the first knot and is constant after the last.
    pub fn from_table(name: impl Into<String>, t: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if t.is_empty() || t.len() != w.len() {
            return param("table modulus needs equally many (t, w) rows, at least one");
        }
        for i in 0..t.len() {
            if !(t[i] > 0.0) || !t[i].is_finite() || !(w[i] >= 0.0) || !w[i].is_finite() {
                return param(format!("table row {i} is not a positive t with non-negative w"));
            }
            if i > 0 && t[i] <= t[i - 1] {
                return param("table abscissae must be strictly increasing");
            }
        }
        Ok(Modulus { name: name.into(), kind: Kind::Table { t, w } })
    }

    /// Reads a two-column CSV `(t, w)`; a header row is skipped if present.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let (mut ts, mut ws) = (Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parse(format!("row {i}: expected two columns")));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(t), Ok(w)) => {
                    ts.push(t);
                    ws.push(w);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("row {i}: non-numeric entry"))),
            }
        }
        Self::from_table(format!("table:{}", path.display()), ts, ws)
    }

    /// Wraps a closure; the closure is only called on `(0, 1]`. On the log
    /// scale it sees `t = e^{-u}`, which underflows to zero past `u ~ 745`.
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Modulus { name: name.into(), kind: Kind::Custom(Arc::new(f)) }
    }

    /// `w^{1/m}`.
    pub fn root(&self, m: f64) -> Result<Self> {
        if !(m >= 1.0) {
            return param(format!("root order must be >= 1, got {m}"));
        }
        Ok(Modulus { name: format!("({})^(1/{m})", self.name), kind: Kind::Root { inner: Box::new(self.clone()), m } })
    }

    /// Parses `power:d`, `log:k` (or `log:kappa=k`), `logsplit:k,b` (yields
    /// `w`; use [`Modulus::log_split`] for the pair) or a path to a CSV table.
    pub fn parse(id: &str) -> Result<Self> {
        let id = id.trim();
        let (head, rest) = match id.split_once(':') {
            Some((h, r)) => (h, r),
            None if id.ends_with(".csv") => return Self::from_csv(Path::new(id)),
            None => return Err(Error::Parse(format!("unknown modulus id `{id}`"))),
        };
        let nums = parse_numbers(rest)?;
        match (head, nums.as_slice()) {
            ("power", [d]) => Self::power(*d),
            ("log", [k]) => Self::log_decay(*k),
            ("logsplit", [k, b]) => Ok(Self::log_split(*k, *b)?.0),
            ("logsplit-phi", [b]) => Ok(Modulus { name: format!("logsplit-phi:{b}"), kind: Kind::LogPower { p: *b } }),
            ("table", _) => Self::from_csv(Path::new(rest)),
            _ => Err(Error::Parse(format!("unknown modulus id `{id}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `w(t)`; equals `w(1)` for `t > 1` and `0` at `t = 0`.
    pub fn eval(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return self.eval_log(0.0);
        }
        if !(t > 0.0) {
            return 0.0;
        }
        match &self.kind {
            Kind::Table { t: ts, w } => table_eval(ts, w, t),
            Kind::Custom(f) => f(t),
            _ => self.eval_log(-t.ln()),
        }
    }

    /// `w(e^{-u})`; equals `w(1)` for `u <= 0`.
    pub fn eval_log(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        match &self.kind {
            Kind::Power { delta } => (-delta * u).exp(),
            Kind::LogDecay { kappa } => log2p_exp(u).powf(-0.5 * kappa),
            Kind::LogPower { p } => log1p_exp(u).powf(-p),
            Kind::Table { t, w } => table_eval(t, w, (-u).exp().min(1.0)),
            Kind::Custom(f) => {
                let t = (-u).exp();
                if t > 0.0 {
                    f(t.min(1.0))
                } else {
                    0.0
                }
            }
            Kind::Root { inner, m } => inner.eval_log(u).powf(1.0 / m),
        }
    }

    /// Spot-checks monotonicity on 256 geometric points in `[e^{-40}, 1]`.
    pub fn check_monotone(&self) -> Result<()> {
        const POINTS: usize = 256;
        const U_MAX: f64 = 40.0;
        let mut prev_u = U_MAX;
        let mut prev = self.eval_log(U_MAX);
        if !(prev >= 0.0) {
            return param(format!("modulus {} is negative or NaN near 0", self.name));
        }
        for i in 1..POINTS {
            let u = U_MAX * (1.0 - i as f64 / (POINTS - 1) as f64);
            let v = self.eval_log(u);
            if !v.is_finite() {
                return param(format!("modulus {} is not finite at t = {}", self.name, (-u).exp()));
            }
            if v < prev - 1e-12 * prev.abs() {
                return Err(Error::MonotonicityViolation {
                    t_lo: (-prev_u).exp(),
                    t_hi: (-u).exp(),
                    w_lo: prev,
                    w_hi: v,
                });
            }
            prev = v;
            prev_u = u;
        }
        Ok(())
    }
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v = p.split_once('=').map(|(_, v)| v).unwrap_or(p);
            v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{p}`")))
        })
        .collect()
}

fn table_eval(ts: &[f64], ws: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return ws[0] * t / ts[0];
    }
    let last = ts.len() - 1;
    if t >= ts[last] {
        return ws[last];
    }
    let j = ts.partition_point(|&x| x <= t);
    let (t0, t1) = (ts[j - 1], ts[j]);
    let (w0, w1) = (ws[j - 1], ws[j]);
    w0 + (w1 - w0) * (t - t0) / (t1 - t0)
}

/// Dini constant `int_0^1 w(t)/t dt + w(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiniValue {
    pub value: f64,
    pub integral: f64,
    pub endpoint: f64,
    /// True when the truncated integral kept growing; `value` is then the
    /// last truncated value.
    pub divergent: bool,
    /// Final cutoff `U` for `u = -ln t`.
    pub cutoff: f64,
}

/// Computes the Dini constant to absolute accuracy `tol`.
pub fn dini_constant(w: &Modulus, tol: f64) -> Result<DiniValue> {
    w.check_monotone()?;
    let r = half_line(|u| w.eval_log(u), tol, DEFAULT_MAX_EVALS)?;
    let endpoint = w.eval(1.0);
    Ok(DiniValue {
        value: r.value + endpoint,
        integral: r.value,
        endpoint,
        divergent: r.divergent,
        cutoff: r.cutoff_s.exp(),
    })
}

/// `int_0^1 w(t) log(1/t) dt/t`, with the same divergence heuristic.
pub fn log_dini_integral(w: &Modulus, tol: f64) -> Result<DiniValue> {
    w.check_monotone()?;
    let r = half_line(|u| u * w.eval_log(u), tol, DEFAULT_MAX_EVALS)?;
    Ok(DiniValue { value: r.value, integral: r.value, endpoint: 0.0, divergent: r.divergent, cutoff: r.cutoff_s.exp() })
}

/// Surface measure of the unit sphere in `R^n`, `n` in `{1, 2, 3}`.
pub fn sphere_measure(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("dimension {n} unsupported"),
    }
}

/// One auxiliary inequality `lhs <~ reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniItem {
    pub item: String,
    pub lhs: f64,
    pub reference: f64,
    pub ratio: f64,
}

/// Results of [`dini_inequality_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniSuite {
    pub modulus: String,
    pub dini: f64,
    pub items: Vec<DiniItem>,
}

impl DiniSuite {
    pub fn get(&self, item: &str) -> Option<&DiniItem> {
        self.items.iter().find(|i| i.item == item)
    }
}

/// Parameters of [`dini_inequality_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteParams {
    pub alpha: f64,
    pub n: usize,
    /// Side length of the reference cube for the ring sums.
    pub ell: f64,
    /// Shift in the ring sum and root order in item (e).
    pub m: u32,
    /// Number of explicit terms in the dyadic sums.
    pub k_max: u32,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams { alpha: 1.0, n: 1, ell: 1.0, m: 2, k_max: 64 }
    }
}

const SUITE_TOL: f64 = 1e-10;

fn checked(item: &str, v: f64, divergent: bool) -> Result<f64> {
    if divergent || !v.is_finite() {
        return Err(Error::Divergent(format!("item ({item})")));
    }
    Ok(v)
}

fn entry(item: &str, lhs: f64, reference: f64) -> DiniItem {
    DiniItem { item: item.to_string(), lhs, reference, ratio: lhs / reference }
}

/// Evaluates the auxiliary Dini inequalities (a)-(e), the ring sum and
/// the far-ring integral, each as `lhs / reference`.
pub fn dini_inequality_suite(w: &Modulus, p: SuiteParams) -> Result<DiniSuite> {
    if !(p.alpha > 0.0) {
        return param("alpha must be positive");
    }
    if !(1..=3).contains(&p.n) {
        return param("dimension must be 1, 2 or 3");
    }
    if !(p.ell > 0.0) || p.m == 0 || p.k_max == 0 {
        return param("ell, m and k_max must be positive");
    }
    let d = dini_constant(w, SUITE_TOL)?;
    let dini = checked("Dini constant", d.value, d.divergent)?;
    let n = p.n as f64;
    let alpha = p.alpha;
    let log_a = (2.0 + alpha).ln();
    let mut items = Vec::new();

    // (a) int_0^inf ((1+t)^{-n} w(4t/(t+1)))^2 dt/t, t = e^v
    let fa = |v: f64| {
        let t = v.exp();
        let damp = (1.0 + t).powf(-2.0 * n);
        if damp == 0.0 {
            return 0.0;
        }
        let u_arg = -v - 4f64.ln() + log1p_exp(v);
        damp * w.eval_log(u_arg).powi(2)
    };
    let a = crate::quad::real_line(fa, SUITE_TOL, DEFAULT_MAX_EVALS)?;
    let lhs_a = checked("a", a.value, a.divergent)?.sqrt();
    items.push(entry("a", lhs_a, dini));

    // (b) int_0^inf ((t+1)^{-n} w((1+alpha)t))^2 dt/t
    let fb = |v: f64| {
        let t = v.exp();
        let damp = (1.0 + t).powf(-2.0 * n);
        if damp == 0.0 {
            return 0.0;
        }
        damp * w.eval_log(-v - (1.0 + alpha).ln()).powi(2)
    };
    let b = crate::quad::real_line(fb, SUITE_TOL, DEFAULT_MAX_EVALS)?;
    items.push(entry("b", checked("b", b.value, b.divergent)?, log_a * dini * dini));

    // (c) sum_{k>=1} w((1+alpha)/2^{k+1}), integral test tail
    let ln2 = std::f64::consts::LN_2;
    let term = |k: f64| w.eval_log((k + 1.0) * ln2 - (1.0 + alpha).ln());
    let partial: f64 = (1..=p.k_max).map(|k| term(k as f64)).sum();
    let u_k = (p.k_max as f64 + 1.0) * ln2 - (1.0 + alpha).ln();
    let tail = half_line(|u| w.eval_log(u_k + u), SUITE_TOL, DEFAULT_MAX_EVALS)?;
    let tail_v = checked("c", tail.value, tail.divergent)? / ln2;
    items.push(entry("c", partial + tail_v, log_a * dini));

    // (d) int_0^alpha w(t) dt/t, u = -ln t
    let lhs_d = if alpha > 1.0 {
        let flat = adaptive_simpson(|u| w.eval_log(u), -alpha.ln(), 0.0, SUITE_TOL, DEFAULT_MAX_EVALS)?;
        flat + d.integral
    } else {
        let shift = -alpha.ln();
        let r = half_line(|u| w.eval_log(u + shift), SUITE_TOL, DEFAULT_MAX_EVALS)?;
        checked("d", r.value, r.divergent)?
    };
    items.push(entry("d", lhs_d, log_a * dini));

    // (e) [w] <= [w^{1/m}]^m
    // A non-Dini root makes the bound vacuous: reference +inf, ratio 0.
    let root = w.root(p.m as f64)?;
    let ref_e = match dini_constant(&root, SUITE_TOL) {
        Ok(dr) if !dr.divergent => dr.value.powi(p.m as i32),
        Ok(_) | Err(Error::BudgetExceeded { .. }) | Err(Error::Divergent(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    items.push(entry("e", dini, ref_e));

    // Ring sum: each k-term equals sigma * J * 2^{-kn/2} after scaling
    // r = 2^k ell e^v, so J is computed once.
    let m_shift = p.m as f64 * ln2;
    let fj = |v: f64| {
        let s = v.exp();
        let frac = if s.is_infinite() { 1.0 } else { s / (1.0 + s) };
        let pw = frac.powf(n);
        if pw == 0.0 {
            return 0.0;
        }
        pw * w.eval_log(log1p_exp(v) - m_shift)
    };
    let j = crate::quad::real_line(fj, SUITE_TOL, DEFAULT_MAX_EVALS)?;
    let j = checked("ring sum", j.value, j.divergent)?;
    let sigma = sphere_measure(p.n);
    let q = 2f64.powf(-n / 2.0);
    let geometric: f64 = (1..=p.k_max).map(|k| q.powi(k as i32)).sum();
    let ring_tail = q.powi(p.k_max as i32 + 1) / (1.0 - q);
    items.push(entry("ring", sigma * j * (geometric + ring_tail), dini));

    // Far ring: int_{|x-c| > 32 n ell} |x-c|^{-n} w(2 sqrt(n) ell/|x-c|) dx
    let shift = (32.0 * n / (2.0 * n.sqrt())).ln();
    let far = half_line(|v| w.eval_log(v + shift), SUITE_TOL, DEFAULT_MAX_EVALS)?;
    let far_v = checked("far ring", far.value, far.divergent)?;
    items.push(entry("far", sigma * far_v, dini));

    Ok(DiniSuite { modulus: w.name.clone(), dini, items })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_past_one_is_constant() {
        let w = Modulus::log_decay(3.0).unwrap();
        assert_eq!(w.eval(1.0), w.eval(7.5));
        assert_eq!(w.eval_log(-3.0), w.eval(1.0));
    }

    #[test]
    fn log_scale_matches_direct_evaluation() {
        for m in [
            Modulus::power(0.3).unwrap(),
            Modulus::log_decay(3.0).unwrap(),
            Modulus::log_split(3.0, 1.5).unwrap().0,
            Modulus::log_split(3.0, 1.5).unwrap().1,
        ] {
            for t in [1e-9, 1e-3, 0.2, 0.9] {
                let a = m.eval(t);
                let direct = match m.name().split(':').next().unwrap() {
                    "power" => t.powf(0.3),
                    "log" => (2.0 + 1.0 / t).ln().powf(-1.5),
                    "logsplit" => (1.0 + 1.0 / t).ln().powf(-1.5),
                    _ => (1.0 + 1.0 / t).ln().powf(-1.5),
                };
                assert!((a - direct).abs() <= 1e-13 * direct, "{} at {t}", m.name());
            }
        }
    }

    #[test]
    fn table_interpolates_and_vanishes_at_zero() {
        let w = Modulus::from_table("t", vec![0.5, 1.0], vec![0.5, 1.0]).unwrap();
        assert_eq!(w.eval(0.25), 0.25);
        assert_eq!(w.eval(0.75), 0.75);
        assert_eq!(w.eval(3.0), 1.0);
        assert!(Modulus::from_table("t", vec![0.5, 0.4], vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn parse_ids() {
        assert_eq!(Modulus::parse("power:0.5").unwrap().eval(0.25), 0.5);
        assert!(Modulus::parse("log:kappa=3").is_ok());
        assert!(Modulus::parse("logsplit:3,1.5").is_ok());
        assert!(Modulus::parse("power:2").is_err());
        assert!(Modulus::parse("bogus:1").is_err());
    }

    #[test]
    fn non_monotone_modulus_is_rejected() {
        let w = Modulus::custom("bump", |t| if t < 0.5 { 1.0 } else { 0.1 });
        assert!(matches!(dini_constant(&w, 1e-8), Err(Error::MonotonicityViolation { .. })));
    }

    #[test]
    fn slowly_decaying_modulus_diverges() {
        // log^{-1}(1 + 1/t): the integrand is ~ 1/u on the log scale
        let w = Modulus::parse("logsplit-phi:1").unwrap();
        assert!(dini_constant(&w, 1e-8).unwrap().divergent);
    }
}
