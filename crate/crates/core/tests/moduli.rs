use lpdini::moduli::{dini_constant, dini_inequality_suite, log_dini_integral, Modulus, SuiteParams};
use proptest::prelude::*;

/// Composite Simpson on `[0, U]` in `u = -ln t` plus the analytic tail
/// `2 / sqrt(U)` of `u^{-3/2}`, for `w = log^{-3/2}(2 + 1/t)`.
fn log3_oracle(u_max: f64, panels: usize) -> f64 {
    let g = |u: f64| (u + (2.0 * (-u).exp()).ln_1p()).powf(-1.5);
    let h = u_max / panels as f64;
    let mut s = g(0.0) + g(u_max);
    for i in 1..panels {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    s * h / 3.0 + 2.0 / u_max.sqrt() + 3f64.ln().powf(-1.5)
}

/// Frozen from `log3_oracle`; two truncations (U = 60, 80) agree to 1e-13.
const LOG3_DINI: f64 = 3.333_174_177_521_72;

#[test]
fn log_modulus_oracle_is_self_consistent() {
    let a = log3_oracle(60.0, 600_000);
    let b = log3_oracle(80.0, 800_000);
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    assert!((a - LOG3_DINI).abs() < 1e-9);
}

#[test]
fn power_moduli_match_closed_form() {
    for delta in [1.0, 0.5, 0.25] {
        let w = Modulus::power(delta).unwrap();
        let d = dini_constant(&w, 1e-10).unwrap();
        assert!(!d.divergent);
        assert!((d.value - (1.0 / delta + 1.0)).abs() <= 1e-6, "delta {delta}: {}", d.value);
    }
}

#[test]
fn log_modulus_matches_oracle() {
    let w = Modulus::log_decay(3.0).unwrap();
    let fine = dini_constant(&w, 1e-10).unwrap();
    let coarse = dini_constant(&w, 1e-7).unwrap();
    assert!(!fine.divergent);
    assert!((fine.value - coarse.value).abs() < 1e-6);
    assert!((fine.value - LOG3_DINI).abs() < 1e-8, "{}", fine.value);
}

#[test]
fn log_dini_integral_diverges_for_kappa_three() {
    let w = Modulus::log_decay(3.0).unwrap();
    assert!(log_dini_integral(&w, 1e-8).unwrap().divergent);
    // Converges once the log decay is fast enough.
    let w = Modulus::log_decay(6.0).unwrap();
    assert!(!log_dini_integral(&w, 1e-8).unwrap().divergent);
}

#[test]
fn suite_reference_values_for_lipschitz_modulus() {
    let w = Modulus::power(1.0).unwrap();
    let s = dini_inequality_suite(&w, SuiteParams { alpha: 1.0, ..Default::default() }).unwrap();
    // sum_{k>=1} 2^{-k}
    assert!((s.get("c").unwrap().lhs - 1.0).abs() < 1e-9);
    // [w] = 2 against [sqrt w]^2 = 9
    let e = s.get("e").unwrap();
    assert!((e.lhs - 2.0).abs() < 1e-8 && (e.reference - 9.0).abs() < 1e-7);
    let s = dini_inequality_suite(&w, SuiteParams { alpha: std::f64::consts::E, ..Default::default() }).unwrap();
    // int_0^1 dt + int_1^e dt/t
    assert!((s.get("d").unwrap().lhs - 2.0).abs() < 1e-8);
}

#[test]
fn suite_item_a_is_refinement_stable() {
    let w = Modulus::log_decay(3.0).unwrap();
    let s = dini_inequality_suite(&w, SuiteParams::default()).unwrap();
    let a = s.get("a").unwrap();
    assert!(a.ratio.is_finite() && a.ratio > 0.0);
    // Independent trapezoid in v = ln t over [-60, 40] with the u^{-3} tail.
    let f = |v: f64| {
        let t: f64 = v.exp();
        let arg: f64 = 4.0 * t / (t + 1.0);
        (1.0 + t).powi(-2) * w.eval(arg).powi(2)
    };
    let (lo, hi, m) = (-60.0, 40.0, 400_000);
    let h = (hi - lo) / m as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..m {
        acc += f(lo + i as f64 * h);
    }
    // tail below v = -60: w^2 ~ (-v)^{-3}, integral ~ 1/(2 * 60^2)
    let oracle = (acc * h + 1.0 / (2.0 * 60f64.powi(2))).sqrt();
    assert!((a.lhs - oracle).abs() < 1e-4 * oracle, "{} vs {oracle}", a.lhs);
}

#[test]
fn ring_and_far_sums_are_finite_in_two_dimensions() {
    let w = Modulus::log_decay(3.0).unwrap();
    let s = dini_inequality_suite(&w, SuiteParams { n: 2, ell: 0.25, ..Default::default() }).unwrap();
    for item in &s.items {
        assert!(item.ratio.is_finite() && item.ratio >= 0.0, "{item:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dini_dominates_endpoint_and_root_bound_holds(delta in 0.1f64..1.0, m in 2u32..4) {
        let w = Modulus::power(delta).unwrap();
        let s = dini_inequality_suite(&w, SuiteParams { m, ..Default::default() }).unwrap();
        prop_assert!(s.dini >= w.eval(1.0));
        prop_assert!(s.get("e").unwrap().ratio <= 1.0 + 1e-9);
        // closed form [w^{1/m}] = m/delta + 1
        let expect = (m as f64 / delta + 1.0).powi(m as i32);
        prop_assert!((s.get("e").unwrap().reference - expect).abs() <= 1e-6 * expect);
        for item in &s.items {
            prop_assert!(item.ratio.is_finite());
        }
    }

    #[test]
    fn split_moduli_are_monotone_and_dini(kappa in 2.6f64..5.0, frac in 0.3f64..0.6) {
        let beta = 1.1 + frac * (kappa - 2.2);
        prop_assume!(kappa - beta > 1.05);
        let (w, phi) = Modulus::log_split(kappa, beta).unwrap();
        prop_assert!(!dini_constant(&w, 1e-8).unwrap().divergent);
        prop_assert!(!dini_constant(&phi, 1e-8).unwrap().divergent);
    }
}
