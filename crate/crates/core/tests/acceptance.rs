//! One test per acceptance criterion. Each prints a single
//! `criterion NN name: PASS|FAIL detail` line; run with `--nocapture` to see
//! them. Tolerances are pinned here, not read from configuration.

use std::time::Instant;

use lpdini::dyadic::{covering_check, cz_decompose, shifted_family, ShiftedFamily};
use lpdini::harness::*;
use lpdini::kernels::{example_kernel, fourier_decay_profile};
use lpdini::moduli::{dini_constant, Modulus};
use lpdini::operators::*;
use lpdini::sampling::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DINI_TOL: f64 = 1e-6;
const APERTURE_TOL: f64 = 0.05;
const CZ_TOL: f64 = 1e-12;
const DOMINATION_SPREAD: f64 = 10.0;
const WEAK_SLOPE: f64 = 1.5;
const CASCADE_SLACK: f64 = 1e-10;
const FOURIER_CHANGE: f64 = 2.0;
const FOURIER_ZERO: f64 = 1e-8;
const A2_TOL: f64 = 0.02;
const REFINE_CHANGE: f64 = 2.0;
const MARCINKIEWICZ_SPREAD: f64 = 4.0;
const GATE_TOL: f64 = 1e-8;

fn line(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n:02} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_dini_quadrature() {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for delta in [1.0, 0.5, 0.25] {
        let w = Modulus::power(delta).unwrap();
        let t = Instant::now();
        let d = dini_constant(&w, 1e-10).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        worst = worst.max((d.value - (1.0 / delta + 1.0)).abs());
    }
    let pass = worst <= DINI_TOL && slowest < 1.0;
    line(1, "dini_quadrature", pass, format!("max error {worst:.1e}, slowest {slowest:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_02_aperture_l2_identity() {
    let t = Instant::now();
    let cfg = CampaignConfig::default();
    let grid = cfg.grid().unwrap();
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let f = sample_function(&FunctionSpec::Gaussian { sigma: 1.0, center: 0.0 }, grid).unwrap();
    let cone = cfg.cone_for(&grid, 1.0).unwrap();
    let r = aperture_scaling_check(&k, &[f], &cone, &[1.0, 2.0, 4.0], ApertureNorm::L2, gated_backend(&k)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = r.ratios[1..].iter().zip([2.0, 4.0]).all(|(q, a)| (q / a - 1.0).abs() <= APERTURE_TOL);
    let pass = ok && secs < 120.0;
    line(
        2,
        "aperture_l2_identity",
        pass,
        format!("ratios at alpha 2, 4: {:.4}, {:.4}; {secs:.2} s", r.ratios[1], r.ratios[2]),
    );
    assert!(pass);
}

#[test]
fn criterion_03_cz_exactness() {
    let grid = Grid::new(1, 8.0, 16.0 / 4096.0).unwrap();
    assert_eq!(grid.size, 1 << 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations: Vec<String> = Vec::new();
    let mut decompositions = 0;
    for run in 0..20u64 {
        let lo = rng.gen_range(-7.0..0.0);
        let hi = rng.gen_range(0.5..7.0);
        let f = sample_function(&FunctionSpec::Random { seed: 100 + run, lo, hi }, grid).unwrap();
        let f = f.scaled(rng.gen_range(0.1..10.0));
        let l1 = f.l1();
        let base = l1 / (2.0 * grid.r);
        for j in 0..8 {
            let rho = base * 2f64.powf(j as f64 * 0.75 + 0.25);
            let cz = cz_decompose(&f, rho).unwrap();
            decompositions += 1;
            let tag = |s: &str| format!("run {run} height {j}: {s}");
            let mut sum = cz.good.values.clone();
            let mut covered = vec![false; grid.len()];
            let mut volume = 0.0;
            for b in &cz.bad {
                let cells = b.cube.cells(&grid);
                for (&i, v) in cells.iter().zip(&b.values) {
                    sum[i] += v;
                    if covered[i] {
                        violations.push(tag("overlapping cubes"));
                    }
                    covered[i] = true;
                }
                let abs: f64 = b.values.iter().map(|v| v.abs()).sum();
                let int: f64 = b.values.iter().sum();
                if int.abs() > CZ_TOL * abs {
                    violations.push(tag("bad part mean"));
                }
                let avg = cells.iter().map(|&i| f.values[i].abs()).sum::<f64>() / cells.len() as f64;
                if !(rho < avg && avg <= 2.0 * rho) {
                    violations.push(tag(&format!("cube average {avg} against {rho}")));
                }
                volume += cells.len() as f64 * grid.h;
            }
            for (i, (s, v)) in sum.iter().zip(&f.values).enumerate() {
                if (s - v).abs() > CZ_TOL * v.abs().max(1.0) {
                    violations.push(tag(&format!("reconstruction at {i}")));
                }
            }
            if cz.good.linf() > 2.0 * rho {
                violations.push(tag("good part height"));
            }
            if volume > l1 / rho {
                violations.push(tag("total cube measure"));
            }
        }
    }
    let pass = violations.is_empty();
    line(
        3,
        "cz_exactness",
        pass,
        format!("{decompositions} decompositions, {} violations {:?}", violations.len(), violations.first()),
    );
    assert!(pass);
}

#[test]
fn criterion_04_sparse_domination() {
    let grid = Grid::new(1, 4.0, 1.0 / 16.0).unwrap();
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let cone = default_cone(&grid, 1.0).unwrap();
    let (r, runs) = sparse_domination_campaign(&k, grid, &cone, 20, 4242, gated_backend(&k)).unwrap();
    let sparse = runs.iter().filter(|d| d.sparse).count();
    let mut sorted = r.ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let spread = sorted[19] / (0.5 * (sorted[9] + sorted[10]));
    let pass = sparse == 20 && spread <= DOMINATION_SPREAD && r.passed;
    line(
        4,
        "sparse_domination",
        pass,
        format!("{sparse}/20 sparse, fitted C max {:.3}, max/median {spread:.3}", sorted[19]),
    );
    assert!(pass);
}

#[test]
fn criterion_05_weak_aperture_exponent() {
    let grid = Grid::new(1, 32.0, 1.0 / 16.0).unwrap();
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let f = sample_function(&FunctionSpec::Indicator { lo: -0.5, hi: 0.5, closed: false }, grid).unwrap();
    let cone = build_cone(1.0, 1, grid.h, 2.0 * grid.h, 8.0, 4).unwrap();
    let r =
        aperture_scaling_check(&k, &[f], &cone, &[1.0, 2.0, 4.0, 8.0], ApertureNorm::Weak, gated_backend(&k)).unwrap();
    let slope = r.fit.unwrap().slope;
    let pass = slope <= WEAK_SLOPE && r.passed;
    line(5, "weak_aperture_exponent", pass, format!("fitted exponent {slope:.3}"));
    assert!(pass);
}

#[test]
fn criterion_06_g_star_cascade() {
    // 2^9 t_min = 1024 h exceeds the box diameter 512 h, so C = 1
    let grid = Grid::new(1, 8.0, 1.0 / 32.0).unwrap();
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let cone = default_cone(&grid, 1.0).unwrap();
    let inputs = [
        sample_function(&FunctionSpec::Bump { center: 0.5, radius: 1.0 }, grid).unwrap(),
        sample_function(&FunctionSpec::Indicator { lo: -3.0, hi: -1.0, closed: false }, grid).unwrap(),
        spiky_function(grid, 6),
    ];
    let mut ratios = Vec::new();
    for f in inputs {
        let r = g_star_cascade_check(&k, &[f], &cone, 3.0, 8, gated_backend(&k)).unwrap();
        assert!(r.notes.is_empty());
        ratios.extend(r.ratios);
    }
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|q| **q > 1.0 + CASCADE_SLACK).count();
    let pass = violations == 0;
    line(6, "g_star_cascade", pass, format!("single fitted C {c:.4}, {violations} violations of C = 1"));
    assert!(pass);
}

#[test]
fn criterion_07_fourier_decay() {
    let k = example_kernel("ex1:kappa=2", 1).unwrap();
    let r = fourier_decay_profile(&k, 2.0, 2.0, 1 << 14, 0.125).unwrap();
    let change = (r.max_ratio / r.coarse_max_ratio).max(r.coarse_max_ratio / r.max_ratio);
    let pass = r.max_ratio.is_finite() && change <= FOURIER_CHANGE && r.at_zero <= FOURIER_ZERO;
    line(
        7,
        "fourier_decay",
        pass,
        format!("max {:.4e} (2^14) vs {:.4e} (2^15), |F(0)| {:.1e}", r.coarse_max_ratio, r.max_ratio, r.at_zero),
    );
    assert!(pass);
}

/// Exhaustive interval enumeration without prefix sums.
fn a2_enumeration(w: &[f64], min_side: usize) -> f64 {
    let inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
    let mut best = 0.0f64;
    for a in 0..w.len() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for b in a..w.len() {
            s1 += w[b];
            s2 += inv[b];
            let l = (b - a + 1) as f64;
            if b + 1 - a >= min_side {
                best = best.max(s1 * s2 / (l * l));
            }
        }
    }
    best
}

#[test]
fn criterion_08_a2_brute_force() {
    let grid = Grid::new(1, 8.0, 1.0 / 64.0).unwrap();
    let w = sample_function(&FunctionSpec::AbsPower(0.5), grid).unwrap();
    let wv = WeightVector::new(vec![w.clone()], vec![2.0]).unwrap();
    let a = apvec_constant(&wv, 4).unwrap();
    let oracle = a2_enumeration(&w.values, 4);
    let agree = (a / oracle - 1.0).abs() <= A2_TOL;
    let target = 4.0 / 3.0;
    let near_target = (a / target - 1.0).abs() <= A2_TOL;
    let pass = agree && near_target;
    // Off-centre intervals [-sL, L] reach 3/2 near s = 0.072; 4/3 is the
    // centred-interval value.
    line(
        8,
        "a2_brute_force",
        pass,
        format!("computed {a:.5}, enumeration {oracle:.5}, expected 4/3 (continuum sup over all intervals is 3/2)"),
    );
    assert!(agree, "computation disagrees with enumeration");
    assert!(near_target, "A2 of |x|^(1/2) is {a}, not 4/3 within {A2_TOL}");
}

#[test]
fn criterion_09_bilinear_weak_endpoint() {
    let k = example_kernel("bex1:kappa=3", 1).unwrap();
    let mut sups = Vec::new();
    let mut rho_stability = 0.0f64;
    for h in [1.0 / 16.0, 1.0 / 32.0] {
        let grid = Grid::new(1, 8.0, h).unwrap();
        let norm = |f: GridFunction| {
            let m = f.l1();
            f.scaled(1.0 / m)
        };
        let f1 = norm(sample_function(&FunctionSpec::Bump { center: 0.0, radius: 1.0 }, grid).unwrap());
        let f2 = norm(sample_function(&FunctionSpec::Bump { center: 0.5, radius: 1.0 }, grid).unwrap());
        let cone = build_cone(1.0, 1, grid.h, 2.0 * grid.h, 4.0, 4).unwrap();
        let s = square_function(&k, &[f1, f2], &cone, Backend::Direct).unwrap();
        let exact = weak_type_profile(&s, 1.0, 0.5, &[]).unwrap();
        let rhos: Vec<f64> = (0..40).map(|j| exact.argmax_rho * 2f64.powf((j as f64 - 20.0) / 4.0)).collect();
        let gridded = weak_type_profile(&s, 1.0, 0.5, &rhos).unwrap();
        rho_stability = rho_stability.max(gridded.stability).max(exact.sup / gridded.sup);
        sups.push(exact.sup);
    }
    let change = (sups[1] / sups[0]).max(sups[0] / sups[1]);
    let pass =
        sups.iter().all(|s| s.is_finite() && *s > 0.0) && change <= REFINE_CHANGE && rho_stability <= REFINE_CHANGE;
    line(
        9,
        "bilinear_weak_endpoint",
        pass,
        format!("sup {:.4} (h=1/16) vs {:.4} (h=1/32), level-grid stability {rho_stability:.3}", sups[0], sups[1]),
    );
    assert!(pass);
}

#[test]
fn criterion_10_marcinkiewicz_l2() {
    let grid = Grid::new(1, 64.0, 0.25).unwrap();
    let w = Modulus::parse("log:3").unwrap();
    let r = marcinkiewicz_campaign(&w, &grid, 20, 50, 77).unwrap();
    let max = r.ratios.iter().cloned().fold(0.0, f64::max);
    let min = r.ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = max / min <= MARCINKIEWICZ_SPREAD && r.passed;
    line(10, "marcinkiewicz_l2", pass, format!("fitted C {max:.4}, spread {:.3}", max / min));
    assert!(pass);
}

#[test]
fn criterion_11_shifted_covering() {
    let fams: Vec<ShiftedFamily> = (1..=3).map(|k| shifted_family(k, -4, 4, (-40.0, 40.0)).unwrap()).collect();
    let r = covering_check(&fams, (-8.0, 8.0), 1.0, 6.0).unwrap();
    let pass = r.failures == 0 && r.checked > 0;
    line(
        11,
        "shifted_covering",
        pass,
        format!("{} intervals, {} failures, worst length ratio {:.3}", r.checked, r.failures, r.worst_ratio),
    );
    assert!(pass);
}

#[test]
fn criterion_12_fft_oracle_gate() {
    let mut worst = 0.0f64;
    let mut pass = true;
    for id in ["ex1:kappa=3", "ex1:kappa=2", "ex2:kappa=4,beta=2", "ex3:kappa=3"] {
        let k = example_kernel(id, 1).unwrap();
        let g = fft_oracle_gate(&k, 10, 0x5eed).unwrap();
        worst = worst.max(g.max_rel_err);
        pass &= g.passed && g.max_rel_err <= GATE_TOL;
    }
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    pass &= gated_backend(&k) == Backend::Fft;
    line(12, "fft_oracle_gate", pass, format!("worst relative error {worst:.2e} over 4 kernels x 10 cases"));
    assert!(pass);
}
