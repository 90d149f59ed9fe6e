use lpdini::kernels::{
    example_kernel, fourier_decay_profile, kernel_condition_check, unit_cube_maximal, ConditionMode, SamplePlan,
};
use proptest::prelude::*;

fn plan() -> SamplePlan {
    SamplePlan::default()
}

#[test]
fn example_one_size_is_stable_under_extension() {
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let r = kernel_condition_check(&k, ConditionMode::Size, 1, &plan()).unwrap();
    println!("{r:?}");
    assert!(r.max_ratio.is_finite() && r.growth <= 1.2 && !r.flagged);
}

#[test]
fn smooth_examples_pass_all_modes() {
    for (id, n) in
        [("ex1:kappa=3", 1), ("ex1:kappa=3", 2), ("ex2:kappa=4,beta=1.5", 1), ("ex3:kappa=3", 1), ("ex3:kappa=3", 2)]
    {
        let k = example_kernel(id, n).unwrap();
        for mode in [ConditionMode::Size, ConditionMode::SmoothX, ConditionMode::SmoothY { slot: 0 }] {
            let r = kernel_condition_check(&k, mode, n, &plan()).unwrap();
            println!("{id} n={n} {}: max {:.4} growth {:.4}", r.mode, r.max_ratio, r.growth);
            assert!(!r.flagged, "{id} n={n}: {r:?}");
        }
    }
}

#[test]
fn bilinear_example_passes_size_and_smoothness() {
    let k = example_kernel("bex1:kappa=3", 1).unwrap();
    for mode in [
        ConditionMode::Size,
        ConditionMode::SmoothX,
        ConditionMode::SmoothY { slot: 0 },
        ConditionMode::SmoothY { slot: 1 },
    ] {
        let r = kernel_condition_check(&k, mode, 1, &plan()).unwrap();
        println!("bex1 {}: max {:.4} growth {:.4}", r.mode, r.max_ratio, r.growth);
        assert!(!r.flagged, "{r:?}");
    }
}

#[test]
fn discontinuous_profile_is_flagged() {
    let k = example_kernel("box", 1).unwrap();
    let r = kernel_condition_check(&k, ConditionMode::SmoothX, 1, &plan()).unwrap();
    println!("{r:?}");
    assert!(r.flagged);
}

#[test]
fn log_ratio_quotient_is_bounded() {
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    for gamma in [0.25, 0.5, 1.0] {
        let r = kernel_condition_check(&k, ConditionMode::LogRatio { gamma }, 1, &plan()).unwrap();
        println!("{r:?}");
        assert!(r.max_ratio.is_finite() && !r.flagged);
    }
}

#[test]
fn fourier_decay_of_example_one() {
    let k = example_kernel("ex1:kappa=2", 1).unwrap();
    let r = fourier_decay_profile(&k, 2.0, 2.0, 1 << 14, 0.125).unwrap();
    println!("{r:?}");
    assert!(!r.flagged);
    assert!(r.at_zero <= 1e-8);
    let change = r.max_ratio / r.coarse_max_ratio;
    assert!((0.5..=2.0).contains(&change));
}

#[test]
fn fourier_decay_flags_box_profile() {
    let k = example_kernel("box", 1).unwrap();
    let r = fourier_decay_profile(&k, 2.0, 2.0, 1 << 14, 0.125).unwrap();
    println!("{r:?}");
    assert!(r.flagged);
}

proptest! {
    #[test]
    fn envelope_is_a_probability_and_radially_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0, s in 1.0f64..3.0) {
        let m = unit_cube_maximal(&[a, b]);
        prop_assert!(m > 0.0 && m <= 1.0);
        let far = unit_cube_maximal(&[a * s, b * s]);
        prop_assert!(far <= m + 1e-12);
    }
}
