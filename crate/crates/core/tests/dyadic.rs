use lpdini::dyadic::*;
use lpdini::kernels::example_kernel;
use lpdini::sampling::*;
use lpdini::Error;
use proptest::prelude::*;

fn unit_indicator(grid: Grid, height: f64) -> GridFunction {
    sample_function(&FunctionSpec::Indicator { lo: 0.0, hi: 1.0, closed: false }, grid).unwrap().scaled(height)
}

#[test]
fn cz_of_scaled_indicator() {
    let grid = Grid::new(1, 2.0, 1.0 / 8.0).unwrap();
    let f = unit_indicator(grid, 4.0);
    let cz = cz_decompose(&f, 1.0).unwrap();
    assert_eq!(cz.bad.len(), 1);
    let q = cz.bad[0].cube;
    assert_eq!((q.corner(&grid)[0], q.side_length(&grid)), (0.0, 2.0));
    for i in q.cells(&grid) {
        assert_eq!(cz.good.values[i], 2.0);
    }
    assert_eq!(cz.bad[0].values.iter().sum::<f64>(), 0.0);
    assert!(cz_violations(&f, &cz, 1e-12).is_empty());

    let none = cz_decompose(&f, 5.0).unwrap();
    assert!(none.bad.is_empty());
    assert_eq!(none.good, f);
}

#[test]
fn cz_rejects_bad_heights() {
    let grid = Grid::new(1, 2.0, 1.0 / 8.0).unwrap();
    let f = unit_indicator(grid, 4.0);
    assert!(matches!(cz_decompose(&f, 0.0), Err(Error::Parameter(_))));
    assert!(matches!(cz_decompose(&f, -1.0), Err(Error::Parameter(_))));
    // box average is 1
    assert!(matches!(cz_decompose(&f, 0.5), Err(Error::Parameter(_))));
}

#[test]
fn cz_manifest_round_trip() {
    let grid = Grid::new(1, 2.0, 1.0 / 8.0).unwrap();
    let f = unit_indicator(grid, 4.0);
    let cz = cz_decompose(&f, 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cz.write_dir(dir.path()).unwrap();
    let good = GridFunction::read_csv(&dir.path().join("good.csv")).unwrap();
    let bad = GridFunction::read_csv(&dir.path().join("bad_0.csv")).unwrap();
    assert_eq!(good.add(&bad).unwrap(), f);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["rho"], 1.0);
}

fn family(grid: Grid, cubes: &[(i64, i64)]) -> SparseFamily {
    let cubes: Vec<Cube> = cubes.iter().map(|&(lo, s)| Cube::new(1, [lo, 0], s)).collect();
    SparseFamily::from_cubes(grid, Cube::root(&grid), 0.5, &cubes)
}

#[test]
fn verify_sparse_examples() {
    // h = 1/4 on [-1, 1): [0, 1) is cells 4..8
    let grid = Grid::new(1, 1.0, 0.25).unwrap();
    let ok = verify_sparse(&family(grid, &[(4, 4), (4, 1)]), 0.5).unwrap();
    assert!(ok.sparse);
    assert_eq!(ok.worst_ratio, 0.25);
    let bad = verify_sparse(&family(grid, &[(4, 4), (4, 2), (6, 2)]), 0.5).unwrap();
    assert!(!bad.sparse);
    assert_eq!(bad.worst_ratio, 1.0);
    assert_eq!(bad.worst_cube, Some(Cube::new(1, [4, 0], 4)));
    let outside = family(grid, &[(6, 4)]);
    assert!(matches!(verify_sparse(&outside, 0.5), Err(Error::Geometry(_))));
}

#[test]
fn sparse_rhs_examples() {
    let grid = Grid::new(1, 1.0, 0.25).unwrap();
    let c = sample_function(&FunctionSpec::Constant(1.5), grid).unwrap();
    let empty = family(grid, &[]);
    assert!(sparse_rhs_eval(&empty, std::slice::from_ref(&c), 1).unwrap().values.iter().all(|v| *v == 0.0));
    let root = family(grid, &[(0, 8)]);
    assert!(sparse_rhs_eval(&root, std::slice::from_ref(&c), 1).unwrap().values.iter().all(|v| *v == 1.5));
    let ind = unit_indicator(grid, 1.0);
    let unit = family(grid, &[(4, 4)]);
    let rhs = sparse_rhs_eval(&unit, &[ind.clone(), ind.clone()], 1).unwrap();
    assert_eq!(rhs.values, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    // the triple of [0, 1) has measure 3 and sticks out of the box
    let rhs3 = sparse_rhs_eval(&unit, &[ind], 3).unwrap();
    assert!((rhs3.values[5] - 1.0 / 3.0).abs() < 1e-15);
    assert!(sparse_rhs_eval(&unit, &[c], 2).is_err());
}

#[test]
fn sparse_construct_basic_cases() {
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let grid = Grid::new(1, 2.0, 1.0 / 16.0).unwrap();
    let cone = default_cone(&grid, 1.0).unwrap();
    let q0 = Cube::root(&grid);
    let zero = sparse_construct(&k, &GridFunction::zeros(grid), &q0, &cone, &SparseParams::default()).unwrap();
    assert_eq!(zero.cubes.len(), 1);
    assert_eq!(zero.cubes[0].cube, q0);

    let bump = sample_function(&FunctionSpec::Bump { center: 0.3, radius: 0.25 }, grid).unwrap();
    let fam = sparse_construct(&k, &bump, &q0, &cone, &SparseParams::default()).unwrap();
    assert!(verify_sparse(&fam, 0.5).unwrap().sparse);
    assert!(fam.depth() <= (grid.size as f64).log2() as usize);
    let back = SparseFamily::from_json(&fam.to_json().unwrap()).unwrap();
    assert_eq!(back, fam);

    // a narrow spike forces stopping cubes below the root
    let spike = sample_function(&FunctionSpec::Bump { center: 1.1, radius: 0.1 }, grid).unwrap();
    let fam = sparse_construct(&k, &spike, &q0, &cone, &SparseParams::default()).unwrap();
    assert!(fam.cubes.len() > 1, "{:?}", fam.nodes);
    assert!(verify_sparse(&fam, 0.5).unwrap().sparse);

    let inner = Cube::new(1, [32, 0], 16);
    let far = sample_function(&FunctionSpec::Bump { center: -1.8, radius: 0.1 }, grid).unwrap();
    assert!(matches!(sparse_construct(&k, &far, &inner, &cone, &SparseParams::default()), Err(Error::Geometry(_))));
}

#[test]
fn fixed_gamma_is_respected() {
    let k = example_kernel("ex1:kappa=3", 1).unwrap();
    let grid = Grid::new(1, 2.0, 1.0 / 16.0).unwrap();
    let cone = default_cone(&grid, 1.0).unwrap();
    let spike = sample_function(&FunctionSpec::Bump { center: 1.1, radius: 0.1 }, grid).unwrap();
    let params = SparseParams { gamma: Some(1e6), ..SparseParams::default() };
    let fam = sparse_construct(&k, &spike, &Cube::root(&grid), &cone, &params).unwrap();
    assert_eq!(fam.cubes.len(), 1);
    assert_eq!(fam.nodes[0].gamma, 1e6);
    assert_eq!(fam.nodes[0].exceptional_cells, 0);
}

#[test]
fn shifted_generators() {
    let fam = shifted_family(1, 0, 0, (-3.0, 3.0)).unwrap();
    let phys = fam.physical();
    for iv in [(0.0, 1.0), (3.0, 4.0), (-3.0, -2.0)] {
        assert!(phys.contains(&iv), "{iv:?} missing from {phys:?}");
    }
    assert!(!phys.contains(&(1.0, 2.0)));
    let offsets: Vec<Vec<i64>> = (1..=3)
        .map(|k| {
            let f = shifted_family(k, 0, 0, (-9.0, 9.0)).unwrap();
            let mut o: Vec<i64> = f.intervals.iter().map(|(lo, _)| lo.rem_euclid(3)).collect();
            o.dedup();
            o
        })
        .collect();
    assert_eq!(offsets, vec![vec![0], vec![1], vec![2]]);
    assert!(shifted_family(4, 0, 0, (-1.0, 1.0)).is_err());
    assert!(shifted_family(1, 1, 2, (-1.0, 1.0)).is_err());
}

#[test]
fn shifted_closure_adds_neighbours() {
    let fam = shifted_family(1, -1, 1, (-4.0, 4.0)).unwrap();
    let phys = fam.physical();
    // [0, 1) touches [1, 3) and [-2, 0) at one point; its halves' neighbours too
    for iv in [(1.0, 3.0), (-2.0, 0.0), (1.0, 1.5), (-0.5, 0.0)] {
        assert!(phys.contains(&iv), "{iv:?}");
    }
    let b = shifted_family(2, -1, 1, (-4.0, 4.0)).unwrap();
    let prod = shifted_product(&fam, &b);
    assert!(prod.iter().all(|[x, y]| x.1 == y.1));
}

#[test]
fn shifted_families_cover_small_intervals() {
    let fams: Vec<ShiftedFamily> = (1..=3).map(|k| shifted_family(k, -4, 4, (-40.0, 40.0)).unwrap()).collect();
    let r = covering_check(&fams, (-8.0, 8.0), 1.0, 6.0).unwrap();
    assert_eq!(r.failures, 0, "{:?}", r.first_failure);
    assert!(r.checked > 3000);
    // the closure is richer than a grid: equal-length members overlap
    let len16: Vec<i64> = fams[0].intervals.iter().filter(|i| i.1 == 16).map(|i| i.0).collect();
    assert!(len16.windows(2).any(|w| w[1] - w[0] < 16));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn children_partition_parent(n in 1usize..=2, gen in 1u32..5, a in 0i64..16, b in 0i64..16) {
        let side = 1i64 << gen;
        let c = Cube::new(n, [a * side, b * side], side);
        let kids = c.children();
        prop_assert_eq!(kids.len(), 1 << n);
        prop_assert_eq!(kids.iter().map(|k| k.volume()).sum::<i64>(), c.volume());
        for (i, k) in kids.iter().enumerate() {
            prop_assert_eq!(k.parent(), c);
            prop_assert!(k.is_dyadic());
            for o in &kids[i + 1..] {
                prop_assert!(!k.intersects(o));
            }
        }
    }

    #[test]
    fn cz_invariants_hold(seed in 0u64..10_000, n in 1usize..=2, scale in 1.0f64..8.0) {
        let grid = if n == 1 { Grid::new(1, 4.0, 1.0 / 64.0).unwrap() } else { Grid::new(2, 2.0, 1.0 / 8.0).unwrap() };
        let f = sample_function(&FunctionSpec::Random { seed, lo: -1.0, hi: 0.5 }, grid).unwrap();
        let rho = f.l1() / (2.0 * grid.r).powi(n as i32) * scale;
        let cz = cz_decompose(&f, rho).unwrap();
        let v = cz_violations(&f, &cz, 1e-12);
        prop_assert!(v.is_empty(), "{:?}", v);
    }
}
