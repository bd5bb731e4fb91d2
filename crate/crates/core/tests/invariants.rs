use std::sync::Arc;

use proptest::prelude::*;
use rustfft::num_complex::Complex64;

use projlab::covering::{greedy_cover, validate_covering};
use projlab::curve::direction_net;
use projlab::fourier::{
    cap_restrict, decoupling_ratio, random_cap_function, ConeGeometry, GridFunction, RadialFloor,
};
use projlab::fractal::{extract_delta_s_set, validate_delta_s_set};
use projlab::incidence::{column_counts, incidence_count, random_config};
use projlab::spacing::{thin_grid, window_scan};
use projlab::{Curve, Dyadic, PointSet};

fn cells_1d() -> impl Strategy<Value = (u32, Vec<i64>)> {
    (4u32..=9).prop_flat_map(|level| {
        let n = 1i64 << level;
        (Just(level), prop::collection::vec(0..n, 1..200))
    })
}

fn cells_2d() -> impl Strategy<Value = (u32, Vec<(i64, i64)>)> {
    (3u32..=6).prop_flat_map(|level| {
        let n = 1i64 << level;
        (Just(level), prop::collection::vec((0..n, 0..n), 1..300))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn thinned_grids_meet_the_window_bound(n in 1usize..300, t in 0.0f64..1.0, seed in any::<u64>()) {
        let level = (n.max(2) as f64).log2().ceil() as u32;
        let pts = thin_grid(n, level, t, seed);
        prop_assert!(!pts.is_empty());
        prop_assert!(pts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(window_scan(&pts, level, t).worst_constant <= 1.0 + 1e-12);
    }

    #[test]
    fn extraction_output_is_valid((level, xs) in cells_1d(), s in 0.05f64..1.0) {
        let cells = xs.into_iter().map(|x| [x, 0, 0]).collect();
        let p = PointSet::new(1, Dyadic::from_level(level), cells, 1.0).unwrap();
        if let Ok(q) = extract_delta_s_set(&p, s, 1e-6) {
            prop_assert!(validate_delta_s_set(&q, s).valid);
            prop_assert!(q.cells().iter().all(|c| p.contains(c)));
        }
    }

    #[test]
    fn extraction_2d_output_is_valid((level, xs) in cells_2d(), s in 0.1f64..2.0) {
        let cells = xs.into_iter().map(|(x, y)| [x, y, 0]).collect();
        let p = PointSet::new(2, Dyadic::from_level(level), cells, 2.0).unwrap();
        if let Ok(q) = extract_delta_s_set(&p, s, 1e-6) {
            prop_assert!(validate_delta_s_set(&q, s).valid);
        }
    }

    #[test]
    fn greedy_covers_validate((level, xs) in cells_1d(), s in prop::sample::select(vec![0.3, 0.5, 0.8])) {
        let cells = xs.into_iter().map(|x| [x, 0, 0]).collect();
        let p = Arc::new(PointSet::new(1, Dyadic::from_level(level), cells, 1.0).unwrap());
        if let Ok(c) = greedy_cover(p, s, 0.1, 0) {
            let r = validate_covering(&c);
            prop_assert!(r.passes(), "{:?}", r);
            prop_assert!(r.worst_condition3_ratio <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn parseval_on_random_samples(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..4096).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let f = GridFunction::from_samples(16, samples).unwrap();
        let rel = (f.physical_energy() - f.frequency_energy()).abs() / f.physical_energy();
        prop_assert!(rel < 1e-10);
    }
}

#[test]
fn cap_restrict_is_linear() {
    let g = ConeGeometry::build(&Curve::model(), Dyadic::from_level(4), RadialFloor::Half).unwrap();
    let all: Vec<usize> = (0..16).collect();
    let a = random_cap_function(&g, &all, 1).unwrap();
    let b = random_cap_function(&g, &all, 2).unwrap();
    let lambda = Complex64::new(0.3, -1.7);
    let sum: Vec<Complex64> = a
        .coefficients()
        .iter()
        .zip(b.coefficients())
        .map(|(x, y)| x * lambda + y)
        .collect();
    let combo = GridFunction::from_coefficients(16, sum).unwrap();
    for cap in [0, 5, 9] {
        let lhs = cap_restrict(&combo, cap, &g).unwrap();
        let ra = cap_restrict(&a, cap, &g).unwrap();
        let rb = cap_restrict(&b, cap, &g).unwrap();
        for (i, z) in lhs.coefficients().iter().enumerate() {
            let expect = ra.coefficients()[i] * lambda + rb.coefficients()[i];
            assert!((z - expect).norm() < 1e-12);
        }
    }
}

#[test]
fn decoupling_rhs_grows_with_the_cap_set() {
    let g = ConeGeometry::build(&Curve::model(), Dyadic::from_level(5), RadialFloor::Half).unwrap();
    let f = random_cap_function(&g, &[2, 9], 4).unwrap();
    let small = decoupling_ratio(&f, &[2, 9], 0.5, &g).unwrap();
    let large = decoupling_ratio(&f, &[2, 9, 20, 27], 0.5, &g).unwrap();
    assert_eq!(small.lhs, large.lhs);
    assert!(large.rhs >= small.rhs);
}

#[test]
fn double_counting_on_random_configurations() {
    let curve = Curve::model();
    for seed in 0..6 {
        for (s, t) in [(0.3, 0.5), (0.7, 0.3)] {
            let cfg = random_config(&curve, Dyadic::from_level(4), s, t, seed).unwrap();
            let m = incidence_count(&cfg);
            let rows: usize = m.row_counts().iter().sum();
            let cols: usize = column_counts(&cfg).iter().sum();
            assert_eq!(rows, cols);
            assert_eq!(rows, m.total());
        }
    }
}

#[test]
fn direction_nets_are_seed_stable() {
    let curve = Curve::helix();
    let a = direction_net(&curve, Dyadic::from_level(8), 0.6, 42).unwrap();
    let b = direction_net(&curve, Dyadic::from_level(8), 0.6, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.c_net <= 1.0);
}
