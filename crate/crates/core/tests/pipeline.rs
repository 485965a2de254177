use hrtf_field::baselines::{bilinear_interpolate, build_triangulation, vbap_gains, InterpolationDomain};
use hrtf_field::data::{load_archive, save_archive};
use hrtf_field::evaluation::lsd_db;
use hrtf_field::preprocess::{
    canonicalize_azimuth, equator_energy, find_equator_ring, hrir_to_magnitude, make_frequency_grid, process_ears,
    PreprocessOptions,
};
use hrtf_field::synth::{ring_grid, synthetic_archive, SyntheticDataset};
use hrtf_field::{Direction, Ear, MagnitudeField, NormalizationScope, SubjectEar};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn fft_magnitudes(x: &[f32], n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(x.get(i).map_or(0.0, |&v| f64::from(v)), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

fn random_ear(rate: f64, taps: usize, seed: u64) -> SubjectEar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = ring_grid(8, &[0.0]);
    let h = Array2::from_shape_fn((dirs.len(), taps), |_| rng.random_range(-1.0f32..1.0));
    SubjectEar::new_raw("fft", "S1", Ear::Left, rate, dirs, h).unwrap()
}

#[test]
fn magnitudes_match_fft_at_the_reference_rate() {
    let grid = make_frequency_grid();
    let ear = random_ear(44100.0, 256, 1);
    let mags = hrir_to_magnitude(&ear, &grid).unwrap();
    for (l, row) in ear.hrirs().unwrap().rows().into_iter().enumerate() {
        let spec = fft_magnitudes(row.as_slice().unwrap(), 256);
        for (j, &k) in grid.k_indices.iter().enumerate() {
            assert!((mags[[l, j]] - spec[k]).abs() < 1e-9 * spec[k].max(1.0));
        }
    }
}

#[test]
fn magnitudes_at_another_rate_match_a_zero_padded_fft() {
    // 44100/48000 = 147/160, so every grid frequency is bin 147k of a
    // 256*160-point transform at 48 kHz.
    let grid = make_frequency_grid();
    let ear = random_ear(48000.0, 200, 2);
    let mags = hrir_to_magnitude(&ear, &grid).unwrap();
    let n = 256 * 160;
    for (l, row) in ear.hrirs().unwrap().rows().into_iter().enumerate() {
        let spec = fft_magnitudes(row.as_slice().unwrap(), n);
        for (j, &k) in grid.k_indices.iter().enumerate() {
            assert!((mags[[l, j]] - spec[147 * k]).abs() < 1e-9 * spec[147 * k].max(1.0));
        }
    }
}

#[test]
fn archive_round_trip_and_preprocessing() {
    let dirs = ring_grid(24, &[-30.0, 0.0, 30.0, 60.0]);
    let ds = SyntheticDataset::generate("rt", dirs, 2, 7);
    let archive = synthetic_archive(&ds, 44100.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.hrdf");
    save_archive(&archive, &path).unwrap();
    let loaded = load_archive(&path).unwrap();
    assert_eq!(loaded, archive);

    for scope in [NormalizationScope::PerEar, NormalizationScope::PerDatabase] {
        let opts = PreprocessOptions { scope, ..Default::default() };
        let processed = process_ears(&loaded.subject_ears, &opts).unwrap();
        assert_eq!(processed.len(), 4);
        let fields: Vec<MagnitudeField> = processed.iter().map(|e| e.magnitude_field().unwrap()).collect();
        for f in &fields {
            assert_eq!(f.n_bins(), 92);
            assert!(f.directions.iter().all(|d| (0.0..360.0).contains(&d.azimuth_deg)));
        }
        if scope == NormalizationScope::PerEar {
            for f in &fields {
                let ring = find_equator_ring(&f.directions, 2.5).unwrap();
                let lin = f.values_db.mapv(|v| 10f64.powf(v / 20.0));
                assert!((equator_energy(&lin, &ring) - 1.0).abs() < 1e-9);
            }
            // the synthetic right ear mirrors the left up to a broadband gain,
            // which per-ear normalization removes
            for s in 0..2 {
                let (left, right) = (&fields[2 * s], &fields[2 * s + 1]);
                let order: Vec<usize> = left
                    .directions
                    .iter()
                    .map(|d| {
                        right
                            .directions
                            .iter()
                            .position(|r| (r.azimuth_deg - d.azimuth_deg).abs() < 1e-9 && r.elevation_deg == d.elevation_deg)
                            .unwrap()
                    })
                    .collect();
                let aligned = right.select_rows(&order);
                assert!(lsd_db(&left.values_db, &aligned.values_db).unwrap().overall_db < 1e-3);
            }
        }
    }
}

fn unit_direction() -> impl Strategy<Value = Direction> {
    (0.0..360.0f64, -1.0..1.0f64).prop_map(|(az, s)| Direction::new(az, s.asin().to_degrees()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_azimuth_is_idempotent(theta in -1e4..1e4f64) {
        let c = canonicalize_azimuth(theta);
        prop_assert!((0.0..360.0).contains(&c));
        prop_assert_eq!(canonicalize_azimuth(c), c);
        let turns = ((theta - c) / 360.0).round();
        prop_assert!((theta - c - 360.0 * turns).abs() < 1e-9);
    }

    #[test]
    fn lsd_of_a_constant_offset_is_its_magnitude(
        seed in any::<u64>(), l in 1usize..10, k in 1usize..10, c in -30.0..30.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((l, k), |_| rng.random_range(-40.0..10.0));
        let b = a.mapv(|v| v + c);
        let r = lsd_db(&a, &b).unwrap();
        prop_assert!((r.overall_db - c.abs()).abs() < 1e-9);
        prop_assert!((lsd_db(&b, &a).unwrap().overall_db - r.overall_db).abs() < 1e-12);
    }

    #[test]
    fn vbap_gains_inside_the_hull_are_convex(
        seed in any::<u64>(), n in 12usize..40, targets in prop::collection::vec(unit_direction(), 20),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<Direction> = (0..n)
            .map(|_| Direction::new(rng.random_range(0.0..360.0), rng.random_range(-1.0f64..1.0).asin().to_degrees()))
            .collect();
        let tri = build_triangulation(&nodes).unwrap();
        for t in &targets {
            let g = vbap_gains(&tri, t);
            prop_assert!((g.gains.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if g.inside {
                prop_assert!(g.gains.iter().all(|&x| x >= -1e-9));
            }
        }
    }

    #[test]
    fn bilinear_reproduces_nodes_on_ring_grids(n_az in 3usize..20, n_el in 2usize..6, seed in any::<u64>()) {
        let els: Vec<f64> = (0..n_el).map(|i| -60.0 + 120.0 * i as f64 / (n_el - 1) as f64).collect();
        let dirs = ring_grid(n_az, &els);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((dirs.len(), 4), |_| rng.random_range(-20.0..5.0));
        let field = MagnitudeField::new(dirs.clone(), values, vec![1000.0, 2000.0, 4000.0, 8000.0]).unwrap();
        for domain in [InterpolationDomain::Linear, InterpolationDomain::Db] {
            let out = bilinear_interpolate(&field, &dirs, domain).unwrap();
            prop_assert!(lsd_db(&field.values_db, &out.values_db).unwrap().overall_db < 1e-9);
            prop_assert!(out.out_of_coverage.iter().all(|&f| !f));
        }
    }
}
