use proptest::prelude::*;
use qst_crossbar::{analog_mvm, program_weights, CrossbarConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> CrossbarConfig {
    CrossbarConfig::default()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn float_mvm(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            y[j] += w[i * cols + j] * x[i];
        }
    }
    y
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[test]
fn fine_levels_reproduce_small_matrix() {
    let w = [1.0, -2.0, 0.0, 3.0];
    let xbar = program_weights(&w, 2, 2, &cfg()).unwrap();
    for (d, w) in xbar.dequantized().iter().zip(&w) {
        assert!((d - w).abs() <= 1e-3 * w.abs().max(1e-12), "{d} vs {w}");
    }
    assert_eq!(xbar.tile_map.len(), 1);
}

#[test]
fn binary_levels_use_only_the_end_conductances() {
    let c = CrossbarConfig { levels: 2, ..cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_matrix(10, 7, &mut rng);
    let xbar = program_weights(&w, 10, 7, &c).unwrap();
    for g in xbar.g_plus.iter().chain(&xbar.g_minus) {
        assert!(*g == c.g_min || *g == c.g_max, "{g}");
    }
}

#[test]
fn large_matrix_is_split_into_nine_tiles() {
    let w = vec![0.5; 300 * 300];
    let xbar = program_weights(&w, 300, 300, &cfg()).unwrap();
    assert_eq!(xbar.tile_map.len(), 9);
    let cells: usize = xbar.tile_map.iter().map(|t| t.rows * t.cols).sum();
    assert_eq!(cells, 300 * 300);
}

#[test]
fn ideal_device_matches_float_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let w = random_matrix(64, 64, &mut rng);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = float_mvm(&w, 64, 64, &x);

        // With 2^16 levels the only error left is rounding each weight to a level.
        let xbar = program_weights(&w, 64, 64, &cfg()).unwrap();
        let y = analog_mvm(&xbar, &x, &mut rng).unwrap();
        let reference = float_mvm(&xbar.dequantized(), 64, 64, &x);
        let bound = xbar.half_step() * x.iter().map(|v| v.abs()).sum::<f64>();
        for j in 0..64 {
            assert!((y[j] - reference[j]).abs() <= 1e-12 * (1.0 + reference[j].abs()));
            assert!((y[j] - exact[j]).abs() <= bound * (1.0 + 1e-9));
        }

        let fine = CrossbarConfig { levels: 1 << 20, ..cfg() };
        let xbar = program_weights(&w, 64, 64, &fine).unwrap();
        let y = analog_mvm(&xbar, &x, &mut rng).unwrap();
        let diff: Vec<f64> = y.iter().zip(&exact).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-6 * norm(&exact), "{}", norm(&diff) / norm(&exact));
    }
}

#[test]
fn zero_input_gives_zero_output_even_with_noise() {
    let c = CrossbarConfig { read_noise_sigma: 0.05, ..cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_matrix(20, 30, &mut rng);
    let xbar = program_weights(&w, 20, 30, &c).unwrap();
    let y = analog_mvm(&xbar, &vec![0.0; 20], &mut rng).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

fn error_std(sigma: f64, w: &[f64], x: &[f64], reads: usize) -> f64 {
    let c = CrossbarConfig { read_noise_sigma: sigma, ..cfg() };
    let xbar = program_weights(w, 16, 8, &c).unwrap();
    let clean = float_mvm(&xbar.dequantized(), 16, 8, x);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut errs = Vec::with_capacity(reads);
    for _ in 0..reads {
        let y = analog_mvm(&xbar, x, &mut rng).unwrap();
        errs.push(y[0] - clean[0]);
    }
    let mean = errs.iter().sum::<f64>() / reads as f64;
    (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (reads - 1) as f64).sqrt()
}

#[test]
fn read_noise_spread_scales_with_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = random_matrix(16, 8, &mut rng);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // Analytic spread of column 0: sigma * sqrt(sum_i x_i^2 (g+^2 + g-^2)) / scale.
    let xbar = program_weights(&w, 16, 8, &cfg()).unwrap();
    let var: f64 = (0..16)
        .map(|i| x[i] * x[i] * (xbar.g_plus[i * 8].powi(2) + xbar.g_minus[i * 8].powi(2)))
        .sum();
    let predicted = var.sqrt() / xbar.weight_scale;

    let s1 = error_std(0.05, &w, &x, 1000);
    let s2 = error_std(0.1, &w, &x, 1000);
    assert!((s1 / (0.05 * predicted) - 1.0).abs() < 0.1, "{s1} vs {}", 0.05 * predicted);
    // Shared random numbers make the ratio exact up to rounding.
    assert!((s2 / s1 - 2.0).abs() < 1e-9, "{}", s2 / s1);
}

#[test]
fn noisy_reads_are_reproducible() {
    let c = CrossbarConfig { read_noise_sigma: 0.02, ..cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random_matrix(12, 9, &mut rng);
    let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xbar = program_weights(&w, 12, 9, &c).unwrap();
    let a = analog_mvm(&xbar, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = analog_mvm(&xbar, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let d = analog_mvm(&xbar, &x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, d);
}

#[test]
fn rejects_bad_inputs() {
    assert!(program_weights(&[1.0, 2.0, 3.0], 2, 2, &cfg()).is_err());
    assert!(program_weights(&[1.0, f64::NAN], 1, 2, &cfg()).is_err());
    let xbar = program_weights(&[1.0, 2.0], 1, 2, &cfg()).unwrap();
    assert!(analog_mvm(&xbar, &[1.0, 2.0], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

fn level_configs() -> impl Strategy<Value = u64> {
    prop::sample::select(vec![2u64, 4, 16, 256])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rounding_stays_within_half_a_level(
        levels in level_configs(),
        w in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let c = CrossbarConfig { levels, ..cfg() };
        let xbar = program_weights(&w, 1, w.len(), &c).unwrap();
        let bound = (c.g_max - c.g_min) / ((levels - 1) as f64 * 2.0 * xbar.weight_scale);
        for (d, w) in xbar.dequantized().iter().zip(&w) {
            prop_assert!((d - w).abs() <= bound * (1.0 + 1e-9), "{} vs {} bound {}", d, w, bound);
        }
    }

    #[test]
    fn tiling_does_not_change_ideal_products(
        rows in 1usize..20,
        cols in 1usize..20,
        tile_rows in 1usize..8,
        tile_cols in 1usize..8,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_matrix(rows, cols, &mut rng);
        let x: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let whole = program_weights(&w, rows, cols, &cfg()).unwrap();
        prop_assert_eq!(whole.tile_map.len(), 1);
        let y_whole = analog_mvm(&whole, &x, &mut rng).unwrap();
        let y_again = analog_mvm(&whole, &x, &mut rng).unwrap();
        prop_assert_eq!(&y_whole, &y_again);

        let small = CrossbarConfig { rows: tile_rows, cols: tile_cols, ..cfg() };
        let tiled = program_weights(&w, rows, cols, &small).unwrap();
        prop_assert_eq!(tiled.tile_map.len(), rows.div_ceil(tile_rows) * cols.div_ceil(tile_cols));
        let y_tiled = analog_mvm(&tiled, &x, &mut rng).unwrap();
        for (a, b) in y_whole.iter().zip(&y_tiled) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
