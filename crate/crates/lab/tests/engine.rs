use std::path::Path;

use chaoslab::config::{BreuerParams, ExperimentConfig, Family, SheetParams};
use chaoslab::experiment::run_experiment;
use chaoslab::mc::{estimate_expectation, sample_vector, with_threads, McConfig};
use chaoslab::selftest::random_kernel;
use chaoslab::testfn::GSpec;
use chaoslab::LabError;
use chaoslab_core::chaos::ChaosVector;
use chaoslab_core::edgeworth::isserlis_moment;
use chaoslab_core::hermite::Linear;
use chaoslab_core::MultiIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn breuer_config(samples: usize) -> ExperimentConfig {
    ExperimentConfig {
        family: Family::Breuer(BreuerParams {
            hurst: 0.3,
            orders: vec![2, 3],
            horizons: vec![4, 6, 8, 12],
        }),
        g: GSpec::Trig {
            a: vec![0.5, 0.4],
            phase: 0.3,
        },
        mc: McConfig::new(samples, 3).with_chunk(700),
        control_variates: true,
    }
}

fn csv_bytes(cfg: &ExperimentConfig, threads: usize) -> Vec<u8> {
    let run = with_threads(Some(threads), || run_experiment(cfg, Path::new(".")))
        .unwrap()
        .unwrap();
    let mut out = Vec::new();
    run.table.write_to(&mut out).unwrap();
    out
}

#[test]
fn rate_csv_is_identical_across_thread_counts() {
    let cfg = breuer_config(5000);
    let one = csv_bytes(&cfg, 1);
    assert_eq!(one, csv_bytes(&cfg, 3));
    assert_eq!(one, csv_bytes(&cfg, 1));
}

#[test]
fn sheet_csv_is_identical_across_thread_counts() {
    let cfg = ExperimentConfig {
        family: Family::Sheet(SheetParams {
            l: 1,
            xi: vec![1.0, 0.5],
            scales: vec![0.8, 0.4],
            step: 0.25,
            horizon_factor: 25.0,
        }),
        g: GSpec::Sin { a: vec![0.25, 0.25] },
        mc: McConfig::new(3000, 9).with_chunk(512),
        control_variates: true,
    };
    assert_eq!(csv_bytes(&cfg, 1), csv_bytes(&cfg, 4));
}

#[test]
fn different_seeds_give_different_streams() {
    let mut a = breuer_config(2000);
    let x = csv_bytes(&a, 1);
    a.mc.seed += 1;
    assert_ne!(x, csv_bytes(&a, 1));
}

#[test]
fn constant_test_function_has_zero_standard_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = ChaosVector::pure(vec![random_kernel(&mut rng, 3, 2), random_kernel(&mut rng, 3, 1)]).unwrap();
    let g = Linear {
        a: vec![0.0, 0.0],
        b: 2.5,
    };
    let est = estimate_expectation(&f, &g, &McConfig::new(4000, 1)).unwrap();
    assert_eq!(est.mean, 2.5);
    assert_eq!(est.se, 0.0);
}

#[test]
fn gaussian_moments_match_isserlis() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = ChaosVector::pure(vec![random_kernel(&mut rng, 4, 1), random_kernel(&mut rng, 4, 1)]).unwrap();
    let cov = f.covariance().unwrap();
    let n = 200_000;
    let draws = sample_vector(&f, &McConfig::new(n, 5)).unwrap();
    for alpha in MultiIndex::up_to(2, 2, 4) {
        let vals: Vec<f64> = draws
            .chunks(2)
            .map(|x| alpha.monomial(x))
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = isserlis_moment(&alpha, &cov).unwrap();
        assert!((mean - exact).abs() <= 4.0 * se, "{alpha:?}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn too_few_samples_is_a_config_error() {
    let err = run_experiment(&breuer_config(10), Path::new(".")).unwrap_err();
    assert!(matches!(err, LabError::Config { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn report_carries_exact_quantities() {
    let run = run_experiment(&breuer_config(2000), Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = run.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["scales"].as_array().unwrap().len(), 4);
    assert!(v["scales"][0]["cumulants"]["2,1"].is_number());
    assert_eq!(v["config"]["mc"]["seed"], 3);
    let header = std::fs::read_to_string(csv).unwrap();
    assert!(header.starts_with(chaoslab::rates::CSV_HEADER));
}
