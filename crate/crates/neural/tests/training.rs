use qst_core::measurement::{acquire, enumerate_bases, filter_nonzero_expectation, Alphabet, DEFAULT_EPSILON};
use qst_core::{fidelity, BasisSet, DensityMatrix, MeasurementDataset, Method, PureState};
use qst_neural::network::{build_discriminator, build_network, Architecture, BuildOptions, Network};
use qst_neural::{
    probe, train_cgan, train_reconstruction, Adam, AdamConfig, CganConfig, NeuralError, ParamStore, StopReason,
    TrainConfig,
};

fn ghz_m2(n: usize) -> (PureState, MeasurementDataset) {
    let g = PureState::ghz(n).unwrap();
    let bases = BasisSet::parse(n, &["Z".repeat(n).as_str(), "X".repeat(n).as_str()]).unwrap();
    let ds = acquire(Method::M2, &g, &bases, None, None).unwrap();
    (g, ds)
}

fn net_for(arch: Architecture, ds: &MeasurementDataset, seed: u64) -> Network {
    build_network(arch, ds.n_qubits(), ds.method, &ds.bases, seed, BuildOptions::default()).unwrap()
}

#[test]
fn adam_minimizes_a_scalar_quadratic() {
    let mut store = ParamStore::new();
    let id = store.push("x", vec![1], vec![0.0]);
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let minimizer = 0.5;
    let mut steps = 0;
    while (store.get(id).data[0] - minimizer).abs() > 1e-4 {
        let x = store.get(id).data[0];
        adam.step(&mut store, &[(id, vec![2.0 * (x - minimizer)])]).unwrap();
        steps += 1;
        assert!(steps <= 2000, "x = {x}");
    }
}

#[test]
fn ghz3_fcn_reconstructs_from_two_bases() {
    let (g, ds) = ghz_m2(3);
    let mut net = net_for(Architecture::Fcn, &ds, 0);
    let cfg = TrainConfig {
        max_iterations: 1000,
        ..Default::default()
    };
    let trace = train_reconstruction(&mut net, &ds, Some((&g).into()), &cfg).unwrap();
    assert!(trace.final_fidelity.unwrap() >= 0.99, "{:?}", trace.final_fidelity);
    assert!(trace.iterations <= 1000);
    let its: Vec<usize> = trace.records.iter().map(|r| r.iteration).collect();
    assert!(its.windows(2).all(|w| w[0] < w[1]));
    assert!(trace.records.iter().filter_map(|r| r.fidelity).all(|f| (0.0..=1.0).contains(&f)));
    let rho = trace.final_rho.as_ref().unwrap();
    assert!((fidelity(&g, rho).unwrap() - trace.final_fidelity.unwrap()).abs() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (g, ds) = ghz_m2(3);
    for arch in Architecture::SUPPORTED {
        let cfg = TrainConfig {
            max_iterations: 60,
            fidelity_eval_every: 5,
            ..Default::default()
        };
        let run = || {
            let mut net = net_for(arch, &ds, 3);
            let trace = if arch == Architecture::Cgan {
                let mut d = build_discriminator(&net.spec, 4, BuildOptions::default()).unwrap();
                train_cgan(&mut net, &mut d, &ds, Some((&g).into()), &cfg, &CganConfig::default()).unwrap()
            } else {
                train_reconstruction(&mut net, &ds, Some((&g).into()), &cfg).unwrap()
            };
            (trace, net.to_json())
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a.to_csv_without_timing(), b.to_csv_without_timing(), "{arch}");
        assert_eq!(na, nb, "{arch}");
        assert_eq!(a.final_rho, b.final_rho);
    }
}

#[test]
fn loss_mostly_decreases_over_long_windows() {
    let (_, ds) = ghz_m2(3);
    let runs = 20;
    let mut monotone = 0;
    for seed in 0..runs {
        let mut net = net_for(Architecture::Fcn, &ds, seed);
        let cfg = TrainConfig {
            max_iterations: 1000,
            fidelity_eval_every: 1,
            seed,
            ..Default::default()
        };
        let trace = train_reconstruction(&mut net, &ds, None, &cfg).unwrap();
        let loss: Vec<f64> = trace.records.iter().map(|r| r.loss).collect();
        if loss.len() <= 200 || loss.windows(201).all(|w| w[200] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone * 100 >= 95 * runs, "{monotone}/{runs}");
}

/// Zero-information data can be fitted exactly without pinning down the state.
#[test]
fn uninformative_data_fits_without_identifying_the_state() {
    let n = 2;
    let mixed = DensityMatrix::maximally_mixed(n).unwrap();
    let bases = BasisSet::parse(n, &["XX", "ZZ", "YZ"]).unwrap();
    let ds = acquire(Method::M1, &mixed, &bases, None, None).unwrap();
    assert!(ds.values.iter().all(|v| v.abs() < 1e-15));
    let target = PureState::random(n, 77).unwrap();
    for arch in Architecture::SUPPORTED {
        if arch == Architecture::Cgan {
            continue;
        }
        let mut net = net_for(arch, &ds, 1);
        let cfg = TrainConfig {
            max_iterations: 3000,
            fidelity_eval_every: 50,
            ..Default::default()
        };
        let trace = train_reconstruction(&mut net, &ds, Some((&target).into()), &cfg).unwrap();
        assert!(trace.final_loss < 1e-8, "{arch}: {}", trace.final_loss);
        assert!(trace.final_fidelity.unwrap() < 0.9, "{arch}: {:?}", trace.final_fidelity);
    }
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (_, ds) = ghz_m2(3);
    let bases = enumerate_bases(3, Alphabet::FullPauli).unwrap();
    let mut net = build_network(Architecture::Fcn, 3, Method::M1, &bases, 0, BuildOptions::default()).unwrap();
    let err = train_reconstruction(&mut net, &ds, None, &TrainConfig::default()).unwrap_err();
    assert_eq!(err.trace.iterations, 0);
    let bad = TrainConfig {
        learning_rate: -1.0,
        ..Default::default()
    };
    let mut net = net_for(Architecture::Fcn, &ds, 0);
    assert!(matches!(train_reconstruction(&mut net, &ds, None, &bad).unwrap_err().error, NeuralError::Config(_)));
}

fn ghz3_m1() -> (PureState, MeasurementDataset) {
    let g = PureState::ghz(3).unwrap();
    let all = enumerate_bases(3, Alphabet::FullPauli).unwrap();
    let bases = filter_nonzero_expectation(&g, &all, DEFAULT_EPSILON).unwrap();
    assert_eq!(bases.len(), 7);
    let ds = acquire(Method::M1, &g, &bases, None, None).unwrap();
    (g, ds)
}

#[test]
fn untrained_discriminator_is_undecided() {
    let (_, ds) = ghz3_m1();
    let gen = net_for(Architecture::Cgan, &ds, 0);
    let disc = build_discriminator(&gen.spec, 1, BuildOptions::default()).unwrap();
    let p = probe(&gen, &disc, &ds).unwrap();
    assert!((p.d_real - 0.5).abs() < 1e-12 && (p.d_fake - 0.5).abs() < 1e-12, "{p:?}");
}

#[test]
fn cgan_reconstructs_ghz3() {
    let (g, ds) = ghz3_m1();
    let mut gen = net_for(Architecture::Cgan, &ds, 0);
    let mut disc = build_discriminator(&gen.spec, 1, BuildOptions::default()).unwrap();
    let cfg = TrainConfig {
        max_iterations: 2000,
        stop_at_fidelity: Some(0.99),
        ..Default::default()
    };
    let trace = train_cgan(&mut gen, &mut disc, &ds, Some((&g).into()), &cfg, &CganConfig::default()).unwrap();
    assert!(trace.final_fidelity.unwrap() >= 0.99, "{:?}", trace.final_fidelity);
    assert_eq!(trace.stop_reason, Some(StopReason::TargetFidelity));
}

#[test]
fn adversarial_only_training_stays_finite() {
    let (g, ds) = ghz3_m1();
    let mut gen = net_for(Architecture::Cgan, &ds, 2);
    let mut disc = build_discriminator(&gen.spec, 3, BuildOptions::default()).unwrap();
    let cfg = TrainConfig {
        max_iterations: 500,
        early_stop: qst_neural::EarlyStop {
            loss_threshold: 0.0,
            patience: 1000,
            ..Default::default()
        },
        ..Default::default()
    };
    let cgan = CganConfig {
        lambda_mse: 0.0,
        ..Default::default()
    };
    let trace = train_cgan(&mut gen, &mut disc, &ds, Some((&g).into()), &cfg, &cgan).unwrap();
    assert_eq!(trace.iterations, 500, "{:?} {:?}", trace.stop_reason, trace.warnings);
    assert!(trace.records.iter().all(|r| r.loss.is_finite()));
    assert!(trace.final_fidelity.unwrap().is_finite());
}

#[test]
fn csv_has_the_documented_columns() {
    let (g, ds) = ghz_m2(2);
    let mut net = net_for(Architecture::Fcn, &ds, 0);
    let cfg = TrainConfig {
        max_iterations: 20,
        fidelity_eval_every: 10,
        ..Default::default()
    };
    let trace = train_reconstruction(&mut net, &ds, Some((&g).into()), &cfg).unwrap();
    let csv = trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,loss,fidelity,elapsed_ms"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 2);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
    let side = qst_neural::sidecar(&net, &cfg, &ds, serde_json::json!({}));
    for key in ["network", "train_config", "dataset_sha256", "design_decisions"] {
        assert!(side.get(key).is_some(), "{key}: {side}");
    }
}
