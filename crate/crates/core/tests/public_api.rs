use kmfg::distributions::{sample, sample_frequencies, DistributionSpec, KernelSpec, RngStream};
use kmfg::estimators::{gaussian_mmd2_closed_form, rf_u_mmd2};
use kmfg::presets;
use kmfg::trainer::{evaluate, train, TrainConfig};
use kmfg::{DriftNetworkF64, TrainOutputF64};

fn tiny() -> TrainConfig {
    TrainConfig {
        n_iters: 6,
        batch: 12,
        features: 20,
        hidden: vec![8, 8],
        steps: 6,
        eval_batch: 40,
        eval_interval: 3,
        seed: 11,
        ..presets::sbp_shift(10).unwrap()
    }
}

#[test]
fn single_and_double_precision_estimates_agree() {
    let kernel = KernelSpec::gaussian(0.5);
    let mu = DistributionSpec::isotropic(vec![0.0; 3], 1.0);
    let nu = DistributionSpec::isotropic(vec![1.0, 0.0, 0.0], 1.0);
    let x64 = sample::<f64>(&mu, 300, RngStream::new(4, 0)).unwrap();
    let y64 = sample::<f64>(&nu, 300, RngStream::new(4, 1)).unwrap();
    let z64 = sample_frequencies::<f64>(&kernel, 400, 3, RngStream::new(4, 2)).unwrap();
    let x32 = sample::<f32>(&mu, 300, RngStream::new(4, 0)).unwrap();
    let y32 = sample::<f32>(&nu, 300, RngStream::new(4, 1)).unwrap();
    let z32 = sample_frequencies::<f32>(&kernel, 400, 3, RngStream::new(4, 2)).unwrap();
    let a = rf_u_mmd2(&x64, &y64, &z64, 1.0).unwrap().value;
    let b = rf_u_mmd2(&x32, &y32, &z32, 1.0).unwrap().value as f64;
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    let truth = gaussian_mmd2_closed_form(&[0.0; 3], &[1.0, 0.0, 0.0], 1.0, 0.5).unwrap();
    assert!((a - truth).abs() < 0.05, "{a} vs closed form {truth}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let cfg = tiny();
    let a: TrainOutputF64 = train(&cfg).unwrap();
    let b: TrainOutputF64 = train(&cfg).unwrap();
    assert_eq!(a.network.flatten(), b.network.flatten());
    let objectives = |o: &TrainOutputF64| o.records.iter().map(|r| r.objective.to_bits()).collect::<Vec<_>>();
    assert_eq!(objectives(&a), objectives(&b));
    assert_eq!(a.final_eval.eval_mmd2.to_bits(), b.final_eval.eval_mmd2.to_bits());

    let c: TrainOutputF64 = train(&TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.network.flatten(), c.network.flatten());
}

#[test]
fn checkpoint_restores_the_trained_network() {
    let cfg = tiny();
    let out: TrainOutputF64 = train(&cfg).unwrap();
    assert_eq!(out.records.len(), cfg.n_iters);
    assert!(out.records.iter().all(|r| r.objective.is_finite() && r.sup_norm.is_finite()));

    let restored = DriftNetworkF64::from_checkpoint(&out.network.to_checkpoint()).unwrap();
    assert_eq!(restored.flatten(), out.network.flatten());
    let stream = RngStream::new(99, 3);
    let e1 = evaluate(&out.network, &cfg, 64, stream).unwrap();
    let e2 = evaluate(&restored, &cfg, 64, stream).unwrap();
    assert_eq!(e1.eval_mmd2.to_bits(), e2.eval_mmd2.to_bits());
    assert_eq!(e1.terminal_mean, e2.terminal_mean);
}
