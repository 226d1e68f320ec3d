use super::*;
use crate::diffgraph::grad_check;
use crate::sde::ConstantDrift;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        n_iters: 3,
        batch: 6,
        features: 5,
        lambda: 50.0,
        congestion: 0.0,
        running_cost: RunningCost::None,
        penalty: PenaltyKind::RfU,
        terminal_kernel: KernelSpec::gaussian(1.0),
        congestion_kernel: KernelSpec::gaussian(1.0),
        sigma: 0.5,
        horizon: 1.0,
        steps: 4,
        dynamics: Dynamics::Plain,
        initial: DistributionSpec::dirac_origin(2),
        target: DistributionSpec::isotropic(vec![1.0, -1.0], 0.5),
        terminal_columns: None,
        hidden: vec![6],
        learning_rate: 1e-2,
        adam: AdamConfig::default(),
        seed: 3,
        eval_batch: 50,
        eval_interval: 0,
        schedules: Schedules::default(),
    }
}

fn ev_cfg() -> TrainConfig {
    TrainConfig {
        congestion: 100.0,
        running_cost: RunningCost::AggregateDemand,
        lambda: 1e3,
        terminal_kernel: KernelSpec::gaussian(50.0),
        sigma: 0.05,
        dynamics: Dynamics::Ev,
        initial: DistributionSpec::ev_initial(),
        target: DistributionSpec::isotropic(vec![0.85], 0.05),
        terminal_columns: Some((0, 1)),
        ..small_cfg()
    }
}

#[test]
fn adam_hand_example() {
    let mut p = vec![Tensor::scalar(1.0f64)];
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st, &AdamConfig::default(), 0.1).unwrap();
    assert!((p[0].item() - 0.9).abs() < 1e-7);
    let mut q = vec![Tensor::row(vec![0.3f64, -2.0])];
    let mut st = AdamState::new(&q);
    adam_step(&mut q, &[Tensor::row(vec![0.0, 0.0])], &mut st, &AdamConfig::default(), 0.1).unwrap();
    assert_eq!(q[0].data(), &[0.3, -2.0]);
    assert!(adam_step(&mut q, &[], &mut st, &AdamConfig::default(), 0.1).is_err());
}

#[test]
fn schedules_are_piecewise_constant() {
    let s = Schedule(vec![(0, 10.0), (100, 100.0), (250, 1000.0)]);
    assert_eq!(s.at(0, 1.0), 10.0);
    assert_eq!(s.at(99, 1.0), 10.0);
    assert_eq!(s.at(100, 1.0), 100.0);
    assert_eq!(s.at(10_000, 1.0), 1000.0);
    assert_eq!(Schedule(vec![(5, 2usize)]).at(4, 7), 7);
    let mut cfg = small_cfg();
    cfg.schedules.features = Some(Schedule(vec![(0, 3), (2, 9)]));
    assert_eq!((cfg.features_at(1), cfg.features_at(2)), (3, 9));
    cfg.schedules.lambda = Some(Schedule(vec![(3, 1.0), (1, 2.0)]));
    assert!(cfg.validate().is_err());
}

#[test]
fn validation_errors() {
    let base = small_cfg();
    assert!(base.validate().is_ok());
    for bad in [
        TrainConfig { batch: 1, ..base.clone() },
        TrainConfig { features: 0, ..base.clone() },
        TrainConfig { lambda: 0.0, ..base.clone() },
        TrainConfig { congestion: -1.0, ..base.clone() },
        TrainConfig { learning_rate: 0.0, ..base.clone() },
        TrainConfig { target: DistributionSpec::standard_normal(3), ..base.clone() },
        TrainConfig { running_cost: RunningCost::AggregateDemand, ..base.clone() },
        TrainConfig { terminal_columns: Some((1, 1)), ..base.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    assert!(ev_cfg().validate().is_ok());
}

#[test]
fn zero_iterations_return_the_initial_network() {
    let cfg = TrainConfig { n_iters: 0, ..small_cfg() };
    let out = train::<f64>(&cfg).unwrap();
    let init = DriftNetwork::<f64>::init(&cfg.widths(), init_stream(cfg.seed)).unwrap();
    assert_eq!(out.network, init);
    assert!(out.records.is_empty());
}

#[test]
fn objective_decomposition() {
    for cfg in [small_cfg(), ev_cfg(), TrainConfig { congestion: 3.0, running_cost: RunningCost::KernelInteraction, ..small_cfg() }] {
        let out = train::<f64>(&cfg).unwrap();
        for r in &out.records {
            let want = r.energy / r.lambda + cfg.congestion * r.interaction / r.lambda + r.penalty;
            assert!((r.objective - want).abs() <= 1e-12 * want.abs().max(1.0), "{r:?}");
            if cfg.congestion == 0.0 {
                assert_eq!(r.interaction, 0.0);
                assert_eq!(r.objective, r.energy / r.lambda + r.penalty);
            } else {
                assert!(r.interaction != 0.0);
            }
            assert!(r.sup_norm.is_finite());
        }
    }
}

#[test]
fn frozen_draw_objective_gradient() {
    for cfg in [small_cfg(), ev_cfg(), TrainConfig { congestion: 3.0, running_cost: RunningCost::KernelInteraction, ..small_cfg() }, TrainConfig { penalty: PenaltyKind::KernelU, ..small_cfg() }] {
        // a point mass at the origin makes every t = 0 pre-activation exactly zero
        let cfg = if cfg.dynamics == Dynamics::Plain {
            TrainConfig { initial: DistributionSpec::isotropic(vec![0.3, -0.2], 0.7), ..cfg }
        } else {
            cfg
        };
        let (draws, _) = draw_iteration::<f64>(&cfg, 0).unwrap();
        // pick an initialization whose relu inputs stay clear of the kink
        let net = (0..50)
            .map(|s| DriftNetwork::<f64>::init(&cfg.widths(), init_stream(s)).unwrap())
            .find(|net| {
                let mut tape = Tape::new();
                let vars = net.bind(&mut tape, true);
                objective(&mut tape, net, &vars, &draws, &cfg, cfg.lambda).unwrap();
                tape.min_relu_margin().unwrap() > 1e-4
            })
            .expect("a kink-free initialization");
        let f = |tape: &mut Tape<f64>, v: &[Var]| Ok(objective(tape, &net, v, &draws, &cfg, cfg.lambda)?.objective);
        let err = grad_check(f, net.params(), 1e-6).unwrap();
        assert!(err <= 1e-4, "{:?}: {err}", cfg.dynamics);
    }
}

#[test]
fn stream_ledger_is_fresh_every_iteration() {
    let cfg = TrainConfig { n_iters: 5, congestion: 1.0, running_cost: RunningCost::KernelInteraction, ..small_cfg() };
    let out = train::<f64>(&cfg).unwrap();
    assert_eq!(out.streams.len(), 20);
    let mut seen = std::collections::HashSet::new();
    for e in &out.streams {
        assert!(seen.insert(e.stream), "stream reused: {e:?}");
    }
    let plain = train::<f64>(&TrainConfig { n_iters: 2, ..small_cfg() }).unwrap();
    assert!(plain.streams.iter().all(|e| e.purpose != DrawPurpose::CongestionFrequencies));
}

#[test]
fn training_is_deterministic() {
    let strip = |mut rs: Vec<TrainRecord>| {
        for r in &mut rs {
            r.wall_ms = 0.0;
        }
        rs
    };
    let a = train::<f64>(&small_cfg()).unwrap();
    let b = train::<f64>(&small_cfg()).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(strip(a.records), strip(b.records));
    let c = train::<f64>(&TrainConfig { seed: 4, ..small_cfg() }).unwrap();
    assert_ne!(a.network, c.network);
}

#[test]
fn null_penalty_is_centered() {
    // N(0, 0.75 I) diffused with σ = 0.5 over T = 1 is exactly N(0, I)
    let cfg = TrainConfig {
        initial: DistributionSpec::isotropic(vec![0.0, 0.0], 0.75f64.sqrt()),
        target: DistributionSpec::standard_normal(2),
        batch: 40,
        features: 20,
        ..small_cfg()
    };
    let net = DriftNetwork::<f64>::zeros(&cfg.widths()).unwrap();
    let vals: Vec<f64> = (0..300)
        .map(|i| {
            let (draws, _) = draw_iteration::<f64>(&cfg, i).unwrap();
            let mut tape = Tape::new();
            let p = net.bind(&mut tape, false);
            let o = objective(&mut tape, &net, &p, &draws, &cfg, cfg.lambda).unwrap();
            assert_eq!(tape.value(o.energy).item(), 0.0);
            tape.value(o.penalty).item()
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / 300.0;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 299.0).sqrt();
    assert!(mean.abs() <= 3.0 * sd / 300f64.sqrt(), "{mean} ± {sd}");
}

#[test]
fn evaluation_of_untrained_drift() {
    let mut mean = vec![0.0; 10];
    mean[0] = 3.0;
    let cfg = TrainConfig {
        initial: DistributionSpec::dirac_origin(10),
        target: DistributionSpec::isotropic(mean, 1.0),
        terminal_kernel: KernelSpec::gaussian(0.1),
        sigma: 1.0,
        ..small_cfg()
    };
    let zero = ConstantDrift::<f64>::zero(10, 10);
    let a = evaluate(&zero, &cfg, 400, eval_stream(1, 0)).unwrap();
    assert!(a.eval_mmd2 > 0.01, "{a:?}");
    assert_eq!(a, evaluate(&zero, &cfg, 400, eval_stream(1, 0)).unwrap());
    assert_eq!(a.energy, 0.0);
    assert!(a.peak_demand.is_none());
}

#[test]
fn ev_evaluation_reports_demand() {
    let cfg = ev_cfg();
    let drift = ConstantDrift { state_dim: 2, value: vec![0.65] };
    let e = evaluate(&drift, &cfg, 500, eval_stream(0, 0)).unwrap();
    let (peak, mean) = (e.peak_demand.unwrap(), e.mean_demand.unwrap());
    assert!(peak >= mean && mean > 0.5 && peak < 1.5, "{e:?}");
    let want = 0.2 + 0.65 * (0.045f64).exp();
    assert!((e.terminal_mean[0] - want).abs() < 0.03, "{e:?}");
    assert!((e.sup_norm - 0.65).abs() < 1e-15);
}

#[test]
fn divergence_carries_a_checkpoint() {
    let cfg = small_cfg();
    let n = DriftNetwork::<f64>::count_for(&cfg.widths());
    let net = DriftNetwork::from_flat(&cfg.widths(), &vec![1e300; n]).unwrap();
    match train_from(&cfg, net.clone()) {
        Err(Error::Diverged { iteration, checkpoint, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(DriftNetwork::<f64>::from_checkpoint(&checkpoint).unwrap(), net);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}
