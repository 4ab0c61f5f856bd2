use emshap::evaluation::{toy_bound_experiment, ToyConfig};
use emshap::masking::MaskSchedule;
use emshap::trainer::{train, TrainConfig};
use emshap::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Correlated 2-D Gaussian, corr 0.9.
fn gaussian_pairs(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            vec![a, 0.9 * a + (1.0 - 0.81f64).sqrt() * b]
        })
        .collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 32,
        learning_rate: 5e-3,
        k_tilde: 16,
        context_dim: 4,
        energy_hidden: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_falls_on_correlated_gaussian() {
    let data = gaussian_pairs(800, 1);
    let cfg = TrainConfig {
        zeta_min: 0.5,
        zeta_max: 0.5,
        epochs: 10,
        ..small_config()
    };
    let report = train(&data, &cfg).unwrap();
    let losses = report.losses();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
}

#[test]
fn same_seed_same_model() {
    let data = gaussian_pairs(200, 2);
    let a = train(&data, &small_config()).unwrap();
    let b = train(&data, &small_config()).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    let c = train(&data, &TrainConfig { seed: 12, ..small_config() }).unwrap();
    assert_ne!(a.losses(), c.losses());
}

#[test]
fn zeta_follows_schedule() {
    let data = gaussian_pairs(200, 3);
    let cfg = TrainConfig {
        zeta_min: 0.1,
        zeta_max: 0.7,
        ..small_config()
    };
    let report = train(&data, &cfg).unwrap();
    let mut s = MaskSchedule::spanning(0.1, 0.7, cfg.epochs).unwrap();
    for z in report.zetas() {
        assert_eq!(z, s.zeta());
        s = s.advance();
    }
    assert!((report.zetas().last().unwrap() - 0.7).abs() < 1e-12);

    let fixed = TrainConfig {
        delta_override: Some(0.25),
        ..cfg
    };
    let zetas = train(&data, &fixed).unwrap().zetas();
    assert_eq!(&zetas[..3], &[0.1, 0.35, 0.6]);
    assert!(zetas[3..].iter().all(|z| *z == 0.7));
}

#[test]
fn invalid_configs_rejected_before_training() {
    let data = gaussian_pairs(100, 4);
    for cfg in [
        TrainConfig { zeta_min: 0.9, zeta_max: 0.2, ..small_config() },
        TrainConfig { k_tilde: 0, ..small_config() },
        TrainConfig { learning_rate: -1.0, ..small_config() },
        TrainConfig { learning_rate: 10.0, ..small_config() },
    ] {
        assert!(matches!(train(&data, &cfg), Err(Error::Config(_))), "{cfg:?}");
    }
    assert!(matches!(train(&data[..10], &small_config()), Err(Error::Data(_))));
}

#[test]
fn config_json_rejects_unknown_keys() {
    let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "k_tilde": 8}"#).unwrap();
    assert_eq!((ok.epochs, ok.k_tilde, ok.batch_size), (3, 8, 64));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}

#[test]
fn toy_experiment_reports_every_cell() {
    let cfg = ToyConfig {
        n_points: 600,
        k_values: vec![10, 100],
        k_ref: 2000,
        test_points: 2,
        t_grid: 1000,
        noise_draws: 2,
        train: TrainConfig {
            epochs: 2,
            batch_size: 32,
            k_tilde: 8,
            context_dim: 4,
            energy_hidden: 4,
            ..TrainConfig::default()
        },
        ..ToyConfig::default()
    };
    let (report, train) = toy_bound_experiment(&cfg).unwrap();
    // 7 coalitions with at least one masked feature, per K
    assert_eq!(report.rows.len(), 14);
    assert_eq!(report.summary.len(), 2);
    assert_eq!(train.epochs.len(), 2);
    for r in &report.rows {
        let expected = std::f64::consts::PI.sqrt() / (2.0 * r.k as f64).sqrt() + r.approximation_error;
        assert!((r.bound - expected).abs() < 1e-12);
        assert!(r.statistical_error >= 0.0 && r.approximation_error >= 0.0);
    }
    assert!(report.slope.is_finite());
    assert_eq!(report.to_csv().lines().count(), 15);
}

#[test]
fn learned_conditional_tracks_analytic_gaussian() {
    use emshap::energy::{conditional_log_density, estimate_partition};
    use emshap::masking::Coalition;

    let data = gaussian_pairs(3000, 5);
    let cfg = TrainConfig {
        epochs: 30,
        zeta_min: 0.5,
        zeta_max: 0.5,
        ..small_config()
    };
    let em = train(&data, &cfg).unwrap().model;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // x2 | x1 ~ N(0.9 x1, 0.19)
    let c = Coalition::from_observed_bits(2, 0b01);
    let mut worst: f64 = 0.0;
    for x1 in [-1.0, 0.0, 0.8] {
        let x = [x1, 0.0];
        let cond = em.proposal.condition(&x, &c).unwrap();
        let draws: Vec<_> = (0..20_000).map(|_| cond.sample(&mut rng).unwrap()).collect();
        let est = estimate_partition(&em.energy, &draws, &x, &c, cond.context()).unwrap();
        for dz in [-0.5, 0.0, 0.5] {
            let v = 0.9 * x1 + dz * 0.19f64.sqrt();
            let learned = conditional_log_density(&em.energy, &[v], &x, &c, &est).unwrap();
            let truth = -0.5 * (2.0 * std::f64::consts::PI * 0.19).ln() - 0.5 * dz * dz;
            worst = worst.max((learned - truth).abs());
        }
    }
    assert!(worst < 0.3, "{worst}");
}
