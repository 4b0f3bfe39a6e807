use nalgebra::DMatrix;
use pftvp_core::datagen::{corrupt, generate_truth, ObservationSet};
use pftvp_core::ensemble::GaussianNoiseSpec;
use pftvp_core::filters::{
    drift_sigmas, run_filter, run_filter_detailed, DriftSharing, DriftSpec, FactorRange,
    FilterConfig, FilterKind, HistoryPolicy, PriorSpec, ShrinkSpace,
};
use pftvp_core::models::benchmark;
use pftvp_core::ode::SolverSpec;

fn logistic_config(kind: FilterKind, drift: DriftSpec, n: usize, seed: u64) -> FilterConfig {
    FilterConfig {
        kind,
        noise: GaussianNoiseSpec {
            sigma_c: 0.5,
            sigma_d: 10.0,
        },
        drift,
        solver: SolverSpec::bdf2(0.25),
        obs_matrix: DMatrix::identity(1, 1),
        priors: PriorSpec::default(),
        n_particles: n,
        seed,
        history: HistoryPolicy::Carry,
        verify_predictor_reuse: false,
    }
}

fn plus(min: f64, max: f64) -> DriftSpec {
    DriftSpec::Estimated {
        sigma_min: min,
        sigma_max: max,
        delta: 0.96,
        sharing: DriftSharing::Shared,
        space: ShrinkSpace::Logit,
    }
}

fn logistic_data(t_end: f64, seed: u64) -> ObservationSet {
    let m = benchmark("logistic/sinusoid").unwrap();
    let truth = generate_truth(&m, t_end, 0.5).unwrap();
    corrupt(&truth, 0.2, &DMatrix::identity(1, 1), seed).unwrap()
}

#[test]
fn full_logistic_run_is_well_formed() {
    let m = benchmark("logistic/sinusoid").unwrap();
    let data = logistic_data(150.0, 1);
    let cfg = logistic_config(FilterKind::PfTvpPlus, plus(0.05, 10.0), 1000, 3);
    let start = std::time::Instant::now();
    let out = run_filter_detailed(&m, &data, &cfg).unwrap();
    eprintln!("300 steps x 1000 particles: {:?}", start.elapsed());
    assert_eq!(out.records.len(), 300);
    for r in &out.records {
        assert!(r.retention >= 1.0 / 1000.0 && r.retention <= 1.0);
        let b = &r.sigma_bands[0];
        assert!(b.q025 > 0.05 && b.q975 < 10.0);
        assert!(r.state_bands[0].q025 <= r.state_bands[0].q975);
    }
    assert!((out.final_ensemble.weights.sum() - 1.0).abs() <= 1e-12);
    assert!(drift_sigmas(&out.final_ensemble, &cfg)
        .iter()
        .all(|&s| s > 0.05 && s < 10.0));
}

#[test]
fn same_seed_is_bit_identical() {
    let m = benchmark("oscillator/k-and-q").unwrap();
    let truth = generate_truth(&m, 10.0, 0.5).unwrap();
    let data = corrupt(&truth, 0.2, &DMatrix::identity(2, 2), 5).unwrap();
    let mut cfg = logistic_config(FilterKind::PfTvpPlus, plus(0.05, 5.0), 200, 11);
    cfg.obs_matrix = DMatrix::identity(2, 2);
    let a = run_filter(&m, &data, &cfg).unwrap();
    let b = run_filter(&m, &data, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 12;
    assert_ne!(a, run_filter(&m, &data, &cfg).unwrap());
}

#[test]
fn empty_observations_give_no_records() {
    let m = benchmark("logistic/sinusoid").unwrap();
    let data = ObservationSet::empty(DMatrix::identity(1, 1), 1);
    let cfg = logistic_config(FilterKind::PfTvp, DriftSpec::Fixed { sigma_e: 1.0 }, 10, 0);
    assert!(run_filter(&m, &data, &cfg).unwrap().is_empty());
}

#[test]
fn single_particle_bands_collapse() {
    let m = benchmark("logistic/sinusoid").unwrap();
    let data = logistic_data(5.0, 2);
    let cfg = logistic_config(FilterKind::PfTvp, DriftSpec::Fixed { sigma_e: 1.0 }, 1, 0);
    for r in run_filter(&m, &data, &cfg).unwrap() {
        let b = r.theta_bands[0];
        assert_eq!((b.q025, b.q975), (r.theta_mean[0], r.theta_mean[0]));
        assert_eq!(r.retention, 1.0);
    }
}

#[test]
fn state_filter_keeps_parameters_from_prior() {
    let m = benchmark("logistic/sinusoid").unwrap();
    let data = logistic_data(10.0, 3);
    let mut cfg = logistic_config(FilterKind::PfState, DriftSpec::Fixed { sigma_e: 0.0 }, 50, 0);
    cfg.priors = PriorSpec::uniform(FactorRange(1.0, 1.0));
    for r in run_filter(&m, &data, &cfg).unwrap() {
        assert_eq!((r.theta_bands[0].q025, r.theta_bands[0].q975), (30.0, 30.0));
        assert!((r.theta_mean[0] - 30.0).abs() < 1e-12);
    }
}

#[test]
fn narrow_drift_bounds_track_fixed_drift() {
    // With nearly equal bounds the estimated drift is constant and the run
    // shares every random draw with the fixed-drift run.
    let m = benchmark("logistic/sinusoid").unwrap();
    let data = logistic_data(20.0, 4);
    let sigma = 1.0;
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let fixed = logistic_config(FilterKind::PfTvp, DriftSpec::Fixed { sigma_e: sigma }, 200, seed);
        let mut est = fixed.clone();
        est.kind = FilterKind::PfTvpPlus;
        est.drift = plus(sigma - 5e-7, sigma + 5e-7);
        let a = run_filter(&m, &data, &fixed).unwrap();
        let b = run_filter(&m, &data, &est).unwrap();
        let (ra, rb) = (a.last().unwrap(), b.last().unwrap());
        diffs.push(ra.theta_mean[0] - rb.theta_mean[0]);
        assert!((rb.sigma_mean[0] - sigma).abs() < 1e-6);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 2.0 * sd / n.sqrt() + 1e-6, "mean diff {mean}, sd {sd}");
}
