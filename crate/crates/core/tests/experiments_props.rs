use dfsmem::experiments::pipelines::{read_binomial_csv, write_storage_csv};
use dfsmem::experiments::{
    fit_sinusoid_decay, mle_fit_exponential, run_parity_scan, run_storage_scan, BinomialPoint, ExperimentConfig,
};
use dfsmem::noise::{ou_coherence, ou_sigma_for_decay};

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

#[test]
fn fit_recovers_exact_probabilities() {
    let (a, tau) = (0.906, 4900.0);
    let n = 1_000_000_000_000u64;
    let data: Vec<BinomialPoint> = [2.0, 30.0, 60.0, 120.0, 240.0, 960.0, 4000.0]
        .iter()
        .map(|&t| {
            let p = (1.0 + a * f64::exp(-t / tau)) / 2.0;
            BinomialPoint { t, successes: (p * n as f64).round() as u64, trials: n }
        })
        .collect();
    let f = mle_fit_exponential(&data).unwrap();
    assert!((f.a - a).abs() / a <= 1e-6, "{}", f.a);
    assert!((f.tau - tau).abs() / tau <= 1e-6, "{}", f.tau);
    assert!(f.ci68.0 <= f.tau && f.tau <= f.ci68.1);
}

#[test]
fn storage_scan_is_reproducible_and_round_trips() {
    let c = cfg("[noise]\nleak_rate = 1e-3\ndephasing_rate = 2e-4\n[run]\nseed = 3\ntimes = [1.0, 300.0]\nshots = [60, 40]\n");
    let a = run_storage_scan(&c).unwrap();
    let b = run_storage_scan(&c).unwrap();
    assert_eq!(a, b);
    let mut buf = Vec::new();
    write_storage_csv(&mut buf, &a).unwrap();
    let back = read_binomial_csv(buf.as_slice()).unwrap();
    let direct: Vec<BinomialPoint> = a.iter().map(|r| r.binomial()).collect();
    assert_eq!(back, direct);
    for r in &a {
        assert_eq!(r.raw - r.discarded, r.kept);
        assert_eq!((r.survival * r.raw as f64).round() as usize, r.kept);
    }
}

#[test]
fn second_order_parity_is_flat_under_uniform_noise() {
    let c = cfg("[noise]\nb0 = 250.0\ncommon_sigma = 40.0\ngrad = 0.0\ncurv = 0.0\n[run]\ndfs_order = 2\ntrajectories = 8\n");
    let scan = run_parity_scan(&c).unwrap();
    let p0 = scan.rows[0].parity;
    assert!(scan.rows.iter().all(|r| (r.parity - p0).abs() <= 1e-9));
}

/// The amplitude decay fitted to an OU-dephased first-order trace matches
/// the `1/e` time of the ensemble coherence.
#[test]
fn dephased_trace_decay_matches_ensemble_oracle() {
    let (tau_d, tau_c) = (27.6, 0.1);
    let sigma = ou_sigma_for_decay(tau_d, tau_c);
    let c = cfg(&format!("[noise]\nou_sigma = {sigma}\nou_tau = {tau_c}\n[run]\ndfs_order = 1\n"));
    let scan = run_parity_scan(&c).unwrap();
    let fit = scan.fit.expect("fit");

    let (mut lo, mut hi) = (0.0, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ou_coherence(sigma, tau_c, mid) > (-1.0f64).exp() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    assert!((fit.decay_time - oracle).abs() / oracle <= 0.2, "{} vs {oracle}", fit.decay_time);
}

#[test]
fn calibrated_second_order_trace_shows_no_decay() {
    let sigma = ou_sigma_for_decay(27.6, 0.1);
    let c = cfg(&format!("[noise]\nou_sigma = {sigma}\n[run]\ndfs_order = 2\nwindows = [[0.0, 12.0]]\ndt = 0.05\n"));
    let scan = run_parity_scan(&c).unwrap();
    let t: Vec<f64> = scan.rows.iter().map(|r| r.time).collect();
    let y: Vec<f64> = scan.rows.iter().map(|r| r.parity).collect();
    let fit = fit_sinusoid_decay(&t, &y).unwrap();
    assert!(fit.decay_time_lower > 12.0, "{}", fit.decay_time_lower);
    assert!((fit.period - 9.9).abs() / 9.9 <= 0.02);
}
