use dfsmem::circuits::{bell_state_vector, build_prep_circuit, default_register, run_circuit, BellTarget, Component};
use dfsmem::estimators::{
    analytic_o1, analytic_o2, analytic_o3, estimate_mc, ghz_fidelity, phase_grid_average, FidelityMode, McOptions,
    ShotStats,
};
use dfsmem::experiments::ExperimentConfig;
use dfsmem::qstate::{Register, Role};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LOCAL: [usize; 4] = [0, 1, 2, 3];

fn local_opts() -> McOptions {
    McOptions { memory: LOCAL, ..McOptions::default() }
}

#[test]
fn decomposition_holds_for_every_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let reg = Register::random_qubit_state(&[Role::Memory; 4], &mut rng).unwrap();
        for t in BellTarget::ALL {
            let est = ghz_fidelity(&reg, t, &FidelityMode::Analytic, &local_opts()).unwrap();
            let exact = reg.fidelity_pure(&bell_state_vector(t, 4, &LOCAL)).unwrap();
            assert!((est.fidelity.value - exact).abs() <= 1e-9, "{t:?}");
        }
    }
}

#[test]
fn analytic_coherences_match_phase_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let reg = Register::random_qubit_state(&[Role::Memory; 4], &mut rng).unwrap();
        for t in [BellTarget::PsiPlus, BellTarget::PhiPlus] {
            let f = t.family();
            let o2 = phase_grid_average(&reg, Component::O2, f, LOCAL, 64).unwrap();
            let o3 = phase_grid_average(&reg, Component::O3, f, LOCAL, 64).unwrap();
            assert!((o2 - analytic_o2(&reg, LOCAL).unwrap()).abs() <= 1e-9);
            assert!((o3 - analytic_o3(&reg, f, LOCAL).unwrap()).abs() <= 1e-9);
        }
    }
}

/// Grand means over 100 seeds at 200 shots. The calibrated noisy
/// preparation must land within 1e-2 of the exact terms; a random mixed
/// state, whose shots have order-one variance, within 4 standard errors.
#[test]
fn shot_estimator_is_unbiased() {
    let noise = ExperimentConfig::default().gate_noise().unwrap();
    let mut prepared = default_register();
    run_circuit(&mut prepared, &build_prep_circuit(BellTarget::PsiPlus), Some(&noise)).unwrap();
    let prepared = prepared.partial_trace(&[1, 2, 3, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let random = Register::random_qubit_state(&[Role::Memory; 4], &mut rng).unwrap();

    for (reg, fixed_tol) in [(prepared, true), (random, false)] {
        let fam = BellTarget::PsiPlus.family();
        let analytic = [
            analytic_o1(&reg, fam, LOCAL).unwrap(),
            analytic_o2(&reg, LOCAL).unwrap(),
            analytic_o3(&reg, fam, LOCAL).unwrap(),
        ];
        let mut totals = [ShotStats::default(), ShotStats::default(), ShotStats::default()];
        for seed in 0..100u64 {
            for (k, which) in [Component::O1, Component::O2, Component::O3].into_iter().enumerate() {
                let s = estimate_mc(&reg, which, fam, 200, seed * 3 + k as u64, &local_opts()).unwrap();
                totals[k] = totals[k].merge(s);
            }
        }
        let est: Vec<_> = totals.iter().map(|t| t.estimate().unwrap()).collect();
        for k in 0..3 {
            let tol = if fixed_tol { 1e-2 } else { 4.0 * est[k].stderr };
            assert!((est[k].value - analytic[k]).abs() <= tol, "term {k}: {:?} vs {}", est[k], analytic[k]);
        }
        if fixed_tol {
            let mean_f = (2.0 * est[0].value + est[1].value - est[2].value) / 4.0;
            let exact_f = reg.fidelity_pure(&bell_state_vector(BellTarget::PsiPlus, 4, &LOCAL)).unwrap();
            assert!((mean_f - exact_f).abs() <= 1e-2, "{mean_f} vs {exact_f}");
        }
    }
}
