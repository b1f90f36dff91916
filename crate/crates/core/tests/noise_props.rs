use std::f64::consts::{FRAC_1_SQRT_2, PI};

use dfsmem::circuits::{bell_state_vector, bell_target_state, default_roles, dephasing_kraus, BellTarget, MEMORY_SITES};
use dfsmem::gatedesign::equilibrium_positions;
use dfsmem::noise::{leakage_kraus_p, storage_evolution, FieldProfile, NoiseModel};
use dfsmem::qstate::{basis_superposition, Level, Register, Role};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logical_infidelity(reg: &Register, t: BellTarget) -> f64 {
    let memory = reg.partial_trace(&MEMORY_SITES).unwrap();
    1.0 - memory.fidelity_pure(&bell_state_vector(t, 4, &[0, 1, 2, 3])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_field_never_touches_logical_states(
        log_b0 in -3.0f64..7.0,
        common_sigma in 0.0f64..200.0,
        echo in any::<bool>(),
        which in 0usize..4,
        seed in any::<u64>(),
    ) {
        let t = BellTarget::ALL[which];
        let positions = equilibrium_positions(6).unwrap();
        let profile = FieldProfile::uniform(10f64.powf(log_b0), positions).unwrap();
        let model = NoiseModel { common_sigma, ..NoiseModel::default() };
        let mut reg = Register::from_pure(&default_roles(), &bell_target_state(t)).unwrap();
        storage_evolution(&mut reg, 5.0, &model, &profile, echo, 20, seed).unwrap();
        prop_assert!(logical_infidelity(&reg, t) < 1e-10);
    }

    #[test]
    fn leakage_and_dephasing_commute(seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.0f64..=1.0, site in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reg = Register::random_qubit_state(&[Role::Memory; 3], &mut rng).unwrap();
        let mut a = reg.clone();
        a.apply_kraus(&dephasing_kraus(p), &[site]).unwrap();
        a.apply_kraus(&leakage_kraus_p(q), &[site]).unwrap();
        let mut b = reg;
        b.apply_kraus(&leakage_kraus_p(q), &[site]).unwrap();
        b.apply_kraus(&dephasing_kraus(p), &[site]).unwrap();
        prop_assert!(a.distance(&b) <= 1e-10);
    }
}

#[test]
fn linear_gradient_spares_second_order_state_but_rotates_first_order_pair() {
    let positions = equilibrium_positions(6).unwrap();
    let grad = 2.3;
    let profile = FieldProfile::new(0.0, grad, 0.0, positions.clone()).unwrap();
    let model = NoiseModel::default();
    for t in [0.1, 0.37, 4.0] {
        let mut second = Register::from_pure(&default_roles(), &bell_target_state(BellTarget::PsiPlus)).unwrap();
        storage_evolution(&mut second, t, &model, &profile, false, 8, 0).unwrap();
        assert!(logical_infidelity(&second, BellTarget::PsiPlus) < 1e-10);

        let mut a = vec![Level::Zero; 6];
        let mut b = vec![Level::Zero; 6];
        a[2] = Level::One;
        b[3] = Level::One;
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let pair = basis_superposition(6, &[(h, &a), (h, &b)]);
        let mut first = Register::from_pure(&default_roles(), &pair).unwrap();
        storage_evolution(&mut first, t, &model, &profile, false, 8, 0).unwrap();
        let dd = grad * (positions[3] - positions[2]);
        let expect = (PI * dd * t).cos().powi(2);
        assert!((first.fidelity_pure(&pair).unwrap() - expect).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn slicing_does_not_change_deterministic_storage() {
    let positions = equilibrium_positions(6).unwrap();
    let profile = FieldProfile::new(0.4, 1.1, 0.3, positions).unwrap();
    let model = NoiseModel { leak_rate: 2e-3, dephasing_rate: 5e-3, ..NoiseModel::default() };
    let run = |steps: usize| {
        let mut r = Register::from_pure(&default_roles(), &bell_target_state(BellTarget::PhiMinus)).unwrap();
        storage_evolution(&mut r, 120.0, &model, &profile, true, steps, 5).unwrap();
        r
    };
    let coarse = run(2);
    assert!(coarse.distance(&run(200)) < 1e-10);
}
