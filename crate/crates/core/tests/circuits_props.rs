use std::f64::consts::PI;

use dfsmem::circuits::{
    build_prep_circuit, default_register, gate_unitary, run_circuit, Axis, BellTarget, Family, GateOp, MEMORY_SITES,
};
use dfsmem::estimators::{analytic_o1, analytic_o2, analytic_o3};
use dfsmem::qstate::{QubitType, Register, Role};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relabels sites: site `s` of `reg` becomes site `perm[s]`.
fn permute(reg: &Register, perm: &[usize]) -> Register {
    let n = reg.n_sites();
    let d = reg.dim();
    let map = |i: usize| -> usize {
        let digits = reg.digits(i);
        (0..n).map(|s| digits[s] * 3usize.pow(perm[s] as u32)).sum()
    };
    let m = reg.to_matrix();
    let mut out = DMatrix::<C64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out[(map(i), map(j))] = m[(i, j)];
        }
    }
    Register::from_density(reg.roles(), &out).unwrap()
}

#[test]
fn prep_output_is_reproducible_after_reset() {
    for t in BellTarget::ALL {
        let mut a = default_register();
        run_circuit(&mut a, &build_prep_circuit(t), None).unwrap();
        let mut b = default_register();
        run_circuit(&mut b, &build_prep_circuit(t), None).unwrap();
        assert!(a.distance(&b) < 1e-12);
    }
}

#[test]
fn psi_plus_output_has_ideal_terms() {
    let mut reg = default_register();
    run_circuit(&mut reg, &build_prep_circuit(BellTarget::PsiPlus), None).unwrap();
    assert!((analytic_o1(&reg, Family::Psi, MEMORY_SITES).unwrap() - 1.0).abs() < 1e-9);
    assert!((analytic_o2(&reg, MEMORY_SITES).unwrap() - 1.0).abs() < 1e-9);
    assert!((analytic_o3(&reg, Family::Psi, MEMORY_SITES).unwrap() + 1.0).abs() < 1e-9);
}

#[test]
fn moved_rz_switches_family() {
    let mut psi = default_register();
    run_circuit(&mut psi, &build_prep_circuit(BellTarget::PsiPlus), None).unwrap();
    let mut phi = default_register();
    run_circuit(&mut phi, &build_prep_circuit(BellTarget::PhiPlus), None).unwrap();
    assert!((analytic_o1(&phi, Family::Phi, MEMORY_SITES).unwrap() - 1.0).abs() < 1e-9);
    assert!(analytic_o1(&psi, Family::Phi, MEMORY_SITES).unwrap().abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn global_rotations_commute_with_site_permutations(
        seed in any::<u64>(),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        angle in -PI..PI,
        phase in -PI..PI,
        y_axis in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reg = Register::random_qubit_state(&[Role::Memory; 4], &mut rng).unwrap();
        let axis = if y_axis { Axis::Y } else { Axis::X };
        let op = GateOp::GlobalRot { axis, angle, phase, target: QubitType::S };
        let u = gate_unitary(&op, reg.labels()).unwrap();
        let mut rotated_then_permuted = reg.clone();
        rotated_then_permuted.apply_unitary(&u, &[0, 1, 2, 3]).unwrap();
        let rotated_then_permuted = permute(&rotated_then_permuted, &perm);
        let mut permuted_then_rotated = permute(&reg, &perm);
        permuted_then_rotated.apply_unitary(&u, &[0, 1, 2, 3]).unwrap();
        prop_assert!(rotated_then_permuted.distance(&permuted_then_rotated) < 1e-12);
    }
}
