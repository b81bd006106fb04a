use proptest::prelude::*;
use seesim::engine::{exp_euler_step, NoiseStream};
use seesim::estimators::lp_from_norms;
use seesim::models::transform::TrigTransform;
use seesim::models::{DiffusionSpec, DriftSpec, InitialSpec, ModelFile, ModelSpec, ProfileSpec};
use seesim::special::gen_exp;
use seesim::spectral::{
    hr_norm, make_periodic_laplacian, periodic_mode_order, semigroup_apply, SpectralField,
};

fn field(n: usize, c: &[f64]) -> (seesim::spectral::DiagonalOperator, SpectralField) {
    let op = make_periodic_laplacian(n, 1.0, 1.0).unwrap();
    let v = SpectralField::from_coeffs(&op, c[..op.len()].to_vec(), 0.0).unwrap();
    (op, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_mean_is_monotone_in_p(norms in prop::collection::vec(0.0f64..10.0, 1..50), p in 2.0f64..6.0, dp in 0.0f64..3.0) {
        let a = lp_from_norms(&norms, p).unwrap().value;
        let b = lp_from_norms(&norms, p + dp).unwrap().value;
        prop_assert!(a <= b * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn transform_round_trip(n in 0usize..20, c in prop::collection::vec(-1.0f64..1.0, 41)) {
        let modes = periodic_mode_order(n);
        let tr = TrigTransform::new(&modes);
        let mut s = tr.scratch();
        let c = &c[..modes.len()];
        tr.synthesize(c, &mut s);
        let mut back = vec![0.0; modes.len()];
        tr.analyze(&mut s, &mut back);
        for (a, b) in c.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn noise_is_a_function_of_its_address(seed: u64, path in 0u64..1000, slot in 0u64..64, step in 0u64..5000) {
        let a = NoiseStream::new(seed, path).standard_normal(slot, step);
        let mut s = NoiseStream::new(seed, path);
        let _ = s.standard_normal(slot + 1, step + 3);
        prop_assert_eq!(a.to_bits(), s.standard_normal(slot, step).to_bits());
        let mut out = [0.0];
        s.fill(step, &[slot], 1.0, &mut out);
        prop_assert_eq!(a.to_bits(), out[0].to_bits());
    }

    #[test]
    fn semigroup_composes(n in 1usize..10, c in prop::collection::vec(-1.0f64..1.0, 21), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let (op, v) = field(n, &c);
        let two = semigroup_apply(&op, s, &semigroup_apply(&op, t, &v).unwrap()).unwrap();
        let one = semigroup_apply(&op, s + t, &v).unwrap();
        for (a, b) in one.coeffs().iter().zip(two.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn norms_increase_with_index(n in 1usize..10, c in prop::collection::vec(-1.0f64..1.0, 21), r in -1.0f64..1.0, dr in 0.0f64..1.0) {
        // η = 1 makes every weight η + λ_b at least 1
        let (op, v) = field(n, &c);
        prop_assert!(hr_norm(&v, &op, r).unwrap() <= hr_norm(&v, &op, r + dr).unwrap() * (1.0 + 1e-14));
    }

    #[test]
    fn gen_exp_is_increasing(a in -1.0f64..0.9, b in 0.0f64..0.9, x in 0.0f64..5.0, dx in 0.0f64..5.0) {
        prop_assert!(gen_exp(a, b, x).unwrap() <= gen_exp(a, b, x + dx).unwrap());
    }

    #[test]
    fn deterministic_linear_step_is_the_semigroup(n in 1usize..8, c in prop::collection::vec(-1.0f64..1.0, 17), dt in 1e-4f64..0.5) {
        let op = make_periodic_laplacian(n, 1.0, 1.0).unwrap();
        let m = ModelSpec::new("heat", op.clone(), DriftSpec::Zero, DiffusionSpec::Zero,
            ProfileSpec::default(), InitialSpec::Explicit { coeffs: c[..op.len()].to_vec() }, None).unwrap();
        let x = m.initial().clone();
        let stepped = exp_euler_step(&m, 0.0, dt, &x, &[]).unwrap();
        let exact = semigroup_apply(&op, dt, &x).unwrap();
        prop_assert_eq!(stepped.coeffs(), exact.coeffs());
    }

    #[test]
    fn model_files_round_trip(n in 1usize..8, gamma in -1.0f64..1.0, scale in 0.1f64..3.0) {
        let op = make_periodic_laplacian(n, 2.0, 0.5).unwrap();
        let m = ModelSpec::new("anderson", op, DriftSpec::Zero, DiffusionSpec::Anderson,
            ProfileSpec { beta: Some(0.3), ..Default::default() },
            InitialSpec::Rough { gamma, scale }, None).unwrap();
        let back = ModelSpec::from_file(&ModelFile::from_json(&m.to_file().to_json()).unwrap()).unwrap();
        prop_assert_eq!(back.initial().coeffs(), m.initial().coeffs());
        prop_assert_eq!(back.profile(), m.profile());
        prop_assert_eq!(back.delta(), m.delta());
    }
}
