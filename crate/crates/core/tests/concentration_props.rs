use proptest::prelude::*;
use spinglass_core::concentration::{self, ERefPolicy, DEFAULT_WINDOW};
use spinglass_core::exact::EnergyTable;
use spinglass_core::rng::derive_seed;
use spinglass_core::{Beta, Error, ModelSpec};

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

fn table(n: usize, seed: u64) -> EnergyTable {
    EnergyTable::build(&ModelSpec::sk_from_seed(n, seed).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The exponential tail bound is a Chernoff bound and holds for any reference.
    #[test]
    fn tail_bound_holds_for_any_reference(
        seed in any::<u64>(),
        n in 3usize..=10,
        b in 0.1f64..2.0,
        shift in -0.3f64..0.3,
        eps in 0.01f64..0.6,
        lam in 0.01f64..0.5,
    ) {
        let t = table(n, seed);
        let e = t.gibbs_mean(b, |u| u) + shift;
        let audits = concentration::tail_audit_from_table(&t, beta(b), &[eps], &[lam], e, DEFAULT_WINDOW).unwrap();
        prop_assert_eq!(audits.len(), 1);
        let a = &audits[0];
        prop_assert!(a.pass, "{:?}", a);
        prop_assert!(a.gibbs_plus.max(a.gibbs_minus) <= a.exp_bound + 1e-12);
        prop_assert!(a.b_plus.is_none_or(|l| l <= a.rhs_plus + 1e-9));
        prop_assert!(a.b_minus.is_none_or(|l| l <= a.rhs_minus + 1e-9));
    }

    #[test]
    fn moment_bound_holds(seed in any::<u64>(), n in 3usize..=10, b in 0.1f64..2.0, lam0 in 0.02f64..0.5) {
        let t = table(n, seed);
        let e = t.gibbs_mean(b, |u| u);
        let a = concentration::moment_audit_from_table(&t, beta(b), lam0, e, DEFAULT_WINDOW).unwrap();
        prop_assert!(a.pass, "{:?}", a);
    }

    #[test]
    fn concentration_set_items_hold(
        seed in any::<u64>(),
        n in 4usize..=10,
        b in 0.2f64..1.8,
        c in 0.05f64..0.45,
        cprime in 0.05f64..0.45,
    ) {
        let t = table(n, seed);
        let r = concentration::theorem1_from_table(&t, beta(b), c, cprime, ERefPolicy::PlugIn).unwrap();
        prop_assert!(r.pass(), "{:?}", r);
        prop_assert!(r.gibbs_mass_outside >= 0.0 && r.gibbs_mass_outside <= 1.0);
        prop_assert!(r.epsilon_n > 0.0);
        prop_assert_eq!(r.e_ref, t.gibbs_mean(b, |u| u));
    }

    #[test]
    fn sandwich_holds_for_admissible_inputs(seed in any::<u64>(), n in 4usize..=10, b in 0.2f64..1.8, gap in 0.0f64..0.4) {
        let t = table(n, seed);
        let bp = (b - gap).max(0.0);
        let (e, ep) = (t.gibbs_mean(b, |u| u), t.gibbs_mean(bp, |u| u));
        let eps = (2.0 * (e - ep).abs()).max(0.05);
        let r = concentration::sandwich_from_table(&t, beta(b), beta(bp), eps, e, ep).unwrap();
        prop_assert!(r.pass(), "{:?}", r);
    }
}

#[test]
fn sandwich_rejects_inverted_temperatures() {
    let t = table(6, 1);
    let err = concentration::sandwich_from_table(&t, beta(0.5), beta(1.0), 0.5, 0.0, 0.0).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}

#[test]
fn conditional_equivalence_within_bound() {
    for k in 0..20 {
        let model = ModelSpec::sk_from_seed(10, derive_seed(5, k)).unwrap();
        let r = concentration::conditional_equivalence(&model, beta(1.0), |s| s.is_up(0) || s.is_up(1), 0.3, 0.3)
            .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.value.abs() <= r.two_sided_bound + 1e-12);
    }
}

#[test]
fn sk_l1_shrinks_with_size() {
    let mut prev = f64::INFINITY;
    for n in [6, 8, 10] {
        let models: Vec<ModelSpec> =
            (0..100).map(|k| ModelSpec::sk_from_seed(n, derive_seed(11, k)).unwrap()).collect();
        let r = concentration::gibbs_l1_concentration(&models, beta(1.0), ERefPolicy::PlugIn).unwrap();
        assert!(r.disorder_mean < prev + 2.0 * r.stderr * 2f64.sqrt(), "N={n}");
        assert!(r.centered_mean >= r.disorder_mean - 1e-12 || r.centered_mean > 0.0);
        prev = r.disorder_mean;
    }
}
