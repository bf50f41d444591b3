use proptest::prelude::*;
use spinglass_core::exact::{self, EnergyTable, Enumerator};
use spinglass_core::rng::derive_seed;
use spinglass_core::{Beta, DisorderSample, Error, ModelSpec};

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

/// Direct sum over all configurations with a hand-written double sum,
/// independent of the Gray-code walk.
fn naive_free_energy(d: &DisorderSample, b: f64) -> (f64, f64) {
    let n = d.n;
    let mut z = 0.0;
    let mut zu = 0.0;
    for bits in 0..(1u32 << n) {
        let s: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let mut h = 0.0;
        for i in 0..n {
            for j in 0..n {
                h += d.g(i, j) * s[i] * s[j];
            }
        }
        h /= (n as f64).sqrt();
        let w = (b * h).exp() / (1u64 << n) as f64;
        z += w;
        zu += w * h / n as f64;
    }
    (z.ln() / n as f64, zu / z)
}

#[test]
fn field_model_matches_closed_form() {
    for n in [1, 5, 8, 16, 20] {
        for h in [-1.5, 0.3, 1.0] {
            let model = ModelSpec::constant_field(n, h).unwrap();
            for b in [0.0, 0.25, 0.5, 1.0, 2.0] {
                let s = exact::enumerate(&model, beta(b)).unwrap();
                assert!((s.free_energy - (b * h).cosh().ln()).abs() < 1e-12, "n={n} h={h} b={b}");
                assert!((s.energy_density_mean - h * (b * h).tanh()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sk_matches_naive_sum() {
    for n in [2, 3, 5, 9] {
        for k in 0..5 {
            let d = DisorderSample::sk(n, derive_seed(3, k)).unwrap();
            let model = ModelSpec::sk(d.clone());
            for b in [0.3, 1.0, 1.7] {
                let s = exact::enumerate(&model, beta(b)).unwrap();
                let (f, u) = naive_free_energy(&d, b);
                assert!((s.free_energy - f).abs() < 1e-12, "n={n} b={b}");
                assert!((s.energy_density_mean - u).abs() < 1e-11);
            }
        }
    }
}

#[test]
fn free_energy_vanishes_at_infinite_temperature() {
    let model = ModelSpec::sk_from_seed(12, 41).unwrap();
    assert_eq!(exact::enumerate(&model, beta(0.0)).unwrap().free_energy, 0.0);
}

#[test]
fn enumeration_limit_is_enforced() {
    let model = ModelSpec::sk_from_seed(10, 1).unwrap();
    let err = Enumerator::with_limit(8).enumerate(&model, beta(1.0)).unwrap_err();
    assert!(matches!(err, Error::ResourceLimit { n: 10, limit: 8 }));
}

#[test]
fn histogram_mass_is_one() {
    let model = ModelSpec::sk_from_seed(10, 9).unwrap();
    let s = exact::enumerate(&model, beta(1.2)).unwrap();
    let rows = s.histogram.rows();
    let gibbs: f64 = rows.iter().map(|r| r.2).sum();
    assert!((gibbs - 1.0).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[0].1 == w[1].0));
    assert_eq!(rows[0].0, s.min_energy_density);
    assert_eq!(rows.last().unwrap().1, s.max_energy_density);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn free_energy_is_convex_and_bounded(seed in any::<u64>(), n in 2usize..=10, b in 0.05f64..2.5) {
        let t = EnergyTable::build(&ModelSpec::sk_from_seed(n, seed).unwrap()).unwrap();
        let h: f64 = 0.02;
        let (fm, f0, fp) = (t.free_energy(b - h.min(b)), t.free_energy(b), t.free_energy(b + h));
        let hl = h.min(b);
        // convexity along the three-point stencil with possibly unequal steps
        prop_assert!(f0 <= (h * fm + hl * fp) / (h + hl) + 1e-12);
        // Jensen below, the maximum above
        let prior_mean = t.energies().iter().sum::<f64>() / t.energies().len() as f64 / n as f64;
        prop_assert!(f0 >= b * prior_mean - 1e-12);
        prop_assert!(f0 <= b * t.max_energy_density() + 1e-12);
    }

    #[test]
    fn derivative_is_gibbs_energy(seed in any::<u64>(), n in 2usize..=9, b in 0.1f64..2.0) {
        let t = EnergyTable::build(&ModelSpec::sk_from_seed(n, seed).unwrap()).unwrap();
        let h = 1e-4;
        let centred = (t.free_energy(b + h) - t.free_energy(b - h)) / (2.0 * h);
        prop_assert!((centred - t.gibbs_mean(b, |u| u)).abs() < 1e-6);
    }

    #[test]
    fn gibbs_probabilities_normalised(seed in any::<u64>(), n in 1usize..=10, b in 0.0f64..3.0) {
        let t = EnergyTable::build(&ModelSpec::sk_from_seed(n, seed).unwrap()).unwrap();
        let p = t.gibbs_probabilities(b);
        prop_assert_eq!(p.len(), 1 << n);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn sk_energy_is_even(seed in any::<u64>(), n in 1usize..=12) {
        let t = EnergyTable::build(&ModelSpec::sk_from_seed(n, seed).unwrap()).unwrap();
        let e = t.energies();
        let mask = (1usize << n) - 1;
        for (bits, &x) in e.iter().enumerate() {
            prop_assert!((x - e[bits ^ mask]).abs() < 1e-10);
        }
    }
}
