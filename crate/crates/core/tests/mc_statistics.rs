use spinglass_core::exact::EnergyTable;
use spinglass_core::mc::{self, PtConfig, TemperatureLadder};
use spinglass_core::rng::{self, derive_seed, BoxMuller};
use spinglass_core::{Beta, ModelSpec};

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

fn uniforms(seed: u64, count: usize) -> Vec<f64> {
    let mut s = rng::stream(seed);
    (0..count).map(|_| rng::uniform(&mut s)).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn derived_streams_are_uncorrelated() {
    let count = 100_000;
    let pairs = [
        (derive_seed(1, 0), derive_seed(2, 0)),
        (derive_seed(1, 0), derive_seed(1, 1)),
        (derive_seed(7, 1 << 32), derive_seed(7, 0)),
        (derive_seed(0, 0), derive_seed(u64::MAX, 0)),
    ];
    for (a, b) in pairs {
        assert_ne!(a, b);
        let r = correlation(&uniforms(a, count), &uniforms(b, count));
        assert!(r.abs() * (count as f64).sqrt() < 4.0, "r = {r}");
    }
}

#[test]
fn derived_seeds_do_not_collide() {
    let mut seen = std::collections::HashSet::new();
    for master in 0..64 {
        for index in 0..256 {
            assert!(seen.insert(derive_seed(master, index)));
        }
    }
}

#[test]
fn uniform_and_normal_moments() {
    let count = 200_000;
    let u = uniforms(42, count);
    let mean = u.iter().sum::<f64>() / count as f64;
    assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / count as f64).sqrt());
    assert!(u.iter().all(|&x| (0.0..1.0).contains(&x)));

    let mut g = BoxMuller::new(rng::stream(43));
    let z: Vec<f64> = (0..count).map(|_| g.next_normal()).collect();
    let m = z.iter().sum::<f64>() / count as f64;
    let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count - 1) as f64;
    assert!(m.abs() < 4.0 / (count as f64).sqrt());
    assert!((v - 1.0).abs() < 4.0 * (2.0 / count as f64).sqrt());
}

#[test]
fn tempering_reproduces_field_model() {
    let model = ModelSpec::constant_field(16, 1.0).unwrap();
    let ladder = TemperatureLadder::from_range(0.0, 1.5, 0.25).unwrap();
    let out = mc::parallel_tempering_run(&model, &ladder, &PtConfig::new(20_000, 5)).unwrap();
    let misses = out
        .summaries
        .iter()
        .filter(|s| (s.u_mean - s.beta.value().tanh()).abs() > 3.0 * s.u_stderr)
        .count();
    assert!(misses <= 1, "{misses} of {} rungs outside 3 stderr", out.summaries.len());
    let ti = mc::thermo_integrate(&out.summaries, beta(1.5)).unwrap();
    assert!((ti.free_energy - 1.5f64.cosh().ln()).abs() <= 3.0 * ti.error);
}

#[test]
fn tempering_reproduces_sk_enumeration() {
    let model = ModelSpec::sk_from_seed(11, 314).unwrap();
    let table = EnergyTable::build(&model).unwrap();
    let ladder = TemperatureLadder::from_range(0.0, 1.4, 0.2).unwrap();
    let cfg = PtConfig { copies: 2, ..PtConfig::new(15_000, 9) };
    let out = mc::parallel_tempering_run(&model, &ladder, &cfg).unwrap();
    let misses = out
        .summaries
        .iter()
        .filter(|s| (s.u_mean - table.gibbs_mean(s.beta.value(), |u| u)).abs() > 3.0 * s.u_stderr)
        .count();
    assert!(misses <= 1);
    assert!(out.max_drift < 1e-8);
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let model = ModelSpec::sk_from_seed(12, 2).unwrap();
    let ladder = TemperatureLadder::from_values(&[0.5, 1.0]).unwrap();
    let a = mc::parallel_tempering_run(&model, &ladder, &PtConfig::new(500, 1)).unwrap();
    let b = mc::parallel_tempering_run(&model, &ladder, &PtConfig::new(500, 1)).unwrap();
    let c = mc::parallel_tempering_run(&model, &ladder, &PtConfig::new(500, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.traces, c.traces);
}

#[test]
fn swap_probability_is_metropolis() {
    assert_eq!(mc::swap_probability(1.0, 0.5, 0.0, 1.0), 1.0);
    let p = mc::swap_probability(1.0, 0.5, 1.0, 0.0);
    assert!((p - (-0.5f64).exp()).abs() < 1e-15);
}
