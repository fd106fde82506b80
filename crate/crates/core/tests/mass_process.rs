use mitograph::mass_process::{
    estimate_alpha, invariant_moment_exact, simulate_embedded_chain, tagged_mass_samples, InvariantSeries,
    DEFAULT_EPS_REL,
};
use mitograph::rng::stream_rng;
use mitograph::stats::{ks_two_sample, MeanSe};
use mitograph::{ModelParams, SplitKernel};

fn unit() -> ModelParams {
    ModelParams::new(1.0, 0.0, 1.0)
}

#[test]
fn tagged_mean_relaxes_to_v_over_beta() {
    // dE m / dt = v - beta E m, so E m(t) = v/beta + (m0 - v/beta) e^{-beta t}
    let p = unit();
    let t = 10.0;
    let xs = tagged_mass_samples(&p, &SplitKernel::Uniform { a: 0.25 }, 2.0, t, 1_000_000, 4).unwrap();
    let est = MeanSe::of(&xs);
    let exact = 1.0 + (-t).exp();
    assert!((exact - 1.000_045_4).abs() < 1e-7);
    assert!(est.z_score(exact) < 3.0, "{est:?}");
}

#[test]
fn series_second_moments() {
    let p = unit();
    for (q, want) in [(SplitKernel::AtomicHalf, 4.0 / 3.0), (SplitKernel::Uniform { a: 0.25 }, 1.0 / (1.0 - 0.270_833_333_333_333_3))] {
        let xs = InvariantSeries::new(&p, &q, DEFAULT_EPS_REL).unwrap().samples(1_000_000, 8);
        let mean = MeanSe::of(&xs);
        let second = MeanSe::from_iter(xs.iter().map(|x| x * x));
        assert!(mean.z_score(1.0) < 3.0);
        assert!(second.z_score(want) < 3.0, "{second:?} vs {want}");
        assert!((invariant_moment_exact(&p, &q, 2).unwrap() - want).abs() < 1e-12);
    }
    assert!((invariant_moment_exact(&p, &SplitKernel::AtomicHalf, 3).unwrap() - 16.0 / 7.0).abs() < 1e-12);
}

#[test]
fn embedded_chain_forgets_its_start() {
    let p = unit();
    let q = SplitKernel::Uniform { a: 0.25 };
    let n = 100_000;
    let chain: Vec<f64> = (0..n)
        .map(|r| *simulate_embedded_chain(&p, &q, 5.0, 60, &mut stream_rng(12, r as u64)).unwrap().last().unwrap())
        .collect();
    let limit = InvariantSeries::new(&p, &q, DEFAULT_EPS_REL).unwrap().chain_limit_samples(n, 13);
    assert!(ks_two_sample(&chain, &limit) < 0.02);
    // the law of m(t) carries the extra v tau_0 term and is visibly different
    let with_tau0 = InvariantSeries::new(&p, &q, DEFAULT_EPS_REL).unwrap().samples(n, 14);
    assert!(ks_two_sample(&chain, &with_tau0) > 0.1);
}

#[test]
fn alpha_for_uniform_kernel_is_finite_and_stable() {
    let q = SplitKernel::Uniform { a: 0.25 };
    let a = estimate_alpha(&q, 100_000, 1e-12, 3).unwrap();
    let b = estimate_alpha(&q, 100_000, 5e-13, 3).unwrap();
    assert!(a.value.is_finite() && a.value > 1.0 && a.se > 0.0);
    assert!((a.value - b.value).abs() < a.se);
}
