use bsbi_core::simulators::{
    gaussian_linear_posterior, gaussian_linear_simulate, generate_dataset_with, shuffle_marginal_batch,
    slcp_covariance, slcp_simulate, two_moons_simulate, PriorSpec, SimPair, Task,
};
use bsbi_core::{stream_rng, Stream};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

const N: usize = 1_000_000;

/// Mean and standard error of the mean.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn chi2_p_value(counts: &[usize], expected: f64) -> f64 {
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn two_moons_mean_at_origin() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Vec<f64>> = (0..N).map(|_| two_moons_simulate(&[0.0, 0.0], &mut rng).unwrap()).collect();
    // E[r cos a] = 0.1 · E[cos a] with a ~ U(−π/2, π/2), and E[cos a] = 2/π.
    let expected = [0.25 + 0.1 * 2.0 / std::f64::consts::PI, 0.0];
    for d in 0..2 {
        let col: Vec<f64> = draws.iter().map(|x| x[d]).collect();
        let (m, se) = mean_se(&col);
        assert!((m - expected[d]).abs() < 3.0 * se, "coordinate {d}: {m} vs {}", expected[d]);
    }
}

#[test]
fn two_moons_shift_structure() {
    // θ = (t, −t): no shift along the first axis, so x₁ matches θ = 0 draw for draw.
    for t in [-0.9, -0.3, 0.0, 0.4, 1.0] {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = two_moons_simulate(&[t, -t], &mut a).unwrap();
            let x0 = two_moons_simulate(&[0.0, 0.0], &mut b).unwrap();
            assert_eq!(x[0], x0[0]);
            assert!((x[1] - x0[1] + 2.0 * t / 2f64.sqrt()).abs() < 1e-15);
        }
    }
    // |θ₁+θ₂| is shared by (0.5, 0.5) and (−0.5, −0.5), so x₁ agrees draw for draw.
    let mut a = ChaCha8Rng::seed_from_u64(3);
    let mut b = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let xa = two_moons_simulate(&[0.5, 0.5], &mut a).unwrap();
        let xb = two_moons_simulate(&[-0.5, -0.5], &mut b).unwrap();
        assert_eq!(xa[0], xb[0]);
    }
}

#[test]
fn slcp_unit_covariance_has_zero_mean() {
    let theta = [0.0, 0.0, 1.0, 1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<Vec<f64>> = (0..N).map(|_| slcp_simulate(&theta, &mut rng).unwrap()).collect();
    for d in 0..8 {
        let col: Vec<f64> = draws.iter().map(|x| x[d]).collect();
        let (m, se) = mean_se(&col);
        assert!(m.abs() < 3.0 * se, "coordinate {d}: mean {m}, se {se}");
    }
}

#[test]
fn slcp_point_covariance() {
    let theta = [0.0, 0.0, 1.0, 2.0, 0.0];
    assert_eq!(slcp_covariance(&theta).unwrap(), [[1.0, 0.0], [0.0, 16.0]]);
    assert_eq!(slcp_covariance(&[1.0, -1.0, 2.0, 0.5, 0.0]).unwrap()[0][1], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
    for _ in 0..N {
        let x = slcp_simulate(&theta, &mut rng).unwrap();
        s11 += x[0] * x[0];
        s22 += x[1] * x[1];
        s12 += x[0] * x[1];
    }
    let n = N as f64;
    // Sample second moments (the mean is known to be 0); var(x²) = 2σ⁴.
    let (v1, v2, c) = (s11 / n, s22 / n, s12 / n);
    assert!((v1 - 1.0).abs() < 4.0 * (2.0f64 / n).sqrt(), "{v1}");
    assert!((v2 - 16.0).abs() < 4.0 * 16.0 * (2.0 / n).sqrt(), "{v2}");
    assert!(c.abs() < 4.0 * (16.0 / n).sqrt(), "{c}");
}

#[test]
fn slcp_correlation_follows_tanh() {
    let theta = [0.0, 0.0, 1.0, 1.0, 0.8];
    let rho = 0.8f64.tanh();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200_000;
    let mut s12 = 0.0;
    for _ in 0..n {
        let x = slcp_simulate(&theta, &mut rng).unwrap();
        s12 += x[2] * x[3];
    }
    assert!((s12 / n as f64 - rho).abs() < 4.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn simulators_reject_parameters_outside_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(two_moons_simulate(&[1.5, 0.0], &mut rng).is_err());
    assert!(slcp_simulate(&[0.0, 0.0, 3.5, 1.0, 0.0], &mut rng).is_err());
    assert!(gaussian_linear_simulate(&[0.0], &mut rng).is_err());
}

#[test]
fn gaussian_linear_posterior_examples() {
    assert_eq!(gaussian_linear_posterior(&[0.0, 0.0]).unwrap().mean(), &[0.0, 0.0]);
    let p = gaussian_linear_posterior(&[1.25, 0.0]).unwrap();
    assert!((p.mean()[0] - 1.0).abs() < 1e-15 && p.mean()[1] == 0.0);
    assert!((p.var()[0] - 0.2).abs() < 1e-15);
}

#[test]
fn analytic_posterior_covers_ninety_percent() {
    // The 90% HPD region of N(μ, 0.2·I₂) is the disc ‖θ−μ‖²/0.2 ≤ −2 ln 0.1.
    let radius2 = -2.0 * 0.1f64.ln();
    let mut rng = stream_rng(9, Stream::TestSet);
    let n = 1000;
    let inside = (0..n)
        .filter(|_| {
            let p = Task::GaussianLinear.sample_joint(&mut rng);
            let post = gaussian_linear_posterior(&p.x).unwrap();
            let d2: f64 = p.theta.iter().zip(post.mean()).map(|(t, m)| (t - m).powi(2) / 0.2).sum();
            d2 <= radius2
        })
        .count();
    let cov = inside as f64 / n as f64;
    assert!((cov - 0.9).abs() <= 0.03, "coverage {cov}");
}

#[test]
fn dataset_split_sizes() {
    let d = generate_dataset_with(Task::TwoMoons, 1024, 0, 10).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (922, 102, 10));
    for b in [64, 100, 255, 4096] {
        let d = generate_dataset_with(Task::GaussianLinear, b, 1, 5).unwrap();
        assert_eq!(d.train.len() + d.val.len(), b);
    }
    assert!(generate_dataset_with(Task::TwoMoons, 63, 0, 10).is_err());
    assert_eq!(
        generate_dataset_with(Task::Slcp, 128, 5, 20).unwrap(),
        generate_dataset_with(Task::Slcp, 128, 5, 20).unwrap()
    );
}

#[test]
fn dataset_parameters_follow_the_prior() {
    let bins = 20;
    let expected = 100_000.0 / bins as f64;

    let d = generate_dataset_with(Task::TwoMoons, 100_000, 3, 0).unwrap();
    let mut counts = vec![vec![0usize; bins]; 2];
    for p in d.train.iter().chain(&d.val) {
        for k in 0..2 {
            counts[k][(((p.theta[k] + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    for c in &counts {
        assert!(chi2_p_value(c, expected) > 0.01);
    }

    // Standard normal prior: equiprobable bins through the normal CDF.
    let phi = Normal::new(0.0, 1.0).unwrap();
    let d = generate_dataset_with(Task::GaussianLinear, 100_000, 3, 0).unwrap();
    let mut counts = vec![vec![0usize; bins]; 2];
    for p in d.train.iter().chain(&d.val) {
        for k in 0..2 {
            counts[k][((phi.cdf(p.theta[k]) * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    for c in &counts {
        assert!(chi2_p_value(c, expected) > 0.01);
    }

    // SLCP inference targets stay in their box.
    let d = generate_dataset_with(Task::Slcp, 1000, 3, 0).unwrap();
    assert!(d.train.iter().all(|p| p.theta.len() == 2 && p.theta.iter().all(|t| t.abs() <= 3.0) && p.x.len() == 8));
}

#[test]
fn shuffling_two_pairs_swaps_half_the_time() {
    let batch = vec![
        SimPair { theta: vec![0.0], x: vec![0.0] },
        SimPair { theta: vec![1.0], x: vec![1.0] },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 20_000;
    let swaps = (0..n).filter(|_| shuffle_marginal_batch(&batch, &mut rng).unwrap()[0].theta[0] == 1.0).count();
    let f = swaps as f64 / n as f64;
    assert!((f - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{f}");
    assert!(shuffle_marginal_batch(&batch[..1], &mut rng).is_err());
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_se(a);
    let (mb, _) = mean_se(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn shuffling_removes_dependence() {
    let d = generate_dataset_with(Task::GaussianLinear, 100_000, 8, 0).unwrap();
    let theta: Vec<f64> = d.train.iter().map(|p| p.theta[0]).collect();
    let x: Vec<f64> = d.train.iter().map(|p| p.x[0]).collect();
    // Joint pairs: corr(θ, θ + 0.5ε) = 1/√1.25.
    assert!((correlation(&theta, &x) - 1.25f64.sqrt().recip()).abs() < 0.01);
    let shuffled = shuffle_marginal_batch(&d.train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let st: Vec<f64> = shuffled.iter().map(|p| p.theta[0]).collect();
    let sx: Vec<f64> = shuffled.iter().map(|p| p.x[0]).collect();
    assert_eq!(sx, x);
    assert!(correlation(&st, &sx).abs() < 4.0 / (st.len() as f64).sqrt());
}

proptest! {
    #[test]
    fn shuffling_preserves_the_theta_multiset(values in prop::collection::vec(-10.0f64..10.0, 2..64), seed: u64) {
        let batch: Vec<SimPair> = values.iter().enumerate().map(|(i, &v)| SimPair { theta: vec![v], x: vec![i as f64] }).collect();
        let out = shuffle_marginal_batch(&batch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut a: Vec<f64> = batch.iter().map(|p| p.theta[0]).collect();
        let mut b: Vec<f64> = out.iter().map(|p| p.theta[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
        prop_assert!(out.iter().enumerate().all(|(i, p)| p.x[0] == i as f64));
    }

    #[test]
    fn prior_density_is_finite_exactly_on_the_support(t in prop::collection::vec(-4.0f64..4.0, 5)) {
        for prior in [Task::TwoMoons.prior(), Task::Slcp.simulation_prior(), Task::Slcp.prior(), Task::GaussianLinear.prior()] {
            let theta = &t[..prior.dim()];
            prop_assert_eq!(prior.log_density(theta).is_finite(), prior.contains(theta));
        }
    }

    #[test]
    fn box_density_integrates_to_one(lo in prop::collection::vec(-5.0f64..0.0, 1..4), width in prop::collection::vec(0.1f64..3.0, 4)) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let volume: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
        let centre: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let prior = PriorSpec::box_uniform(lo, hi).unwrap();
        prop_assert!((prior.log_density(&centre).exp() * volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulators_are_deterministic_given_theta_and_seed(seed: u64, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let run = |task: Task, theta: &[f64]| task.simulate(theta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(run(Task::TwoMoons, &[a, b]), run(Task::TwoMoons, &[a, b]));
        prop_assert_eq!(run(Task::GaussianLinear, &[a, b]), run(Task::GaussianLinear, &[a, b]));
        let s = [a, b, 1.0 + a, 2.0 * b, a * b];
        prop_assert_eq!(run(Task::Slcp, &s), run(Task::Slcp, &s));
    }
}
