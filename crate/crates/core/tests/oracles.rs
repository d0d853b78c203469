//! Cross-checks against independent computations: dense linear algebra
//! from nalgebra, brute-force generator assembly and closed forms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use popmf::dynamics::{coordination_utility, local_estimate, logit_policy, sis_model_dense};
use popmf::interaction::circulant_spectrum;
use popmf::meanfield::solve_cmfa;
use popmf::oracle::{build_generator, martingale_residual, sis_generator_direct, transient_distribution};
use popmf::simulator::simulate_ct;
use popmf::{InteractionMatrix, PopulationModel, PopulationState, StateSpace};

fn dense(w: &InteractionMatrix) -> DMatrix<f64> {
    let d = w.to_dense();
    let n = d.len();
    DMatrix::from_fn(n, n, |i, j| d[i][j])
}

fn random_row_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n)
                .map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 })
                .collect();
            let s: f64 = row.iter().sum();
            if s == 0.0 {
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|v| v / s).collect()
            }
        })
        .collect()
}

/// λ(W) as the top singular value of WΠ.
fn lambda_svd(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let pi = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    (w * pi).singular_values().max()
}

#[test]
fn spectral_density_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30 {
        let n = rng.random_range(2..=40);
        let rows = random_row_stochastic(&mut rng, n);
        let w = InteractionMatrix::from_dense(&rows).unwrap();
        let want = lambda_svd(&dense(&w));
        let got = w.spectral_density(1e-15, 1_000_000).unwrap();
        assert!(
            (got.lambda - want).abs() < 1e-6 * want.max(1e-3),
            "trial {trial}: n={n} power {} svd {want}",
            got.lambda
        );
    }
}

#[test]
fn local_density_is_scaled_frobenius_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.random_range(1..=30);
        let w = InteractionMatrix::from_dense(&random_row_stochastic(&mut rng, n)).unwrap();
        let want = dense(&w).norm() / (n as f64).sqrt();
        assert!((w.local_density() - want).abs() < 1e-12);
    }
}

#[test]
fn circulant_spectrum_matches_dense_eigenvalues() {
    for &(n, density) in &[(7, 0.3), (16, 0.25), (31, 0.5), (64, 0.1), (64, 0.9), (50, 0.98)] {
        let w = InteractionMatrix::nearest_neighbor(n, density).unwrap();
        let mut want: Vec<f64> = SymmetricEigen::new(dense(&w)).eigenvalues.iter().copied().collect();
        let mut got = circulant_spectrum(n, density).unwrap();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "n={n} density={density}: {a} vs {b}");
        }
        // μ_0 = 1 belongs to the constant vector
        let lam_circ = circulant_spectrum(n, density).unwrap()[1..]
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!((lam_circ - lambda_svd(&dense(&w))).abs() < 1e-10);
    }
}

#[test]
fn symmetric_density_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(2..=25);
        // symmetric nonnegative B, then pad the diagonal to a common row sum
        let mut b = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = if rng.random::<f64>() < 0.4 { rng.random::<f64>() } else { 0.0 };
                b[i][j] = v;
                b[j][i] = v;
            }
        }
        let c = b.iter().map(|r| r.iter().sum::<f64>()).fold(0.0f64, f64::max).max(1e-3);
        for (i, row) in b.iter_mut().enumerate() {
            let s: f64 = row.iter().sum();
            row[i] += c - s;
            row.iter_mut().for_each(|v| *v /= c);
        }
        let w = InteractionMatrix::from_dense(&b).unwrap();
        let theta = w.local_density();
        let lambda = lambda_svd(&dense(&w));
        assert!(theta * theta <= lambda * lambda + 1.0 / n as f64 + 1e-12);
    }
}

fn random_sis(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, f64, f64) {
    loop {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.6 {
                    let v = rng.random_range(0.1..2.0);
                    a[i][j] = v;
                    a[j][i] = v;
                }
            }
        }
        if a.iter().all(|r| r.iter().any(|&v| v > 0.0)) {
            return (a, rng.random_range(0.01..=2.0), rng.random_range(0.01..=2.0));
        }
    }
}

#[test]
fn generator_matches_brute_force_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let n = rng.random_range(2..=5);
        let (a, b, g) = random_sis(&mut rng, n);
        let model = sis_model_dense(&a, b, g).unwrap();
        let gen = build_generator(&model, 1 << 12).unwrap();
        let direct = sis_generator_direct(&a, b, g, 1 << 12).unwrap();
        assert!(gen.max_abs_difference(&direct).unwrap() < 1e-12);
        // entry by entry from the definition: agent i flips at rate
        // r_i ρ_i(Ȳ_i)
        let states = 1usize << n;
        for x in 0..states {
            let config: Vec<usize> = (0..n).map(|i| (x >> i) & 1).collect();
            let st = PopulationState::new(config.clone(), 2).unwrap();
            let mut diag = 0.0;
            for i in 0..n {
                let z = local_estimate(model.interaction(), &st, i);
                let from = config[i];
                let to = 1 - from;
                let rate = model.clock_rates()[i] * model.policy().rate(i, from, to, &z);
                let y = x ^ (1 << i);
                assert!((gen.entry(x, y) - rate).abs() < 1e-12);
                diag -= rate;
            }
            assert!((gen.entry(x, x) - diag).abs() < 1e-12);
        }
    }
}

#[test]
fn transient_distribution_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let w = Arc::new(InteractionMatrix::complete(4).unwrap());
    let model = PopulationModel::with_uniform_rate(
        StateSpace::new(["1", "2"]).unwrap(),
        1.5,
        logit_policy(coordination_utility(), 0.3).unwrap(),
        w,
    )
    .unwrap();
    let gen = build_generator(&model, 1 << 10).unwrap();
    let m = gen.size();
    let q = DMatrix::from_fn(m, m, |x, y| gen.entry(x, y));
    for &t in &[0.1, 1.0, 7.5] {
        let mut p0: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let s: f64 = p0.iter().sum();
        p0.iter_mut().for_each(|v| *v /= s);
        let want = DVector::from_vec(p0.clone()).transpose() * (q.clone() * t).exp();
        let got = transient_distribution(&gen, &p0, t).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    // two-state symmetric switching: x₂(t) = 0.5 + (x₂(0) − 0.5) e^{−2t}
    let policy = popmf::RatePolicy::constant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let exact = 0.5 + 0.5 * (-2.0f64).exp();
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| {
            let sol = solve_cmfa(&policy, 1.0, &[0.0, 1.0], 1.0, h, 1).unwrap();
            (sol.final_state()[1] - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn martingale_residual_has_zero_mean() {
    let w = Arc::new(InteractionMatrix::nearest_neighbor(40, 0.2).unwrap());
    let model = PopulationModel::with_uniform_rate(
        StateSpace::new(["1", "2"]).unwrap(),
        1.0,
        logit_policy(coordination_utility(), 0.1).unwrap(),
        w,
    )
    .unwrap();
    let init = PopulationState::new((0..40).map(|i| usize::from(i < 8)).collect(), 2).unwrap();
    let v = vec![1.0 / 40.0; 40];
    let reps = 3000;
    let vals: Vec<f64> = (0..reps)
        .map(|seed| {
            let traj = simulate_ct(&model, &init, 2.0, seed).unwrap();
            martingale_residual(&traj, &model, &v, &[2.0]).unwrap()[0][1]
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    assert!(se > 0.0);
}
