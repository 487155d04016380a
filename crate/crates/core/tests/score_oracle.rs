mod common;

use common::{fd_score, latent_support_patterns, random_scm, score_fd_error, transported_support_patterns};
use gscale_core::rng::SeedStream;
use gscale_core::scm::{Environment, Targets};
use proptest::prelude::*;

#[test]
fn closed_form_score_matches_finite_differences() {
    assert!(score_fd_error(100, 1) < 1e-6);
}

#[test]
fn latent_supports_follow_the_intervened_mechanisms() {
    for seed in 0..6 {
        let n = 2 + seed as usize % 5;
        latent_support_patterns(n, 2000, seed, 1e-3).unwrap();
    }
}

#[test]
fn true_encoder_score_change_matrices_have_the_latent_supports() {
    for seed in 0..8 {
        let n = 2 + seed as usize % 4;
        assert!(transported_support_patterns(n, n + 3, 500, seed, 1e-3).unwrap());
    }
}

#[test]
fn interventional_scores_sum_of_terms() {
    // Intervening on a root swaps only its own Gaussian term.
    let scm = random_scm(3, 4);
    let z = [0.3, -0.7, 1.1];
    let roots: Vec<usize> = (0..3).filter(|&i| scm.dag.parents(i).is_empty()).collect();
    for &r in &roots {
        let scm = scm.clone().with_targets(Targets::coupled({
            let mut t: Vec<usize> = (0..3).collect();
            t.swap(0, r);
            t
        }).unwrap()).unwrap();
        let obs = scm.latent_score(Environment::Obs, &z).unwrap();
        let int = scm.latent_score(Environment::Env1(0), &z).unwrap();
        for i in 0..3 {
            if i != r {
                assert!((obs[i] - int[i]).abs() < 1e-15);
            }
        }
        let expected = -z[r] / scm.noise_var[r] + z[r] / scm.int_var_1[r];
        assert!((obs[r] - int[r] - expected).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_gradient_of_log_density(seed in 0u64..10_000, n in 1usize..6, env_sel in 0usize..3) {
        let scm = random_scm(n, seed);
        let m = (seed as usize) % n;
        let env = [Environment::Obs, Environment::Env1(m), Environment::Env2(m)][env_sel];
        let z = scm.sample_latent(env, 1, &mut SeedStream::new(seed).child(3).rng());
        let z: Vec<f64> = z.row(0).iter().copied().collect();
        let exact = scm.latent_score(env, &z).unwrap();
        let fd = fd_score(&scm, env, &z, 1e-5);
        prop_assert!((exact - fd).abs().max() < 1e-6);
    }
}
