//! Measurements shared by the integration tests and the acceptance harness.
//! Each returns the quantity a check compares against its tolerance, or a
//! description of the first discrepancy.

#![allow(dead_code)]

use gscale_core::gscalei::{
    align_permutation, feasibility_check, gradient_check, random_encoder, GscaleConfig, Objective,
};
use gscale_core::rng::SeedStream;
use gscale_core::scm::{sample_er_dag, sample_mechanisms, Dag, Environment, QuadraticScm, Targets};
use gscale_core::scores::{
    latent_score_diffs, oracle_score_diffs, score_change_matrices, support, support_size, transport_to_candidate,
    ScoreDiffBatch,
};
use gscale_core::transform::{sample_decoder, DecoderGlm, EncoderLinear};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub scm: QuadraticScm,
    pub decoder: DecoderGlm,
    pub z: DMatrix<f64>,
    pub batch: ScoreDiffBatch,
}

pub fn random_scm(n: usize, seed: u64) -> QuadraticScm {
    let s = SeedStream::new(seed);
    let dag = sample_er_dag(n, 0.5, &mut s.child(1).rng()).unwrap();
    sample_mechanisms(&dag, &mut s.child(2).rng())
}

/// Random permutation of `0..n` from `seed`.
pub fn random_perm(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut SeedStream::new(seed).rng());
    p
}

pub fn instance(scm: QuadraticScm, d: usize, n_s: usize, seed: u64) -> Instance {
    let s = SeedStream::new(seed);
    let decoder = sample_decoder(scm.n(), d, &mut s.child(3).rng()).unwrap();
    let z = scm.sample_latent(Environment::Obs, n_s, &mut s.child(4).rng());
    let batch = oracle_score_diffs(&scm, &decoder, &z).unwrap();
    Instance { scm, decoder, z, batch }
}

/// Central differences of `log_density`, step `h` per coordinate.
pub fn fd_score(scm: &QuadraticScm, env: Environment, z: &[f64], h: f64) -> DVector<f64> {
    let mut probe = z.to_vec();
    DVector::from_fn(z.len(), |i, _| {
        probe[i] = z[i] + h;
        let up = scm.log_density(env, &probe);
        probe[i] = z[i] - h;
        let down = scm.log_density(env, &probe);
        probe[i] = z[i];
        (up - down) / (2.0 * h)
    })
}

/// Largest absolute gap between the closed-form score and central differences
/// over `probes` random (SCM, environment, point) triples with `n` in `2..=6`.
pub fn score_fd_error(probes: usize, seed: u64) -> f64 {
    let mut rng = SeedStream::new(seed).rng();
    let mut worst: f64 = 0.0;
    for p in 0..probes {
        let n = rng.random_range(2..=6);
        let scm = random_scm(n, seed.wrapping_mul(1000).wrapping_add(p as u64))
            .with_targets(Targets::uncoupled((0..n).collect(), &random_perm(n, p as u64)).unwrap())
            .unwrap();
        let m = rng.random_range(0..n);
        let env = [Environment::Obs, Environment::Env1(m), Environment::Env2(m)][rng.random_range(0..3)];
        let z = scm.sample_latent(env, 1, &mut rng);
        let z: Vec<f64> = z.row(0).iter().copied().collect();
        let exact = scm.latent_score(env, &z).unwrap();
        let fd = fd_score(&scm, env, &z, 1e-5);
        worst = worst.max((exact - fd).abs().max());
    }
    worst
}

/// Nodes whose score coordinate may change when `targets` are intervened on:
/// each target together with its parents.
pub fn closure(dag: &Dag, targets: &[usize]) -> Vec<bool> {
    let mut s = vec![false; dag.n()];
    for &t in targets {
        for i in dag.closed_parents(t) {
            s[i] = true;
        }
    }
    s
}

/// Compares the empirical support of `diff` with `expected`: coordinates in the
/// support need a mean magnitude above `eps`, the rest below `zero`.
fn check_support(mean_abs: &[f64], expected: &[bool], eps: f64, zero: f64, what: &str) -> Result<(), String> {
    for (i, (&v, &e)) in mean_abs.iter().zip(expected).enumerate() {
        if e && !(v > eps) {
            return Err(format!("{what}: coordinate {i} should be active but mean |diff| = {v:e}"));
        }
        if !e && !(v < zero) {
            return Err(format!("{what}: coordinate {i} should be inactive but mean |diff| = {v:e}"));
        }
    }
    Ok(())
}

/// The three latent support patterns on one SCM with `n_s` observational samples.
/// Coupled targets are checked for the first two, a planted mismatch for the third.
pub fn latent_support_patterns(n: usize, n_s: usize, seed: u64, eps: f64) -> Result<(), String> {
    let base = random_scm(n, seed);
    let coupled = base.clone();
    let sigma = (0..)
        .map(|k| random_perm(n, seed ^ 0x5eed ^ (k << 32)))
        .find(|s| n < 2 || s.iter().enumerate().any(|(i, &v)| i != v))
        .expect("a non-identity permutation exists");
    let uncoupled = base.with_targets(Targets::uncoupled((0..n).collect(), &sigma).unwrap()).unwrap();
    let z = coupled.sample_latent(Environment::Obs, n_s, &mut SeedStream::new(seed).child(7).rng());
    for (scm, label) in [(&coupled, "coupled"), (&uncoupled, "uncoupled")] {
        for m in 0..n {
            let mut sums = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for k in 0..n_s {
                let zk: Vec<f64> = z.row(k).iter().copied().collect();
                let diffs = latent_score_diffs(scm, m, &zk).map_err(|e| e.to_string())?;
                for (acc, diff) in sums.iter_mut().zip(&diffs) {
                    for i in 0..n {
                        acc[i] += diff[i].abs() / n_s as f64;
                    }
                }
            }
            let (i1, i2) = (scm.targets.env1[m], scm.targets.env2[m]);
            check_support(&sums[0], &closure(&scm.dag, &[i1]), eps, 1e-10, &format!("{label} s - s^{m}"))?;
            check_support(&sums[1], &closure(&scm.dag, &[i2]), eps, 1e-10, &format!("{label} s - s~^{m}"))?;
            let pair = if i1 == i2 {
                (0..n).map(|i| i == i1).collect()
            } else {
                closure(&scm.dag, &[i1, i2])
            };
            check_support(&sums[2], &pair, eps, 1e-10, &format!("{label} s^{m} - s~^{m}"))?;
        }
    }
    Ok(())
}

/// Observed-space supports at the true encoder: columns of the thresholded
/// score-change matrices against the latent patterns. `Ok(false)` when some
/// observation rounds to `+-1` and cannot be encoded.
pub fn transported_support_patterns(n: usize, d: usize, n_s: usize, seed: u64, eps: f64) -> Result<bool, String> {
    let inst = instance(random_scm(n, seed), d, n_s, seed);
    let mats = match score_change_matrices(&inst.decoder.true_encoder(), &inst.batch) {
        Ok(m) => m,
        Err(gscale_core::Error::DomainViolation { .. }) => return Ok(false),
        Err(e) => return Err(e.to_string()),
    };
    let dag = &inst.scm.dag;
    let sd = support(&mats.d, eps);
    let st = support(&mats.d_t, eps);
    for m in 0..n {
        let want = closure(dag, &[m]);
        for i in 0..n {
            if sd[(i, m)] != want[i] {
                return Err(format!("D[{i}][{m}] support {} expected {}", sd[(i, m)], want[i]));
            }
            if st[(i, m)] != (i == m) {
                return Err(format!("D_t[{i}][{m}] support {} expected {}", st[(i, m)], i == m));
            }
        }
    }
    Ok(true)
}

/// Largest error of the decode/encode round trip `encode(G^+, decode(z)) = z`
/// and of the score transport `J_g(z)^T [J_g(z)^+]^T v = v`.
pub fn transport_round_trip_errors(trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = SeedStream::new(seed).rng();
    let (mut encode_err, mut transport_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let n = rng.random_range(1..=6);
        let d = n + rng.random_range(0..=10);
        let dec = sample_decoder(n, d, &mut rng).unwrap();
        let enc = dec.true_encoder();
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = dec.decode(&z);
        let back = enc.encode(x.as_slice()).unwrap();
        encode_err = encode_err.max((back - DVector::from_vec(z.clone())).abs().max());
        let obs = dec.observed_score_diff(&z, v.as_slice()).unwrap();
        let latent = dec.jacobian(&z).transpose() * obs;
        transport_err = transport_err.max((latent - &v).abs().max());
    }
    (encode_err, transport_err)
}

/// Largest error between the latent differences and the observed differences
/// carried back to latent space by the true encoder.
pub fn transport_duality_error(n: usize, d: usize, n_s: usize, seed: u64) -> f64 {
    let inst = instance(random_scm(n, seed), d, n_s, seed);
    let t = transport_to_candidate(&inst.decoder.true_encoder(), &inst.batch).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..n_s {
        let zk: Vec<f64> = inst.z.row(k).iter().copied().collect();
        for m in 0..n {
            let diffs = latent_score_diffs(&inst.scm, m, &zk).unwrap();
            for (fam, diff) in [&t.obs1, &t.obs2, &t.pair].into_iter().zip(&diffs) {
                for i in 0..n {
                    worst = worst.max((fam[m][(k, i)] - diff[i]).abs());
                }
            }
        }
    }
    worst
}

/// `max |d_pair - (d_obs2 - d_obs1)|` on an oracle batch.
pub fn telescoping_error(batch: &ScoreDiffBatch) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..batch.n() {
        let gap = &batch.d_pair[m] - (&batch.d_obs2[m] - &batch.d_obs1[m]);
        worst = worst.max(gap.abs().max());
    }
    worst
}

/// Finite-difference audit on one random `(n, d, n_s)` problem at a random encoder.
pub fn gradient_audit(n: usize, d: usize, n_s: usize, seed: u64) -> f64 {
    let mut n_rng = SeedStream::new(seed).child(11).rng();
    let targets = Targets::uncoupled((0..n).collect(), &random_perm(n, n_rng.random())).unwrap();
    let scm = random_scm(n, seed).with_targets(targets).unwrap();
    let inst = instance(scm, d, n_s, seed);
    let cfg = GscaleConfig::for_nodes(n);
    let obj = Objective::new(&inst.batch, &cfg).unwrap();
    let h = random_encoder(n, d, SeedStream::new(seed).child(12));
    gradient_check(&obj, h.matrix(), 1e-6).unwrap()
}

/// Thresholded `||D_t||_0` at the true encoder rows aligned to the environments,
/// and at `encoders` random full-rank encoders.
pub fn dt_density(n: usize, d: usize, n_s: usize, seed: u64, encoders: usize, eps: f64) -> (usize, Vec<usize>) {
    let inst = instance(random_scm(n, seed), d, n_s, seed);
    let aligned = support_size(&score_change_matrices(&inst.decoder.true_encoder(), &inst.batch).unwrap().d_t, eps);
    let random = (0..encoders)
        .map(|e| {
            let h = random_encoder(n, d, SeedStream::new(seed).child(100 + e as u64));
            support_size(&score_change_matrices(&h, &inst.batch).unwrap().d_t, eps)
        })
        .collect();
    (aligned, random)
}

/// Encoders the feasibility test is run at for one relabelling: the true
/// encoder under every row order plus `random` random encoders, each aligned the
/// way the fitting pipeline aligns its result.
fn candidate_encoders(inst: &Instance, random: usize, seed: u64) -> Vec<EncoderLinear> {
    let n = inst.scm.n();
    let truth = inst.decoder.true_encoder();
    let mut out: Vec<EncoderLinear> = (0..n).permutations(n).map(|p| truth.permute_rows(&p)).collect();
    out.extend((0..random).map(|e| random_encoder(n, inst.decoder.obs_dim(), SeedStream::new(seed).child(200 + e as u64))));
    out
}

/// Exhaustive coupling check on one SCM with a planted mismatch. Returns an
/// error naming the first relabelling whose feasibility verdict is wrong.
pub fn coupling_feasibility(n: usize, d: usize, n_s: usize, seed: u64, random: usize) -> Result<(), String> {
    let sigma = random_perm(n, seed ^ 0xc0);
    let scm = random_scm(n, seed).with_targets(Targets::uncoupled((0..n).collect(), &sigma).unwrap()).unwrap();
    let truth_pi = scm.targets.true_coupling();
    let inst = instance(scm, d, n_s, seed);
    let cfg = GscaleConfig::for_nodes(n);
    let candidates = candidate_encoders(&inst, random, seed);
    for pi in (0..n).permutations(n) {
        let batch = inst.batch.relabel_second(&pi);
        if pi == truth_pi {
            let mats = score_change_matrices(&inst.decoder.true_encoder(), &batch).unwrap();
            let rep = feasibility_check(&mats, &cfg);
            if !rep.feasible {
                return Err(format!("correct coupling {pi:?} rejected: {:?}", rep.violations));
            }
            continue;
        }
        for (c, enc) in candidates.iter().enumerate() {
            let raw = score_change_matrices(enc, &batch).unwrap();
            let aligned = enc.permute_rows(&align_permutation(&raw));
            let mats = score_change_matrices(&aligned, &batch).unwrap();
            if feasibility_check(&mats, &cfg).feasible {
                return Err(format!("wrong coupling {pi:?} accepted at candidate {c}"));
            }
        }
    }
    Ok(())
}
