mod common;
mod oracle;

use common::*;
use mfql::dataset::Batch;
use mfql::meanflow::{gaussian_noise, interpolate, sample_times_batch, LossWeighting};
use mfql::mlp::{init_mlp, FinalInit, MlpParams, MlpSpec};
use mfql::nets::{policy_forward, policy_jvp, CriticEnsemble, PolicyNet};
use mfql::qlearning::{
    actor_loss, alpha_rule, best_of_k_detailed, critic_loss, critic_loss_with_targets,
    AlphaScheduleParams, AlphaScheduler,
};
use mfql::{Tensor, TimeSampler, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear(weights: &[f64], bias: f64) -> MlpParams {
    let spec = MlpSpec::new(vec![weights.len(), 1], false, FinalInit::Zero);
    let mut m = init_mlp(&spec, 0).unwrap();
    let l = &mut m.layers_mut()[0];
    l.weight.data_mut().copy_from_slice(weights);
    l.bias.data_mut()[0] = bias;
    m
}

fn random_critic(rng: &mut ChaCha8Rng, sd: usize, ad: usize, members: usize) -> CriticEnsemble {
    let mut c = CriticEnsemble::new(sd, ad, &[6, 5], true, members, rng.random()).unwrap();
    for m in c.members_mut() {
        randomize(m, rng, 1.5);
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn alpha_stays_positive(seed in any::<u64>(), alpha0 in 1e-6f64..1e6, interval in 1u64..5, window in 1usize..30) {
        let params = AlphaScheduleParams { interval, window, ..Default::default() };
        let mut sched = AlphaScheduler::new(alpha0, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20_000 {
            let l_q = match rng.random_range(0..4) {
                0 => rng.random_range(-1e6..1e6),
                1 => rng.random_range(0.0..1e-3),
                2 => rng.random_range(1e3..1e9),
                _ => rng.random_range(-10.0..10.0),
            };
            let a = sched.update(l_q);
            prop_assert!(a > 0.0 && a.is_finite());
        }
    }

    #[test]
    fn best_of_k_returns_the_max_over_its_candidates(seed in any::<u64>(), k in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = random_policy(&mut rng, Variant::ResidualAt);
        let (sd, ad) = (policy.state_dim(), policy.action_dim());
        let critic = random_critic(&mut rng, sd, ad, 2);
        let n = rng.random_range(1..=5);
        let s = random_tensor(&mut rng, n, sd, 1.0);
        let out = best_of_k_detailed(&policy, &critic, &s, k, &mut rng).unwrap();
        let q_all = critic.q_values(&s.repeat_rows(k), &out.candidates).unwrap();
        prop_assert_eq!(&q_all, &out.candidate_q);
        let q_sel = critic.q_values(&s, &out.actions).unwrap();
        for i in 0..n {
            let best = (0..k).map(|c| q_all.data()[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out.q.data()[i], best);
            prop_assert_eq!(q_sel.data()[i], best);
        }
    }
}

#[test]
fn alpha_rule_examples() {
    let p = AlphaScheduleParams::default();
    assert_eq!(alpha_rule(10.0, 100.0, 10.0, &p), 12.0);
    assert_eq!(alpha_rule(10.0, 1.0, 10.0, &p), 8.0);
    assert_eq!(alpha_rule(10.0, 10.0, 10.0, &p), 10.0);
    // Thresholds are strict.
    assert_eq!(alpha_rule(10.0, 50.0, 10.0, &p), 10.0);
    assert_eq!(alpha_rule(10.0, 2.0, 10.0, &p), 10.0);
}

#[test]
fn best_of_k_ties_pick_the_first_candidate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = PolicyNet::new(2, 2, &[8], 4, Variant::PlainU, 3).unwrap();
    let flat = CriticEnsemble::from_members(vec![linear(&[0.0; 4], 0.5)], 2, 2).unwrap();
    let s = random_tensor(&mut rng, 3, 2, 1.0);
    let out = best_of_k_detailed(&policy, &flat, &s, 4, &mut rng).unwrap();
    assert_eq!(out.actions, out.candidates.select_rows(&[0, 1, 2]).unwrap());
}

#[test]
fn critic_loss_matches_hand_computation() {
    // Zero-init Residual_At policy proposes a' = 0 for every candidate.
    let policy = PolicyNet::new(2, 2, &[4], 2, Variant::ResidualAt, 0).unwrap();
    let online = CriticEnsemble::from_members(
        vec![
            linear(&[0.5, -1.0, 2.0, 0.25], 0.1),
            linear(&[-0.3, 0.2, 0.0, 1.0], -0.4),
        ],
        2,
        2,
    )
    .unwrap();
    let target = CriticEnsemble::from_members(
        vec![
            linear(&[1.0, 2.0, 3.0, 4.0], 0.5),
            linear(&[-1.0, 0.0, 5.0, 5.0], 1.5),
        ],
        2,
        2,
    )
    .unwrap();
    let batch = Batch {
        s: Tensor::matrix(1, 2, vec![0.2, -0.1]).unwrap(),
        a: Tensor::matrix(1, 2, vec![0.5, 0.3]).unwrap(),
        r: Tensor::vector(vec![-1.0]).unwrap(),
        s_next: Tensor::matrix(1, 2, vec![0.3, 0.4]).unwrap(),
        done: Tensor::vector(vec![0.0]).unwrap(),
    };
    let gamma = 0.9;
    // Target members at (s', 0): 0.3 + 0.8 + 0.5 = 1.6 and −0.3 + 1.5 = 1.2.
    let y: f64 = -1.0 + gamma * (1.6 + 1.2) / 2.0;
    // Online members at (s, a): 0.1 + 0.1 + 1.0 + 0.075 + 0.1 = 1.375 and
    // −0.06 − 0.02 + 0.3 − 0.4 = −0.18.
    let want = ((1.375 - y).powi(2) + (-0.18 - y).powi(2)) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = critic_loss(&policy, &online, &target, &batch, gamma, 5, 1, &mut rng).unwrap();
    assert!((pass.targets.data()[0] - y).abs() < 1e-12);
    assert!((pass.loss - want).abs() < 1e-12, "{} vs {want}", pass.loss);

    let done = Batch {
        done: Tensor::vector(vec![1.0]).unwrap(),
        ..batch.clone()
    };
    let pass = critic_loss(&policy, &online, &target, &done, gamma, 5, 1, &mut rng).unwrap();
    assert_eq!(pass.targets.data()[0], -1.0);

    let zero_gamma = critic_loss(&policy, &online, &target, &batch, 0.0, 5, 1, &mut rng).unwrap();
    assert_eq!(zero_gamma.targets.data()[0], -1.0);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let critic = random_critic(&mut rng, 2, 2, 2);
    let s = random_tensor(&mut rng, 5, 2, 1.0);
    let a = random_tensor(&mut rng, 5, 2, 1.0);
    let y = random_tensor(&mut rng, 5, 1, 1.0).reshape(vec![5]).unwrap();
    let (_, grads) = critic_loss_with_targets(&critic, &s, &a, &y).unwrap();
    let h = 1e-6;
    for m in 0..2 {
        let l0 = &critic.members()[m].layers()[0];
        for k in 0..l0.weight.len() {
            let mut plus = critic.clone();
            plus.members_mut()[m].layers_mut()[0].weight.data_mut()[k] += h;
            let mut minus = critic.clone();
            minus.members_mut()[m].layers_mut()[0].weight.data_mut()[k] -= h;
            let fd = (critic_loss_with_targets(&plus, &s, &a, &y).unwrap().0
                - critic_loss_with_targets(&minus, &s, &a, &y).unwrap().0)
                / (2.0 * h);
            let got = grads.members()[m].layers()[0].weight.data()[k];
            assert!(
                (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "member {m} entry {k}: {got} vs {fd}"
            );
        }
    }
}

/// Recomputes `L_Q + α·L_MFI` from the public building blocks, replaying the
/// random draws in the order the actor loss makes them.
#[allow(clippy::too_many_arguments)]
fn scratch_actor_loss(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    s: &Tensor,
    a: &Tensor,
    alpha: f64,
    w: LossWeighting,
    rng: &mut ChaCha8Rng,
    frozen: Option<&(Tensor, Vec<f64>)>,
) -> (f64, (Tensor, Vec<f64>)) {
    let (n, d) = (a.rows(), a.cols());
    let e = gaussian_noise(n, d, rng);
    let (b, t) = sample_times_batch(TimeSampler::Continuous, n, rng);
    let (a_t, v) = interpolate(a, &e, &t).unwrap();
    let (g_pred, dgdt) = policy_jvp(policy, s, &a_t, &b, &t, &v).unwrap();
    let mut tgt = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let k = i * d + j;
            tgt[k] = oracle::target(
                policy.variant(),
                e.data()[k],
                a_t.data()[k],
                v.data()[k],
                b.data()[i],
                t.data()[i],
                dgdt.data()[k],
            );
        }
    }
    let tgt = Tensor::matrix(n, d, tgt).unwrap();
    let sq: Vec<f64> = (0..n)
        .map(|i| {
            let tgt_row = frozen.map_or(tgt.row(i), |f| f.0.row(i));
            (0..d)
                .map(|j| (g_pred.row(i)[j] - tgt_row[j]).powi(2))
                .sum::<f64>()
        })
        .collect();
    let weights: Vec<f64> = match frozen {
        Some(f) => f.1.clone(),
        None => sq.iter().map(|&q| (q + w.c).powf(-w.p)).collect(),
    };
    let l_mfi = sq.iter().zip(&weights).map(|(q, wt)| q * wt).sum::<f64>() / n as f64;
    let e2 = gaussian_noise(n, d, rng);
    let g_out = policy_forward(
        policy,
        s,
        &e2,
        &Tensor::zeros(&[n]),
        &Tensor::filled(&[n], 1.0),
    )
    .unwrap();
    let act: Vec<f64> = e2
        .data()
        .iter()
        .zip(g_out.data())
        .map(|(&e, &g)| oracle::action(policy.variant(), e, g))
        .collect();
    let act = Tensor::matrix(n, d, act).unwrap();
    let l_q = -critic.q_values(s, &act).unwrap().mean();
    (l_q + alpha * l_mfi, (tgt, weights))
}

#[test]
fn actor_loss_matches_scratch_recomputation() {
    for (i, variant) in Variant::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let policy = random_policy(&mut rng, variant);
        let (sd, ad) = (policy.state_dim(), policy.action_dim());
        let critic = random_critic(&mut rng, sd, ad, 2);
        let s = random_tensor(&mut rng, 1, sd, 1.0);
        let a = random_tensor(&mut rng, 1, ad, 0.5);
        let w = LossWeighting::default();
        let alpha = 2.5;
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = r1.clone();
        let pass = actor_loss(
            &policy,
            &critic,
            &s,
            &a,
            alpha,
            TimeSampler::Continuous,
            w,
            &mut r1,
        )
        .unwrap();
        let (want, _) = scratch_actor_loss(&policy, &critic, &s, &a, alpha, w, &mut r2, None);
        assert!(
            (pass.parts.total - want).abs() < 1e-10,
            "{variant}: {} vs {want}",
            pass.parts.total
        );
    }
}

#[test]
fn actor_gradient_treats_target_and_weight_as_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let policy = random_policy(&mut rng, Variant::ResidualAt);
    let (sd, ad) = (policy.state_dim(), policy.action_dim());
    let critic = random_critic(&mut rng, sd, ad, 2);
    let s = random_tensor(&mut rng, 3, sd, 1.0);
    let a = random_tensor(&mut rng, 3, ad, 0.5);
    let w = LossWeighting::default();
    let alpha = 1.7;
    let draws = ChaCha8Rng::seed_from_u64(4);
    let pass = actor_loss(
        &policy,
        &critic,
        &s,
        &a,
        alpha,
        TimeSampler::Continuous,
        w,
        &mut draws.clone(),
    )
    .unwrap();
    let (_, frozen) =
        scratch_actor_loss(&policy, &critic, &s, &a, alpha, w, &mut draws.clone(), None);
    let h = 1e-6;
    let n_w = policy.mlp().layers()[0].weight.len();
    for k in (0..n_w).step_by(7) {
        let bump = |delta: f64| {
            let mut p = policy.clone();
            p.mlp_mut().layers_mut()[0].weight.data_mut()[k] += delta;
            scratch_actor_loss(
                &p,
                &critic,
                &s,
                &a,
                alpha,
                w,
                &mut draws.clone(),
                Some(&frozen),
            )
            .0
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let got = pass.grads.layers()[0].weight.data()[k];
        assert!(
            (got - fd).abs() < 1e-5 * (1.0 + fd.abs()),
            "entry {k}: {got} vs {fd}"
        );
    }
}
