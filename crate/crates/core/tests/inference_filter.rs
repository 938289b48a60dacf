//! Histogram filter behaviour on closed-loop and synthetic inputs.

mod common;

use std::sync::Arc;

use common::{filter_trial, profile};
use crowdmotion_core::gamma::{AgentState, GammaParams, IntentionHypothesis};
use crowdmotion_core::geometry::Vec2;
use crowdmotion_core::inference::{
    belief_update, most_likely, predict_under_hypothesis, sample_hypotheses, AgentBelief, Belief, HypothesisSpace,
    InferenceError, Observation,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space_of(n: usize) -> Arc<HypothesisSpace> {
    let radii = (0..n).map(|k| (10.0 + k as f64, 1.0)).collect();
    Arc::new(HypothesisSpace::new(vec![IntentionHypothesis::KeepVelocity], vec![true], vec![0.5], radii).unwrap())
}

#[test]
fn closed_loop_posterior_concentrates_on_truth() {
    for seed in 0..20 {
        let post = filter_trial(seed, 20, 0.1);
        assert!(post[19] > 0.9, "seed {seed}: {:?}", post);
    }
}

#[test]
fn attentive_prediction_swerves_where_distracted_does_not() {
    let ped = profile("pedestrian");
    let a = AgentState::new(1, ped.clone(), Vec2::ZERO, 0.0, Vec2::new(1.2, 0.0));
    // Oncoming walker slightly off the axis, ignoring everyone.
    let mut b = AgentState::new(2, ped, Vec2::new(4.0, 0.2), std::f64::consts::PI, Vec2::new(-1.2, 0.0));
    b.inner.attentive = false;
    let world = [a.clone(), b];
    let space = HypothesisSpace::dataset();
    let attentive = space.get(2); // keep velocity, attentive, r 0.5
    let distracted = space.get(8); // keep velocity, distracted, r 0.5
    assert!(attentive.attentive && !distracted.attentive);
    let params = GammaParams::default();
    let pa = predict_under_hypothesis(&attentive, &a, &world, None, &params, 0.4);
    let pd = predict_under_hypothesis(&distracted, &a, &world, None, &params, 0.4);
    assert!((pd - Vec2::new(0.48, 0.0)).norm() < 1e-9);
    assert!((pa.y - pd.y).abs() > 1e-3, "{pa:?} vs {pd:?}");
}

#[test]
fn uniform_sampling_frequencies() {
    let mut belief = Belief::new(None);
    belief.insert_uniform(7, space_of(4));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = sample_hypotheses(&belief, 7, 10_000, &mut rng).unwrap();
    let space = belief.get(7).unwrap().space().clone();
    for i in 0..4 {
        let h = space.get(i);
        let freq = draws.iter().filter(|d| **d == h).count() as f64 / 1e4;
        assert!((freq - 0.25).abs() < 0.02, "hypothesis {i}: {freq}");
    }
}

#[test]
fn new_agents_get_uniform_prior_and_unknown_ones_error() {
    let ped = profile("pedestrian");
    let a = AgentState::new(3, ped, Vec2::ZERO, 0.0, Vec2::new(1.0, 0.0));
    let obs = Observation { timestamp: 0.4, positions: [(3, Vec2::new(0.4, 0.0))].into_iter().collect() };
    let params = GammaParams::default();
    let empty = Belief::new(None);
    assert_eq!(
        belief_update(&empty, std::slice::from_ref(&a), &obs, None, &params, 0.1, 0.4).unwrap_err(),
        InferenceError::UnknownAgent(3)
    );
    let with_default = Belief::new(Some(Arc::new(HypothesisSpace::dataset())));
    let b = belief_update(&with_default, &[a], &obs, None, &params, 0.1, 0.4).unwrap();
    let probs = b.get(3).unwrap().probs();
    assert_eq!(probs.len(), 24);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // Keep-velocity hypotheses predict the observation exactly.
    assert!(most_likely(&b, 3).unwrap().intention == IntentionHypothesis::KeepVelocity);
}

proptest! {
    #[test]
    fn updates_keep_normalisation(
        weights in prop::collection::vec(0.0f64..1.0, 2..12),
        lls in prop::collection::vec(-800.0f64..5.0, 12),
    ) {
        let n = weights.len();
        let mut b = AgentBelief::from_weights(space_of(n), &weights);
        b.update_log(&lls[..n]);
        let sum: f64 = b.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(b.probs().iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn smaller_error_never_loses_with_equal_prior(
        errors in prop::collection::vec(0.0f64..1.0, 2..8),
        sigma in 0.05f64..0.5,
    ) {
        use crowdmotion_core::inference::log_observation_likelihood;
        let n = errors.len();
        let mut b = AgentBelief::uniform(space_of(n));
        let lls: Vec<f64> = errors
            .iter()
            .map(|e| log_observation_likelihood(Vec2::new(*e, 0.0), Vec2::ZERO, sigma))
            .collect();
        b.update_log(&lls);
        for i in 0..n {
            for j in 0..n {
                if errors[i] < errors[j] {
                    prop_assert!(b.probs()[i] >= b.probs()[j]);
                }
            }
        }
    }
}
