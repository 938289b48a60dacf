//! Planner scenario builders and the exhaustive-enumeration oracle.

use std::sync::Arc;

use super::profile;
use crowdmotion_core::gamma::{AgentState, GammaParams, IntentionHypothesis};
use crowdmotion_core::geometry::Vec2;
use crowdmotion_core::inference::{AgentBelief, Belief, HypothesisSpace};
use crowdmotion_core::planner::{
    plan, reward, transition, DrivingAction, EgoState, PlanModel, PlanOutcome, PlannerState, SearchConfig,
};
use crowdmotion_core::road::{PathSource, RoutePath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 1.0 / 3.0;

pub fn route() -> Arc<RoutePath> {
    Arc::new(RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(120.0, 0.0)]))
}

pub fn ego(s: f64, speed: f64) -> EgoState {
    EgoState::on_path(profile("car"), route(), s, speed)
}

/// Exo walking a straight path from `from` in direction `dir` at `speed`.
pub fn walker(id: u64, name: &str, from: Vec2, dir: Vec2, speed: f64, attentive: bool) -> AgentState {
    let path = RoutePath::from_polyline(id as usize, PathSource::Lane, &[from, from + dir * 60.0]);
    let mut a = AgentState::new(id, profile(name), from, dir.angle(), dir * speed);
    a.inner.intention = IntentionHypothesis::Path(Arc::new(path));
    a.inner.attentive = attentive;
    a.desired_speed = speed.max(0.5);
    a
}

pub fn exact_search(depth: usize) -> SearchConfig {
    SearchConfig {
        scenarios: 1,
        depth,
        noise: 0.0,
        max_expansions: 100_000,
        time_budget: None,
        ..SearchConfig::default()
    }
}

/// Best discounted return over every action sequence of length `depth`,
/// for each first action. Collisions end a sequence.
pub fn enumerate(state: &PlannerState, depth: usize, discount: f64, params: &GammaParams) -> [f64; 3] {
    let mut best = [f64::NEG_INFINITY; 3];
    for code in 0..3usize.pow(depth as u32) {
        let seq: Vec<DrivingAction> =
            (0..depth).map(|k| DrivingAction::ALL[(code / 3usize.pow(k as u32)) % 3]).collect();
        let mut s = state.clone();
        let mut total = 0.0;
        let mut weight = 1.0;
        for &a in &seq {
            let out = transition(&s, a, &[], DT, None, params);
            total += weight * reward(a, out.state.ego.speed, out.impact_speed);
            if out.impact_speed.is_some() {
                break;
            }
            weight *= discount;
            s = out.state;
        }
        let first = seq[0].index();
        best[first] = best[first].max(total);
    }
    best
}

pub fn random_state(rng: &mut ChaCha8Rng) -> PlannerState {
    let names = ["pedestrian", "bicycle", "car"];
    let n = rng.random_range(1..=3);
    let exos = (0..n)
        .map(|i| {
            let name = names[rng.random_range(0..3)];
            let at = Vec2::new(rng.random_range(14.0..32.0), rng.random_range(-7.0..7.0));
            let dir = Vec2::from_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            let speed = rng.random_range(0.0..0.8) * profile(name).profile.s_max;
            let mut e = walker(i + 1, name, at, dir, speed, rng.random_bool(0.5));
            if rng.random_bool(0.3) {
                e.inner.intention = IntentionHypothesis::KeepVelocity;
            }
            e
        })
        .collect();
    PlannerState { ego: ego(10.0, rng.random_range(0.0..6.0)), exos }
}

/// Point-mass belief on each exo's own inner state, over a grid that also
/// holds the opposite attention type.
pub fn certain_belief(state: &PlannerState) -> Belief {
    let mut belief = Belief::new(None);
    for e in &state.exos {
        let space = HypothesisSpace::new(
            vec![e.inner.intention.clone()],
            vec![!e.inner.attentive, e.inner.attentive],
            vec![e.inner.responsibility],
            vec![(e.inner.r_front, e.inner.r_rear)],
        )
        .unwrap();
        belief.insert(e.id, AgentBelief::from_weights(Arc::new(space), &[0.0, 1.0]));
    }
    belief
}

pub fn run_plan(state: &PlannerState, belief: &Belief, config: &SearchConfig, seed: u64) -> PlanOutcome {
    let params = GammaParams::default();
    let model = PlanModel { context: None, params: &params, dt: DT };
    plan(belief, state, &model, config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}
