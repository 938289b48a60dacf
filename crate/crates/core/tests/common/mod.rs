//! Scenario builders shared by integration tests.
#![allow(dead_code)]

pub mod planner;

use std::sync::{Arc, OnceLock};

use crowdmotion_core::gamma::{
    gamma_new_velocity, gamma_step, AgentState, GammaParams, IntentionHypothesis, Relaxation,
};
use crowdmotion_core::geometry::Vec2;
use crowdmotion_core::kinematics::{builtin_calibrated, ProfileRef};
use crowdmotion_core::road::{PathSource, RoutePath};
use rand::Rng;

/// Built-in profiles, calibrated once per test binary.
pub fn profiles() -> &'static [ProfileRef] {
    static CELL: OnceLock<Vec<ProfileRef>> = OnceLock::new();
    CELL.get_or_init(builtin_calibrated)
}

pub fn profile(name: &str) -> ProfileRef {
    profiles().iter().find(|p| p.name() == name).expect("built-in profile").clone()
}

/// Agents on a circle of radius `radius`, each heading for the antipode
/// along a straight path, at rest.
pub fn antipodal_crossing<R: Rng>(rng: &mut R, n: usize, radius: f64, names: &[&str]) -> Vec<AgentState> {
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let angle = phase + std::f64::consts::TAU * (i as f64 + 0.3 * rng.random::<f64>()) / n as f64;
            let start = Vec2::from_angle(angle) * radius;
            let goal = -start + Vec2::from_angle(rng.random::<f64>() * std::f64::consts::TAU) * (0.1 * radius);
            let dir = (goal - start).normalized().unwrap();
            let path = RoutePath::from_polyline(i, PathSource::Lane, &[start, goal + dir * 10.0]);
            let p = profile(names[rng.random_range(0..names.len())]);
            let mut a = AgentState::new(i as u64 + 1, p.clone(), start, dir.angle(), Vec2::ZERO);
            a.inner.intention = IntentionHypothesis::Path(Arc::new(path));
            a.inner.responsibility = 0.5;
            a.inner.attentive = true;
            a.desired_speed = p.profile.s_max * rng.random_range(0.6..1.0);
            a
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RunStats {
    pub overlaps: usize,
    pub min_separation: f64,
    pub relaxed_steps: usize,
}

/// Runs `steps` GAMMA steps and counts overlapping pairs per step.
pub fn run_and_check(mut agents: Vec<AgentState>, steps: usize, dt: f64, params: &GammaParams) -> RunStats {
    let mut stats = RunStats { min_separation: f64::INFINITY, ..Default::default() };
    for _ in 0..steps {
        if agents.iter().any(|a| gamma_new_velocity(a, &agents, None, params, dt).relaxation != Relaxation::None) {
            stats.relaxed_steps += 1;
        }
        agents = gamma_step(&agents, None, params, dt);
        let polys: Vec<_> = agents.iter().map(|a| a.world_footprint()).collect();
        for i in 0..polys.len() {
            for j in i + 1..polys.len() {
                let sep = polys[i].separation(&polys[j]);
                stats.min_separation = stats.min_separation.min(sep);
                if sep < -1e-9 {
                    stats.overlaps += 1;
                }
            }
        }
    }
    stats
}

/// Agents with random starts in a `side`-meter square, each heading along a
/// straight path to a random goal at least `side / 2` away, at rest. Starts
/// are at least `spacing` apart (center to center).
pub fn random_crossing<R: Rng>(rng: &mut R, n: usize, side: f64, spacing: f64, names: &[&str]) -> Vec<AgentState> {
    let mut starts: Vec<Vec2> = Vec::with_capacity(n);
    while starts.len() < n {
        let p = Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        if starts.iter().all(|q| q.distance(p) >= spacing) {
            starts.push(p);
        }
    }
    starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let goal = loop {
                let g = Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
                if g.distance(start) >= 0.5 * side {
                    break g;
                }
            };
            let dir = (goal - start).normalized().unwrap();
            let path = RoutePath::from_polyline(i, PathSource::Lane, &[start, goal + dir * 10.0]);
            let p = profile(names[rng.random_range(0..names.len())]);
            let mut a = AgentState::new(i as u64 + 1, p.clone(), start, dir.angle(), Vec2::ZERO);
            a.inner.intention = IntentionHypothesis::Path(Arc::new(path));
            a.inner.attentive = true;
            a.inner.responsibility = 0.5;
            a.desired_speed = p.profile.s_max * rng.random_range(0.6..1.0);
            a
        })
        .collect()
}

/// Closed-loop filter trial: a pedestrian follows one of three diverging
/// straight paths, attentive or not, while three distracted pedestrians
/// walk at it head-on along that path. Both move exactly as the filter models them: one velocity
/// decision per 0.4 s frame, integrated by the controller. Returns the
/// posterior of the true hypothesis after each of `steps` observations
/// (observation noise 0.02 m).
pub fn filter_trial(seed: u64, steps: usize, sigma: f64) -> Vec<f64> {
    use crowdmotion_core::inference::{belief_update, integrate, Belief, HypothesisSpace, Observation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = GammaParams::default();
    let dt = 0.4;
    let heading = rng.random::<f64>() * std::f64::consts::TAU;
    let spread = 35f64.to_radians();
    let paths: Vec<Arc<RoutePath>> = [-spread, 0.0, spread]
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let end = Vec2::from_angle(heading + d) * 40.0;
            Arc::new(RoutePath::from_polyline(k, PathSource::Lane, &[Vec2::ZERO, end]))
        })
        .collect();
    let space = Arc::new(HypothesisSpace::with_paths(&paths, &params).unwrap());
    let truth_index = rng.random_range(0..space.len());
    let truth = space.get(truth_index);

    let ped = profile("pedestrian");
    let mut target = AgentState::new(1, ped.clone(), Vec2::ZERO, heading, Vec2::from_angle(heading) * 1.2);
    target.inner = truth.inner_state();
    target.desired_speed = 1.4;
    let IntentionHypothesis::Path(true_path) = &truth.intention else { unreachable!() };
    let mut world = vec![target];
    for (k, s) in [5.0, 12.0, 19.0].into_iter().enumerate() {
        let dir = -true_path.tangent_at(s);
        let start = true_path.point_at(s) + dir.perp() * rng.random_range(-0.3..0.3);
        let mut walker = AgentState::new(k as u64 + 2, ped.clone(), start, dir.angle(), dir * 1.2);
        walker.inner.attentive = false;
        world.push(walker);
    }

    let mut belief = Belief::new(None);
    belief.insert_uniform(1, space);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut posterior = Vec::with_capacity(steps);
    for k in 0..steps {
        let next: Vec<AgentState> =
            world.iter().map(|a| integrate(a, gamma_new_velocity(a, &world, None, &params, dt).velocity, dt)).collect();
        let observed = next[0].position + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        let obs = Observation { timestamp: (k + 1) as f64 * dt, positions: [(1, observed)].into_iter().collect() };
        belief = belief_update(&belief, &world, &obs, None, &params, sigma, dt).unwrap();
        posterior.push(belief.get(1).unwrap().probs()[truth_index]);
        world = next;
    }
    posterior
}
