//! Histogram filter over each agent's hidden inner state.
//!
//! Every agent carries a probability vector over a Cartesian grid of
//! hypotheses (intention × attentiveness × responsibility × attention radii).
//! A hypothesis is scored by running one GAMMA update for the agent with that
//! inner state and comparing the predicted position with the observed one.
//! Hypotheses never change over time, so the update is plain Bayes' rule,
//! accumulated in log space.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gamma::{advance, gamma_new_velocity, AgentId, AgentState, GammaParams, InnerState, IntentionHypothesis};
use crate::geometry::Vec2;
use crate::road::{RoadContext, RoutePath};

/// Default observation noise for 0.4 s dataset frames, meters.
pub const DATASET_SIGMA: f64 = 0.1;
/// Default observation noise for 0.1 s simulation steps, meters.
pub const SIMULATION_SIGMA: f64 = 0.05;

/// Longest controller step used when integrating one prediction.
const PREDICTION_SUBSTEP: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("hypothesis space is empty")]
    EmptySpace,
    #[error("responsibility {0} outside [0, 1]")]
    Responsibility(f64),
    #[error("attention radii ({0}, {1}) need 0 <= rear <= front")]
    Radii(f64, f64),
    #[error("sigma must be positive, got {0}")]
    Sigma(f64),
    #[error("agent {0} has no belief")]
    UnknownAgent(AgentId),
}

/// One point of the hypothesis grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub intention: IntentionHypothesis,
    pub attentive: bool,
    pub responsibility: f64,
    pub r_front: f64,
    pub r_rear: f64,
}

impl Hypothesis {
    pub fn inner_state(&self) -> InnerState {
        InnerState::new(self.intention.clone(), self.attentive, self.responsibility, self.r_front, self.r_rear)
    }

    /// Copy of `agent` with its inner state replaced by this hypothesis.
    pub fn apply(&self, agent: &AgentState) -> AgentState {
        let mut out = agent.clone();
        out.inner = self.inner_state();
        out
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/r{}/{}-{}",
            self.intention.label(),
            if self.attentive { "attentive" } else { "distracted" },
            self.responsibility,
            self.r_front,
            self.r_rear
        )
    }
}

/// Cartesian grid of inner-state values. Index order is intention-major:
/// `((intention · A + attentive) · R + responsibility) · D + radii`.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSpace {
    intentions: Vec<IntentionHypothesis>,
    attentive_values: Vec<bool>,
    responsibility_values: Vec<f64>,
    radii_values: Vec<(f64, f64)>,
}

impl HypothesisSpace {
    pub fn new(
        intentions: Vec<IntentionHypothesis>,
        attentive_values: Vec<bool>,
        responsibility_values: Vec<f64>,
        radii_values: Vec<(f64, f64)>,
    ) -> Result<Self, InferenceError> {
        if intentions.is_empty()
            || attentive_values.is_empty()
            || responsibility_values.is_empty()
            || radii_values.is_empty()
        {
            return Err(InferenceError::EmptySpace);
        }
        if let Some(&r) = responsibility_values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(InferenceError::Responsibility(r));
        }
        if let Some(&(f, b)) = radii_values.iter().find(|(f, b)| !(*b >= 0.0 && b <= f)) {
            return Err(InferenceError::Radii(f, b));
        }
        Ok(HypothesisSpace { intentions, attentive_values, responsibility_values, radii_values })
    }

    /// Context-free grid used on trajectory datasets: 2 intentions ×
    /// 2 attention types × 3 responsibilities × 2 radii = 24 hypotheses.
    pub fn dataset() -> Self {
        HypothesisSpace::new(
            vec![IntentionHypothesis::KeepVelocity, IntentionHypothesis::KeepAcceleration],
            vec![true, false],
            vec![0.25, 0.5, 0.75],
            vec![(15.0, 5.0), (8.0, 3.0)],
        )
        .expect("static grid is valid")
    }

    /// Grid used on a road network: the given candidate paths × attention
    /// type, responsibility 0.5 and the default radii.
    pub fn with_paths(paths: &[Arc<RoutePath>], params: &GammaParams) -> Result<Self, InferenceError> {
        HypothesisSpace::new(
            paths.iter().cloned().map(IntentionHypothesis::Path).collect(),
            vec![true, false],
            vec![params.responsibility],
            vec![(params.r_front, params.r_rear)],
        )
    }

    pub fn len(&self) -> usize {
        self.intentions.len() * self.attentive_values.len() * self.responsibility_values.len() * self.radii_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intentions(&self) -> &[IntentionHypothesis] {
        &self.intentions
    }

    pub fn get(&self, index: usize) -> Hypothesis {
        assert!(index < self.len(), "hypothesis index {index} out of range");
        let d = self.radii_values.len();
        let r = self.responsibility_values.len();
        let a = self.attentive_values.len();
        let (r_front, r_rear) = self.radii_values[index % d];
        let rest = index / d;
        let responsibility = self.responsibility_values[rest % r];
        let rest = rest / r;
        let attentive = self.attentive_values[rest % a];
        let intention = self.intentions[rest / a].clone();
        Hypothesis { intention, attentive, responsibility, r_front, r_rear }
    }

    /// Index of the first grid point matching `h`.
    pub fn index_of(&self, h: &Hypothesis) -> Option<usize> {
        (0..self.len()).find(|&i| self.get(i) == *h)
    }

    pub fn iter(&self) -> impl Iterator<Item = Hypothesis> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// Probability vector of one agent over its hypothesis grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentBelief {
    space: Arc<HypothesisSpace>,
    probs: Vec<f64>,
}

impl AgentBelief {
    pub fn uniform(space: Arc<HypothesisSpace>) -> Self {
        let n = space.len();
        AgentBelief { space, probs: vec![1.0 / n as f64; n] }
    }

    /// Belief from explicit weights, normalised. Falls back to uniform if
    /// the weights do not sum to a positive finite number.
    pub fn from_weights(space: Arc<HypothesisSpace>, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), space.len());
        let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
        if !(total > 0.0) || !total.is_finite() {
            return AgentBelief::uniform(space);
        }
        AgentBelief { space, probs: weights.iter().map(|w| w.max(0.0) / total).collect() }
    }

    pub fn space(&self) -> &Arc<HypothesisSpace> {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Argmax index, lowest index on ties.
    pub fn most_likely_index(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn most_likely(&self) -> Hypothesis {
        self.space.get(self.most_likely_index())
    }

    /// Posterior of a hypothesis, 0 when it is not in the grid.
    pub fn probability_of(&self, h: &Hypothesis) -> f64 {
        self.space.index_of(h).map_or(0.0, |i| self.probs[i])
    }

    /// Multiplies in per-hypothesis log-likelihoods and renormalises.
    /// Returns `false` (and resets to uniform) when every likelihood
    /// underflows or the result is not finite.
    pub fn update_log(&mut self, log_likelihoods: &[f64]) -> bool {
        assert_eq!(log_likelihoods.len(), self.probs.len());
        let underflow = f64::MIN_POSITIVE.ln();
        let max_ll = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max_ll >= underflow) {
            *self = AgentBelief::uniform(self.space.clone());
            return false;
        }
        let log_post: Vec<f64> = self
            .probs
            .iter()
            .zip(log_likelihoods)
            .map(|(&p, &ll)| if p > 0.0 { p.ln() + ll } else { f64::NEG_INFINITY })
            .collect();
        let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            *self = AgentBelief::uniform(self.space.clone());
            return false;
        }
        let weights: Vec<f64> = log_post.iter().map(|lp| (lp - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        self.probs = weights.into_iter().map(|w| w / total).collect();
        true
    }

    /// `n` independent draws of hypothesis indices from the posterior.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.probs).expect("normalised belief has positive mass");
        (0..n).map(|_| dist.sample(rng)).collect()
    }
}

/// Beliefs of all tracked agents.
#[derive(Clone, Debug, Default)]
pub struct Belief {
    agents: BTreeMap<AgentId, AgentBelief>,
    /// Grid given to agents seen for the first time.
    default_space: Option<Arc<HypothesisSpace>>,
    /// Number of resets caused by likelihood underflow.
    pub resets: u64,
}

impl Belief {
    pub fn new(default_space: Option<Arc<HypothesisSpace>>) -> Self {
        Belief { agents: BTreeMap::new(), default_space, resets: 0 }
    }

    pub fn insert(&mut self, id: AgentId, belief: AgentBelief) {
        self.agents.insert(id, belief);
    }

    pub fn insert_uniform(&mut self, id: AgentId, space: Arc<HypothesisSpace>) {
        self.agents.insert(id, AgentBelief::uniform(space));
    }

    pub fn remove(&mut self, id: AgentId) -> Option<AgentBelief> {
        self.agents.remove(&id)
    }

    pub fn get(&self, id: AgentId) -> Option<&AgentBelief> {
        self.agents.get(&id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.agents.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.agents.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Writes `step,agent_id,hypothesis_index,probability` rows.
    pub fn write_trace<W: Write + ?Sized>(&self, step: u64, out: &mut W) -> io::Result<()> {
        for (id, b) in &self.agents {
            for (i, p) in b.probs.iter().enumerate() {
                writeln!(out, "{step},{id},{i},{p}")?;
            }
        }
        Ok(())
    }
}

/// Positions observed at one instant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub positions: BTreeMap<AgentId, Vec2>,
}

/// Univariate normal density of the Euclidean error.
pub fn observation_likelihood(observed: Vec2, predicted: Vec2, sigma: f64) -> f64 {
    log_observation_likelihood(observed, predicted, sigma).exp()
}

pub fn log_observation_likelihood(observed: Vec2, predicted: Vec2, sigma: f64) -> f64 {
    let z = observed.distance(predicted) / sigma;
    -0.5 * z * z - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Expected position of `agent` after `dt` if its inner state were
/// `hypothesis`: one GAMMA velocity choice against the frozen `world`,
/// then the controller integrates toward it.
pub fn predict_under_hypothesis(
    hypothesis: &Hypothesis,
    agent: &AgentState,
    world: &[AgentState],
    context: Option<&RoadContext>,
    params: &GammaParams,
    dt: f64,
) -> Vec2 {
    let probe = hypothesis.apply(agent);
    let command = gamma_new_velocity(&probe, world, context, params, dt).velocity;
    integrate(&probe, command, dt).position
}

/// Controller steps of at most [`PREDICTION_SUBSTEP`] toward a fixed command.
pub fn integrate(agent: &AgentState, command: Vec2, dt: f64) -> AgentState {
    let steps = (dt / PREDICTION_SUBSTEP).ceil().max(1.0) as usize;
    let h = dt / steps as f64;
    let mut state = agent.clone();
    for _ in 0..steps {
        state = advance(&state, command, h);
    }
    state.acceleration = (state.velocity - agent.velocity) / dt;
    state
}

/// Bayes update of every agent present in `prev_world` and `observation`.
/// Agents without a belief get a uniform prior over the default grid first;
/// agents no longer observed keep their belief unchanged.
pub fn belief_update(
    belief: &Belief,
    prev_world: &[AgentState],
    observation: &Observation,
    context: Option<&RoadContext>,
    params: &GammaParams,
    sigma: f64,
    dt: f64,
) -> Result<Belief, InferenceError> {
    if !(sigma > 0.0) {
        return Err(InferenceError::Sigma(sigma));
    }
    let mut next = belief.clone();
    let mut work: Vec<(AgentId, &AgentState, Vec2, AgentBelief)> = Vec::new();
    for agent in prev_world {
        let Some(&observed) = observation.positions.get(&agent.id) else { continue };
        let prior = match belief.agents.get(&agent.id) {
            Some(b) => b.clone(),
            None => match &belief.default_space {
                Some(space) => AgentBelief::uniform(space.clone()),
                None => return Err(InferenceError::UnknownAgent(agent.id)),
            },
        };
        work.push((agent.id, agent, observed, prior));
    }
    let updated: Vec<(AgentId, AgentBelief, bool)> = work
        .into_par_iter()
        .map(|(id, agent, observed, mut b)| {
            let lls: Vec<f64> = b
                .space
                .iter()
                .map(|h| {
                    let predicted = predict_under_hypothesis(&h, agent, prev_world, context, params, dt);
                    log_observation_likelihood(observed, predicted, sigma)
                })
                .collect();
            let ok = b.update_log(&lls);
            (id, b, ok)
        })
        .collect();
    for (id, b, ok) in updated {
        if !ok {
            next.resets += 1;
            log::debug!("belief of agent {id} reset after likelihood underflow");
        }
        next.agents.insert(id, b);
    }
    Ok(next)
}

/// Most likely hypothesis of `id`, lowest grid index on ties.
pub fn most_likely(belief: &Belief, id: AgentId) -> Result<Hypothesis, InferenceError> {
    belief.get(id).map(AgentBelief::most_likely).ok_or(InferenceError::UnknownAgent(id))
}

/// `n` independent posterior draws for agent `id`.
pub fn sample_hypotheses<R: Rng + ?Sized>(
    belief: &Belief,
    id: AgentId,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Hypothesis>, InferenceError> {
    let b = belief.get(id).ok_or(InferenceError::UnknownAgent(id))?;
    Ok(b.sample_indices(n, rng).into_iter().map(|i| b.space.get(i)).collect())
}
