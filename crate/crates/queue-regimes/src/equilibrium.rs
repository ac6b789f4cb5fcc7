//! Markov-perfect-equilibrium verification: strategy profiles, the tagged
//! customer's chain, optimal-stopping values, the deviation scan for the
//! socially optimal profile, and fixed-rule policy evaluation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{build_state_graph, AnalysisError};
use crate::model::{
    track_position, Params, Position, QueueState, Regime, RegimeError, RenegeSet, TrackEvent,
    Tracked,
};
use crate::optimum::{naor_threshold, OptimumError};

pub const DEVIATION_EPS: f64 = 1e-9;
pub const VALUE_ITER_TOL: f64 = 1e-10;
pub const VALUE_ITER_MAX: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Optimum(#[from] OptimumError),
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error("tagged chain exceeds the node cap of {cap} states")]
    ChainCapExceeded { cap: usize },
    #[error("arrival transition undefined at state {0}; the table regime is truncated too low")]
    MissingArrival(String),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(u64),
}

/// A Markov strategy profile: the set of positions that renege at each
/// non-idle state.
pub trait Profile: Send + Sync {
    fn reneges(&self, x: &QueueState) -> RenegeSet;
}

/// The socially optimal profile: every position above the threshold reneges.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdProfile {
    pub threshold: u32,
}

impl Profile for ThresholdProfile {
    fn reneges(&self, x: &QueueState) -> RenegeSet {
        let positions = (self.threshold + 1..=x.count()).map(Position::new).collect();
        RenegeSet::new(positions).expect("strictly increasing")
    }
}

/// Nobody ever reneges. Only usable for chain construction when something
/// else bounds the count: with unbounded arrivals the tagged chain has no
/// finite closure and construction reports a cap overflow.
#[derive(Debug, Clone, Copy)]
pub struct NeverRenege;

impl Profile for NeverRenege {
    fn reneges(&self, _x: &QueueState) -> RenegeSet {
        RenegeSet::empty()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A deterministic pseudo-random Markov profile: each state gets a fixed
/// renege subset derived from (seed, state key). Positions above `cap`
/// always renege, which keeps every tagged chain finite.
#[derive(Debug, Clone, Copy)]
pub struct RandomProfile {
    pub seed: u64,
    pub cap: u32,
}

impl Profile for RandomProfile {
    fn reneges(&self, x: &QueueState) -> RenegeSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(x.key().as_bytes()));
        let positions = (1..=x.count())
            .filter(|&pos| pos > self.cap || rng.gen_bool(0.5))
            .map(Position::new)
            .collect();
        RenegeSet::new(positions).expect("strictly increasing")
    }
}

/// A regime state together with the tagged customer's position in it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TaggedState {
    pub state: QueueState,
    pub position: Position,
}

impl std::fmt::Display for TaggedState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} @ {}", self.state, self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Next {
    Served,
    To(usize),
}

/// The tagged customer's round-to-round transition structure under a fixed
/// opponent profile: per round an arrival or service event, then the
/// simultaneous reneging of the opponents prescribed at the post-event
/// state, then the tagged customer's own stay/renege decision.
pub struct TaggedChain {
    nodes: Vec<TaggedState>,
    arrival: Vec<Next>,
    service: Vec<Next>,
}

impl TaggedChain {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TaggedState] {
        &self.nodes
    }

    pub fn index_of(&self, s: &TaggedState) -> Option<usize> {
        self.nodes.iter().position(|t| t == s)
    }
}

fn step(
    regime: &dyn Regime,
    profile: &dyn Profile,
    s: &TaggedState,
    event_is_arrival: bool,
) -> Result<Option<TaggedState>, EquilibriumError> {
    let (post_event, tracked) = if event_is_arrival {
        let (x1, placement) = regime
            .try_arrive(&s.state)
            .ok_or_else(|| EquilibriumError::MissingArrival(s.state.to_string()))?;
        let t = track_position(
            s.position,
            TrackEvent::Arrival { placement },
            &RenegeSet::empty(),
        );
        (x1, t)
    } else {
        if s.position.get() == 1 {
            return Ok(None); // served
        }
        let x1 = regime.serve(&s.state)?;
        (x1, Tracked::At(Position::new(s.position.get() - 1)))
    };
    let i1 = match tracked {
        Tracked::At(p) => p,
        Tracked::Served => unreachable!("service at position 1 handled above"),
    };
    let opponents = profile.reneges(&post_event).without(i1);
    let settled = regime.renege_set(&post_event, &opponents)?;
    let i2 = Position::new(i1.get() - opponents.count_below(i1));
    debug_assert!(i2.get() <= settled.count());
    Ok(Some(TaggedState {
        state: settled,
        position: i2,
    }))
}

/// Closes the seed set under rounds. The profile must force reneging above
/// some cap so the closure is finite; `node_cap` guards against blowup.
pub fn build_tagged_chain(
    regime: &dyn Regime,
    profile: &dyn Profile,
    seeds: &[TaggedState],
    node_cap: usize,
) -> Result<TaggedChain, EquilibriumError> {
    let mut index: HashMap<TaggedState, usize> = HashMap::new();
    let mut nodes: Vec<TaggedState> = Vec::new();
    let intern = |s: TaggedState,
                      nodes: &mut Vec<TaggedState>,
                      index: &mut HashMap<TaggedState, usize>|
     -> Result<usize, EquilibriumError> {
        if let Some(&i) = index.get(&s) {
            return Ok(i);
        }
        if nodes.len() >= node_cap {
            return Err(EquilibriumError::ChainCapExceeded { cap: node_cap });
        }
        let i = nodes.len();
        index.insert(s.clone(), i);
        nodes.push(s);
        Ok(i)
    };
    for s in seeds {
        intern(s.clone(), &mut nodes, &mut index)?;
    }
    let mut arrival: Vec<Next> = Vec::new();
    let mut service: Vec<Next> = Vec::new();
    let mut cursor = 0;
    while cursor < nodes.len() {
        let s = nodes[cursor].clone();
        let arr = match step(regime, profile, &s, true)? {
            Some(t) => Next::To(intern(t, &mut nodes, &mut index)?),
            None => Next::Served,
        };
        let srv = match step(regime, profile, &s, false)? {
            Some(t) => Next::To(intern(t, &mut nodes, &mut index)?),
            None => Next::Served,
        };
        arrival.push(arr);
        service.push(srv);
        cursor += 1;
    }
    Ok(TaggedChain {
        nodes,
        arrival,
        service,
    })
}

/// Seeds covering every (state, position) pair of the bounded state graph.
pub fn tagged_seeds(
    regime: &dyn Regime,
    n_max: u32,
    node_cap: usize,
) -> Result<Vec<TaggedState>, EquilibriumError> {
    let graph = build_state_graph(regime, n_max, node_cap)?;
    let mut seeds = Vec::new();
    for x in graph.nodes() {
        for i in 1..=x.count() {
            seeds.push(TaggedState {
                state: x.clone(),
                position: Position::new(i),
            });
        }
    }
    Ok(seeds)
}

/// Values of the tagged customer's stopping problem.
pub struct StoppingValue {
    /// V = max(0, continuation): the optimal value at each chain node.
    pub values: Vec<f64>,
    /// Expected payoff of staying this round and continuing optimally.
    pub continuation: Vec<f64>,
}

/// Least fixpoint of V(s) = max(0, -c/(lambda+mu) + p V(arrival) + q V(service)),
/// with a served transition contributing the reward. Value iteration from
/// zero is monotone nondecreasing and bounded by the reward.
pub fn optimal_stopping_value(
    chain: &TaggedChain,
    params: &Params,
    tol: f64,
    max_iter: u64,
) -> Result<StoppingValue, EquilibriumError> {
    let (p, q) = (params.p(), params.q());
    let round_cost = params.round_cost();
    let reward = params.reward();
    let m = chain.len();
    let mut values = vec![0.0f64; m];
    let mut continuation = vec![0.0f64; m];
    for sweep in 0..max_iter {
        let mut delta: f64 = 0.0;
        for s in 0..m {
            let va = match chain.arrival[s] {
                Next::Served => reward,
                Next::To(j) => values[j],
            };
            let vs = match chain.service[s] {
                Next::Served => reward,
                Next::To(j) => values[j],
            };
            let cont = -round_cost + p * va + q * vs;
            continuation[s] = cont;
            let new = cont.max(0.0);
            delta = delta.max((new - values[s]).abs());
            values[s] = new;
        }
        if delta <= tol {
            let _ = sweep;
            return Ok(StoppingValue {
                values,
                continuation,
            });
        }
    }
    Err(EquilibriumError::NoConvergence(max_iter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Stay,
    Renege,
}

#[derive(Debug, Clone, Serialize)]
pub struct Deviation {
    pub state: QueueState,
    pub position: u32,
    pub prescribed: Action,
    pub alternative: Action,
    /// Expected value of staying this round and continuing optimally.
    pub staying_value: f64,
    pub value_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EqVerdict {
    Mpe,
    DeviationFound,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub regime: String,
    pub verdict: EqVerdict,
    pub n_star: u32,
    /// Knife-edge flag from the threshold computation; strict-inequality
    /// arguments need D away from zero, so ties are reported, not judged.
    pub tie: bool,
    pub deviations: Vec<Deviation>,
    pub bound: u32,
    pub chain_len: usize,
}

/// Checks that the socially optimal profile (positions above n* renege) is a
/// Markov perfect equilibrium: staying must be optimal at positions <= n*,
/// reneging at positions above.
pub fn verify_mpe(
    regime: &dyn Regime,
    params: &Params,
    n_max: u32,
    node_cap: usize,
) -> Result<EquilibriumReport, EquilibriumError> {
    let threshold = naor_threshold(params, 64)?;
    let n_star = threshold.n_star;
    let profile = ThresholdProfile { threshold: n_star };
    let seeds = tagged_seeds(regime, n_max, node_cap)?;
    let chain = build_tagged_chain(regime, &profile, &seeds, node_cap)?;
    let sv = optimal_stopping_value(&chain, params, VALUE_ITER_TOL, VALUE_ITER_MAX)?;
    let mut deviations = Vec::new();
    for (idx, s) in chain.nodes().iter().enumerate() {
        let cont = sv.continuation[idx];
        if s.position.get() <= n_star {
            if cont < -DEVIATION_EPS {
                deviations.push(Deviation {
                    state: s.state.clone(),
                    position: s.position.get(),
                    prescribed: Action::Stay,
                    alternative: Action::Renege,
                    staying_value: cont,
                    value_gap: -cont,
                });
            }
        } else if cont > DEVIATION_EPS {
            deviations.push(Deviation {
                state: s.state.clone(),
                position: s.position.get(),
                prescribed: Action::Renege,
                alternative: Action::Stay,
                staying_value: cont,
                value_gap: cont,
            });
        }
    }
    let verdict = if deviations.is_empty() {
        EqVerdict::Mpe
    } else {
        EqVerdict::DeviationFound
    };
    Ok(EquilibriumReport {
        regime: regime.name().to_string(),
        verdict,
        n_star,
        tie: threshold.tie,
        deviations,
        bound: n_max,
        chain_len: chain.len(),
    })
}

/// Evaluated values of the fixed rule "stay iff position <= stay_threshold"
/// against a fixed opponent profile. No optimization: linear policy
/// evaluation on the finite chain.
pub struct PolicyValue {
    pub chain: TaggedChain,
    pub values: Vec<f64>,
    pub stay_threshold: u32,
}

impl PolicyValue {
    pub fn value(&self, s: &TaggedState) -> Option<f64> {
        self.chain.index_of(s).map(|i| self.values[i])
    }
}

pub fn policy_value(
    regime: &dyn Regime,
    params: &Params,
    opponents: &dyn Profile,
    stay_threshold: u32,
    n_max: u32,
    node_cap: usize,
) -> Result<PolicyValue, EquilibriumError> {
    let seeds = tagged_seeds(regime, n_max, node_cap)?;
    let chain = build_tagged_chain(regime, opponents, seeds.as_slice(), node_cap)?;
    let (p, q) = (params.p(), params.q());
    let round_cost = params.round_cost();
    let reward = params.reward();
    let m = chain.len();
    let mut values = vec![0.0f64; m];
    let mut converged = false;
    for _ in 0..VALUE_ITER_MAX {
        let mut delta: f64 = 0.0;
        for s in 0..m {
            if chain.nodes[s].position.get() > stay_threshold {
                continue; // the rule reneges here: value stays 0
            }
            let va = match chain.arrival[s] {
                Next::Served => reward,
                Next::To(j) => values[j],
            };
            let vs = match chain.service[s] {
                Next::Served => reward,
                Next::To(j) => values[j],
            };
            let new = -round_cost + p * va + q * vs;
            delta = delta.max((new - values[s]).abs());
            values[s] = new;
        }
        if delta <= VALUE_ITER_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EquilibriumError::NoConvergence(VALUE_ITER_MAX));
    }
    Ok(PolicyValue {
        chain,
        values,
        stay_threshold,
    })
}
