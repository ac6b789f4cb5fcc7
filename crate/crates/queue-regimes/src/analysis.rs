//! Bounded reachability analysis: the state graph explored from idle, the
//! ancestor-max-count fixpoint deciding maximality with witness paths, and
//! the universal-optimality condition with its preemption corollary.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Position, QueueState, Regime};

pub const DEFAULT_N_MAX: u32 = 8;
pub const DEFAULT_NODE_CAP: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("state graph exceeds the node cap of {cap} nodes within count bound {bound}")]
    NodeCapExceeded { cap: usize, bound: u32 },
    #[error("state {0} not present in the graph")]
    UnknownState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeLabel {
    Arrival,
    Service,
    Renege(u32),
}

impl std::fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeLabel::Arrival => write!(f, "a"),
            EdgeLabel::Service => write!(f, "s"),
            EdgeLabel::Renege(i) => write!(f, "r{i}"),
        }
    }
}

/// The set of states with count <= bound reachable from idle via arrivals,
/// services and single reneges, with arrivals suppressed at the bound.
/// Nodes are ordered by canonical serialization (count, then key).
pub struct StateGraph {
    nodes: Vec<QueueState>,
    index: HashMap<QueueState, usize>,
    edges: Vec<Vec<(EdgeLabel, usize)>>,
    bound: u32,
}

pub fn build_state_graph(
    regime: &dyn Regime,
    n_max: u32,
    node_cap: usize,
) -> Result<StateGraph, AnalysisError> {
    assert!(n_max >= 1);
    let idle = regime.idle();
    let mut seen: HashMap<QueueState, ()> = HashMap::new();
    let mut queue = VecDeque::new();
    seen.insert(idle.clone(), ());
    queue.push_back(idle);
    let mut discovered = Vec::new();
    while let Some(x) = queue.pop_front() {
        let push = |y: QueueState, seen: &mut HashMap<QueueState, ()>,
                        queue: &mut VecDeque<QueueState>|
         -> Result<(), AnalysisError> {
            if !seen.contains_key(&y) {
                if seen.len() >= node_cap {
                    return Err(AnalysisError::NodeCapExceeded {
                        cap: node_cap,
                        bound: n_max,
                    });
                }
                seen.insert(y.clone(), ());
                queue.push_back(y);
            }
            Ok(())
        };
        if x.count() < n_max {
            if let Some((y, _)) = regime.try_arrive(&x) {
                push(y, &mut seen, &mut queue)?;
            }
        }
        if x.count() >= 1 {
            push(regime.serve(&x).expect("non-idle"), &mut seen, &mut queue)?;
            for i in 1..=x.count() {
                let y = regime.renege_one(&x, Position::new(i)).expect("in range");
                push(y, &mut seen, &mut queue)?;
            }
        }
        discovered.push(x);
    }

    let mut nodes = discovered;
    nodes.sort();
    let index: HashMap<QueueState, usize> =
        nodes.iter().cloned().enumerate().map(|(i, x)| (x, i)).collect();
    let mut edges = Vec::with_capacity(nodes.len());
    for x in &nodes {
        let mut out = Vec::new();
        if x.count() < n_max {
            if let Some((y, _)) = regime.try_arrive(x) {
                out.push((EdgeLabel::Arrival, index[&y]));
            }
        }
        if x.count() >= 1 {
            out.push((EdgeLabel::Service, index[&regime.serve(x).unwrap()]));
            for i in 1..=x.count() {
                let y = regime.renege_one(x, Position::new(i)).unwrap();
                out.push((EdgeLabel::Renege(i), index[&y]));
            }
        }
        edges.push(out);
    }
    Ok(StateGraph {
        nodes,
        index,
        edges,
        bound: n_max,
    })
}

impl StateGraph {
    pub fn nodes(&self) -> &[QueueState] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bound(&self) -> u32 {
        self.bound
    }

    pub fn index_of(&self, x: &QueueState) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn edges_from(&self, i: usize) -> &[(EdgeLabel, usize)] {
        &self.edges[i]
    }

    pub fn contains(&self, x: &QueueState) -> bool {
        self.index.contains_key(x)
    }
}

/// Least fixpoint of A(x) = max(n(x), max over non-idle alpha/xi-predecessors
/// p of A(p)), with provenance for witness reconstruction. A(x) is the
/// largest count seen on any arrival/service path of non-idle states ending
/// at x within the bound.
pub struct AncestorCounts {
    values: Vec<u32>,
    pred: Vec<Option<(usize, EdgeLabel)>>,
}

impl AncestorCounts {
    pub fn value(&self, node: usize) -> u32 {
        self.values[node]
    }
}

pub fn ancestor_max_count(graph: &StateGraph) -> AncestorCounts {
    let n = graph.len();
    let mut values: Vec<u32> = graph.nodes().iter().map(|x| x.count()).collect();
    let mut pred: Vec<Option<(usize, EdgeLabel)>> = vec![None; n];
    let mut in_list = vec![false; n];
    let mut worklist: VecDeque<usize> = VecDeque::new();
    for (i, x) in graph.nodes().iter().enumerate() {
        if !x.is_idle() {
            worklist.push_back(i);
            in_list[i] = true;
        }
    }
    while let Some(u) = worklist.pop_front() {
        in_list[u] = false;
        for &(label, v) in graph.edges_from(u) {
            if !matches!(label, EdgeLabel::Arrival | EdgeLabel::Service) {
                continue;
            }
            if graph.nodes()[v].is_idle() {
                continue;
            }
            if values[u] > values[v] {
                values[v] = values[u];
                pred[v] = Some((u, label));
                if !in_list[v] {
                    worklist.push_back(v);
                    in_list[v] = true;
                }
            }
        }
    }
    AncestorCounts { values, pred }
}

/// A non-idle arrival/service path witnessing non-maximality:
/// n(states[0]) > n(states.last()).
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub states: Vec<QueueState>,
    pub labels: Vec<EdgeLabel>,
}

impl Witness {
    /// Re-executes the path under the regime and checks the definition's
    /// requirements. Used by tests and by debug assertions.
    pub fn check(&self, regime: &dyn Regime) -> Result<(), String> {
        if self.states.len() < 2 || self.labels.len() != self.states.len() - 1 {
            return Err("witness must have at least one step".into());
        }
        if self.states[0].count() <= self.states.last().unwrap().count() {
            return Err("witness must start at a strictly larger count".into());
        }
        for (k, label) in self.labels.iter().enumerate() {
            let cur = &self.states[k];
            let next = &self.states[k + 1];
            if cur.is_idle() || next.is_idle() {
                return Err(format!("witness passes through idle at step {k}"));
            }
            let applied = match label {
                EdgeLabel::Arrival => regime
                    .try_arrive(cur)
                    .map(|(y, _)| y)
                    .ok_or_else(|| format!("arrival undefined at step {k}"))?,
                EdgeLabel::Service => regime
                    .serve(cur)
                    .map_err(|e| format!("service failed at step {k}: {e}"))?,
                EdgeLabel::Renege(_) => return Err("witness may only use arrivals/services".into()),
            };
            if applied != *next {
                return Err(format!("step {k} does not reproduce the claimed state"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum MaximalityVerdict {
    MaximalUpToBound,
    NonMaximal { witness: Witness },
}

impl MaximalityVerdict {
    pub fn is_maximal_up_to_bound(&self) -> bool {
        matches!(self, MaximalityVerdict::MaximalUpToBound)
    }
}

fn reconstruct_witness(graph: &StateGraph, anc: &AncestorCounts, node: usize) -> Witness {
    let mut rev_states = vec![graph.nodes()[node].clone()];
    let mut rev_labels = Vec::new();
    let mut cur = node;
    while let Some((p, label)) = anc.pred[cur] {
        rev_labels.push(label);
        rev_states.push(graph.nodes()[p].clone());
        cur = p;
    }
    rev_states.reverse();
    rev_labels.reverse();
    Witness {
        states: rev_states,
        labels: rev_labels,
    }
}

/// Decides maximality of a node relative to the bound. The idle state is
/// vacuously maximal: witness paths consist of non-idle states only.
pub fn is_maximal_with(
    graph: &StateGraph,
    anc: &AncestorCounts,
    x: &QueueState,
) -> Result<MaximalityVerdict, AnalysisError> {
    let node = graph
        .index_of(x)
        .ok_or_else(|| AnalysisError::UnknownState(x.to_string()))?;
    if x.is_idle() || anc.value(node) <= x.count() {
        return Ok(MaximalityVerdict::MaximalUpToBound);
    }
    Ok(MaximalityVerdict::NonMaximal {
        witness: reconstruct_witness(graph, anc, node),
    })
}

pub fn is_maximal(graph: &StateGraph, x: &QueueState) -> Result<MaximalityVerdict, AnalysisError> {
    let anc = ancestor_max_count(graph);
    is_maximal_with(graph, &anc, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OptimalityVerdict {
    PassUpToBound,
    ViolationFound,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackPlacementViolation {
    /// Non-maximal state whose arrival is placed at the back of the queue.
    pub state: QueueState,
    pub witness: Witness,
}

/// Outcome of the universal-optimality condition check: every non-maximal
/// state must place arrivals strictly before position n+1.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub regime: String,
    pub verdict: OptimalityVerdict,
    pub violations: Vec<BackPlacementViolation>,
    /// Non-idle states where an arrival preempts the customer in service.
    pub preemption_states: Vec<QueueState>,
    /// Necessary condition: a regime passing the check must preempt somewhere.
    pub preemption_occurs: bool,
    pub bound: u32,
    pub node_count: usize,
}

pub fn check_universal_optimality(
    regime: &dyn Regime,
    n_max: u32,
    node_cap: usize,
) -> Result<OptimalityReport, AnalysisError> {
    let graph = build_state_graph(regime, n_max, node_cap)?;
    let anc = ancestor_max_count(&graph);
    let mut violations = Vec::new();
    let mut preemption_states = Vec::new();
    for (i, x) in graph.nodes().iter().enumerate() {
        if x.is_idle() {
            continue;
        }
        let placement = match regime.placement(x) {
            Some(p) => p,
            None => continue, // truncated table: no arrival, nothing to place
        };
        if placement.get() == 1 {
            preemption_states.push(x.clone());
        }
        if placement.get() == x.count() + 1 && anc.value(i) > x.count() {
            let witness = reconstruct_witness(&graph, &anc, i);
            debug_assert!(witness.check(regime).is_ok());
            violations.push(BackPlacementViolation {
                state: x.clone(),
                witness,
            });
        }
    }
    let verdict = if violations.is_empty() {
        OptimalityVerdict::PassUpToBound
    } else {
        OptimalityVerdict::ViolationFound
    };
    Ok(OptimalityReport {
        regime: regime.name().to_string(),
        verdict,
        preemption_occurs: !preemption_states.is_empty(),
        violations,
        preemption_states,
        bound: n_max,
        node_count: graph.len(),
    })
}

/// DOT rendering of the state graph. Back-placement states are drawn as
/// filled boxes, states maximal up to the bound with doubled borders.
pub fn to_dot(graph: &StateGraph, regime: &dyn Regime) -> String {
    let anc = ancestor_max_count(graph);
    let mut out = String::from("digraph regime {\n  rankdir=LR;\n");
    for (i, x) in graph.nodes().iter().enumerate() {
        let maximal = x.is_idle() || anc.value(i) <= x.count();
        let back = regime
            .placement(x)
            .is_some_and(|p| p.get() == x.count() + 1);
        let mut attrs = format!("label=\"{} ({})\"", x.label(), x.count());
        if back {
            attrs.push_str(", shape=box, style=filled, fillcolor=lightgoldenrod");
        }
        if maximal {
            attrs.push_str(", peripheries=2");
        }
        let _ = writeln!(out, "  n{i} [{attrs}];");
    }
    for (i, outgoing) in graph.edges.iter().enumerate() {
        for (label, j) in outgoing {
            let _ = writeln!(out, "  n{i} -> n{j} [label=\"{label}\"];");
        }
    }
    out.push_str("}\n");
    out
}
