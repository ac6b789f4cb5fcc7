//! Core contract shared by all regimes: model parameters, queue states,
//! positions, renege sets, the regime transition interface, and the
//! tagged-customer position bookkeeping.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RegimeError {
    #[error("service event at the idle state")]
    IdleService,
    #[error("position {position} out of range for a state with {count} customers")]
    PositionOutOfRange { position: u32, count: u32 },
    #[error("invalid renege set: {0}")]
    InvalidRenegeSet(String),
}

#[derive(Debug, Error, PartialEq)]
#[error("parameters must be strictly positive finite reals: {0}")]
pub struct ParamError(pub String);

/// Model parameters: arrival rate, service rate, waiting cost rate, service reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    lambda: f64,
    mu: f64,
    cost: f64,
    reward: f64,
}

impl Params {
    pub fn new(lambda: f64, mu: f64, cost: f64, reward: f64) -> Result<Self, ParamError> {
        for (name, v) in [
            ("lambda", lambda),
            ("mu", mu),
            ("cost", cost),
            ("reward", reward),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ParamError(format!("{name} = {v}")));
            }
        }
        Ok(Params {
            lambda,
            mu,
            cost,
            reward,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    /// Probability that a round starts with an arrival.
    pub fn p(&self) -> f64 {
        self.lambda / (self.lambda + self.mu)
    }

    /// Probability that a round starts with a (possibly fictitious) service.
    pub fn q(&self) -> f64 {
        self.mu / (self.lambda + self.mu)
    }

    /// Total event rate; the expected round duration is its reciprocal.
    pub fn round_rate(&self) -> f64 {
        self.lambda + self.mu
    }

    /// Expected waiting cost charged per round.
    pub fn round_cost(&self) -> f64 {
        self.cost / self.round_rate()
    }
}

/// A regime state: a canonical serialized payload plus the customer count.
///
/// The key is the regime's canonical serialization of the state; two states
/// are equal iff their counts and keys are equal, which is what graph search
/// relies on for deduplication. Ordering is by (count, key) and gives the
/// deterministic node order used everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct QueueState {
    count: u32,
    key: String,
}

impl QueueState {
    pub fn new(count: u32, key: impl Into<String>) -> Self {
        QueueState {
            count,
            key: key.into(),
        }
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn is_idle(&self) -> bool {
        self.count == 0
    }

    /// Human-readable label; the idle state's key may be empty.
    pub fn label(&self) -> &str {
        if self.key.is_empty() {
            "idle"
        } else {
            &self.key
        }
    }
}

impl std::fmt::Display for QueueState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (n={})", self.label(), self.count)
    }
}

/// Queue rank of a customer; position 1 is the customer in service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Position(u32);

impl Position {
    pub fn new(value: u32) -> Self {
        assert!(value >= 1, "positions are 1-based");
        Position(value)
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A strictly increasing set of positions that renege simultaneously.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RenegeSet(Vec<Position>);

impl RenegeSet {
    pub fn empty() -> Self {
        RenegeSet(Vec::new())
    }

    pub fn new(mut positions: Vec<Position>) -> Result<Self, RegimeError> {
        positions.sort_unstable();
        for w in positions.windows(2) {
            if w[0] == w[1] {
                return Err(RegimeError::InvalidRenegeSet(format!(
                    "duplicate position {}",
                    w[0]
                )));
            }
        }
        Ok(RenegeSet(positions))
    }

    pub fn from_raw(positions: Vec<u32>) -> Result<Self, RegimeError> {
        if positions.contains(&0) {
            return Err(RegimeError::InvalidRenegeSet("position 0".into()));
        }
        Self::new(positions.into_iter().map(Position::new).collect())
    }

    pub fn positions(&self) -> &[Position] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: Position) -> bool {
        self.0.binary_search(&p).is_ok()
    }

    pub fn count_below(&self, p: Position) -> u32 {
        self.0.iter().take_while(|&&q| q < p).count() as u32
    }

    /// The same set with one position removed (used to exclude the tagged
    /// customer from an opponent renege set).
    pub fn without(&self, p: Position) -> RenegeSet {
        RenegeSet(self.0.iter().copied().filter(|&q| q != p).collect())
    }

    pub fn max_position(&self) -> Option<Position> {
        self.0.last().copied()
    }
}

/// The queuing-regime contract: transition functions for arrival, service
/// and reneging, plus the placement of arriving customers.
///
/// All operations are pure; a regime value is freely shareable across
/// concurrent analyses.
pub trait Regime: Send + Sync {
    fn name(&self) -> &str;

    /// The unique count-0 state.
    fn idle(&self) -> QueueState;

    /// Arrival transition: the new state (count + 1) and the position the
    /// arriving customer is placed at, in [1, n+1].
    fn arrive(&self, x: &QueueState) -> (QueueState, Position);

    /// Arrival transition that may be undefined (table regimes truncated at
    /// some count). Built-in regimes are total.
    fn try_arrive(&self, x: &QueueState) -> Option<(QueueState, Position)> {
        Some(self.arrive(x))
    }

    /// Service completion; the customer at position 1 leaves. Partial: the
    /// caller models fictitious service at idle by keeping the idle state.
    fn serve(&self, x: &QueueState) -> Result<QueueState, RegimeError>;

    /// The customer at position `i` reneges.
    fn renege_one(&self, x: &QueueState, i: Position) -> Result<QueueState, RegimeError>;

    /// Placement of the next arrival without applying the transition.
    fn placement(&self, x: &QueueState) -> Option<Position> {
        self.try_arrive(x).map(|(_, p)| p)
    }

    /// Simultaneous reneging of a set of positions. Applying positions in
    /// decreasing order keeps every remaining listed position valid, and the
    /// commutation law makes the result order-independent.
    fn renege_set(&self, x: &QueueState, set: &RenegeSet) -> Result<QueueState, RegimeError> {
        let mut cur = x.clone();
        for &i in set.positions().iter().rev() {
            cur = self.renege_one(&cur, i)?;
        }
        Ok(cur)
    }
}

/// The event a tagged customer observes within a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackEvent {
    Arrival { placement: Position },
    Service,
}

/// Where a tagged customer ends up after an event and the simultaneous
/// reneging of others.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tracked {
    At(Position),
    Served,
}

/// Tracks a tagged customer's position through one round: the arrival or
/// service event first, then the reneging of other customers (positions are
/// relative to the post-event state and must not include the tagged one).
pub fn track_position(i: Position, event: TrackEvent, others_renege: &RenegeSet) -> Tracked {
    let after_event = match event {
        TrackEvent::Arrival { placement } => {
            if placement <= i {
                Position::new(i.get() + 1)
            } else {
                i
            }
        }
        TrackEvent::Service => {
            if i.get() == 1 {
                return Tracked::Served;
            }
            Position::new(i.get() - 1)
        }
    };
    debug_assert!(!others_renege.contains(after_event));
    let shift = others_renege.count_below(after_event);
    Tracked::At(Position::new(after_event.get() - shift))
}

/// Balking-consistency law of Remark-style setups: a customer who reneges
/// immediately at the arrival position leaves the state unchanged. Optional;
/// not assumed by any analysis.
pub fn balking_consistent(regime: &dyn Regime, x: &QueueState) -> Result<bool, RegimeError> {
    match regime.try_arrive(x) {
        Some((joined, pos)) => Ok(regime.renege_one(&joined, pos)? == *x),
        None => Ok(true),
    }
}
