//! Seeded Monte Carlo simulation of the embedded round chain under any
//! regime and profile, and the coupled two-threshold experiment that
//! estimates the marginal surplus D_n pathwise.
//!
//! Replications use independent ChaCha streams keyed by (seed, replication)
//! and aggregate in replication order, so results are identical whether the
//! replications run sequentially or on the rayon pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::Profile;
use crate::model::{Params, Regime, RegimeError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error("arrival transition undefined at state {0}")]
    MissingArrival(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DurationMode {
    /// Each round contributes its expected duration 1/(lambda+mu).
    Expected,
    /// Round durations sampled from the exponential distribution.
    Sampled,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    pub params: Params,
    pub rounds: u64,
    pub replications: u32,
    pub seed: u64,
    pub duration: DurationMode,
}

/// Per-replication simulation outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepStats {
    pub replication: u32,
    pub welfare_rate: f64,
    pub served: u64,
    pub reneged: u64,
    pub total_time: f64,
    /// Time spent with k customers in the system, indexed by k.
    pub time_at_count: Vec<f64>,
}

/// Aggregated simulation outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub welfare_rate: f64,
    pub welfare_se: f64,
    pub served: u64,
    pub reneged: u64,
    /// Time-average queue-length distribution; masses sum to one.
    pub histogram: Vec<f64>,
    pub seed: u64,
    pub replications: Vec<RepStats>,
}

fn rep_rng(seed: u64, replication: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64 + 1);
    rng
}

fn run_one(
    cfg: &SimConfig,
    regime: &dyn Regime,
    profile: &dyn Profile,
    replication: u32,
) -> Result<RepStats, SimError> {
    let params = &cfg.params;
    let (p, rate) = (params.p(), params.round_rate());
    let mut rng = rep_rng(cfg.seed, replication);
    let mut state = regime.idle();
    let mut served = 0u64;
    let mut reneged = 0u64;
    let mut reward_sum = 0.0f64;
    let mut cost_sum = 0.0f64;
    let mut total_time = 0.0f64;
    let mut time_at_count: Vec<f64> = Vec::new();
    for _ in 0..cfg.rounds {
        let arrival = rng.gen::<f64>() < p;
        if arrival {
            let (next, _) = regime
                .try_arrive(&state)
                .ok_or_else(|| SimError::MissingArrival(state.to_string()))?;
            state = next;
        } else if !state.is_idle() {
            state = regime.serve(&state)?;
            served += 1;
            reward_sum += params.reward();
        } // fictitious service keeps the idle state
        if !state.is_idle() {
            let leaving = profile.reneges(&state);
            if !leaving.is_empty() {
                reneged += leaving.len() as u64;
                state = regime.renege_set(&state, &leaving)?;
            }
        }
        let dt = match cfg.duration {
            DurationMode::Expected => 1.0 / rate,
            DurationMode::Sampled => -f64::ln(1.0 - rng.gen::<f64>()) / rate,
        };
        let n = state.count() as usize;
        if time_at_count.len() <= n {
            time_at_count.resize(n + 1, 0.0);
        }
        time_at_count[n] += dt;
        cost_sum += params.cost() * n as f64 * dt;
        total_time += dt;
    }
    Ok(RepStats {
        replication,
        welfare_rate: (reward_sum - cost_sum) / total_time,
        served,
        reneged,
        total_time,
        time_at_count,
    })
}

fn aggregate(cfg: &SimConfig, reps: Vec<RepStats>) -> SimStats {
    let k = reps.len();
    let mean = reps.iter().map(|r| r.welfare_rate).sum::<f64>() / k as f64;
    let se = if k >= 2 {
        let var = reps
            .iter()
            .map(|r| (r.welfare_rate - mean).powi(2))
            .sum::<f64>()
            / (k as f64 - 1.0);
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    let max_len = reps.iter().map(|r| r.time_at_count.len()).max().unwrap_or(0);
    let mut histogram = vec![0.0; max_len];
    let mut total_time = 0.0;
    for r in &reps {
        for (n, &t) in r.time_at_count.iter().enumerate() {
            histogram[n] += t;
        }
        total_time += r.total_time;
    }
    let mass: f64 = histogram.iter().sum();
    debug_assert!((mass - total_time).abs() <= 1e-9 * total_time.max(1.0));
    for h in &mut histogram {
        *h /= mass;
    }
    SimStats {
        welfare_rate: mean,
        welfare_se: se,
        served: reps.iter().map(|r| r.served).sum(),
        reneged: reps.iter().map(|r| r.reneged).sum(),
        histogram,
        seed: cfg.seed,
        replications: reps,
    }
}

/// Runs the configured replications, in parallel when the `parallel` feature
/// is enabled.
pub fn run_sim(
    cfg: &SimConfig,
    regime: &dyn Regime,
    profile: &dyn Profile,
) -> Result<SimStats, SimError> {
    #[cfg(feature = "parallel")]
    let reps: Result<Vec<RepStats>, SimError> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_one(cfg, regime, profile, r))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let reps: Result<Vec<RepStats>, SimError> = (0..cfg.replications)
        .map(|r| run_one(cfg, regime, profile, r))
        .collect();
    Ok(aggregate(cfg, reps?))
}

/// Always-sequential variant; produces bit-identical output to `run_sim`.
pub fn run_sim_seq(
    cfg: &SimConfig,
    regime: &dyn Regime,
    profile: &dyn Profile,
) -> Result<SimStats, SimError> {
    let reps: Result<Vec<RepStats>, SimError> = (0..cfg.replications)
        .map(|r| run_one(cfg, regime, profile, r))
        .collect();
    Ok(aggregate(cfg, reps?))
}

/// Coupled Alice/Bob estimate of D_n: both threshold systems consume one
/// shared event stream; the payoff difference is averaged over blocks
/// delimited by the rounds in which Alice's count equals n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledEstimate {
    pub d_hat: f64,
    pub se: f64,
    pub blocks: u64,
    pub n: u32,
    pub seed: u64,
}

#[derive(Clone, Copy)]
struct CoupledRep {
    d_hat: f64,
    blocks: u64,
}

fn coupled_one(params: &Params, n: u32, rounds: u64, seed: u64, replication: u32) -> CoupledRep {
    let (p, rate) = (params.p(), params.round_rate());
    let dt = 1.0 / rate;
    let mut rng = rep_rng(seed, replication);
    let mut alice: u32 = 0;
    let mut bob: u32 = 0;
    let mut started = false;
    let mut block_sum = 0.0f64;
    let mut total = 0.0f64;
    let mut blocks = 0u64;
    for _ in 0..rounds {
        let arrival = rng.gen::<f64>() < p;
        let mut diff = 0.0f64;
        if arrival {
            alice = (alice + 1).min(n);
            bob = (bob + 1).min(n.saturating_sub(1));
        } else {
            if alice > 0 {
                alice -= 1;
                diff += params.reward();
            }
            if bob > 0 {
                bob -= 1;
                diff -= params.reward();
            }
        }
        debug_assert!(bob <= alice && alice <= bob + 1);
        diff -= params.cost() * (alice - bob) as f64 * dt;
        if alice == n {
            if started {
                total += block_sum;
                blocks += 1;
            }
            started = true;
            block_sum = 0.0;
        }
        if started {
            block_sum += diff;
        }
    }
    CoupledRep {
        d_hat: if blocks > 0 { total / blocks as f64 } else { 0.0 },
        blocks,
    }
}

fn aggregate_coupled(reps: Vec<CoupledRep>, n: u32, seed: u64) -> CoupledEstimate {
    let k = reps.len();
    let mean = reps.iter().map(|r| r.d_hat).sum::<f64>() / k as f64;
    let se = if k >= 2 {
        let var = reps.iter().map(|r| (r.d_hat - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    CoupledEstimate {
        d_hat: mean,
        se,
        blocks: reps.iter().map(|r| r.blocks).sum(),
        n,
        seed,
    }
}

pub fn coupled_dn_estimate(
    params: &Params,
    n: u32,
    rounds: u64,
    replications: u32,
    seed: u64,
) -> CoupledEstimate {
    assert!(n >= 1);
    #[cfg(feature = "parallel")]
    let reps: Vec<CoupledRep> = (0..replications)
        .into_par_iter()
        .map(|r| coupled_one(params, n, rounds, seed, r))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let reps: Vec<CoupledRep> = (0..replications)
        .map(|r| coupled_one(params, n, rounds, seed, r))
        .collect();
    aggregate_coupled(reps, n, seed)
}

/// Always-sequential variant; bit-identical to `coupled_dn_estimate`.
pub fn coupled_dn_estimate_seq(
    params: &Params,
    n: u32,
    rounds: u64,
    replications: u32,
    seed: u64,
) -> CoupledEstimate {
    let reps: Vec<CoupledRep> = (0..replications)
        .map(|r| coupled_one(params, n, rounds, seed, r))
        .collect();
    aggregate_coupled(reps, n, seed)
}

pub fn replication_csv(stats: &SimStats) -> String {
    let mut out = String::from("replication,welfare_rate,served,reneged,total_time\n");
    for r in &stats.replications {
        out.push_str(&format!(
            "{},{:.12},{},{},{:.12}\n",
            r.replication, r.welfare_rate, r.served, r.reneged, r.total_time
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::ThresholdProfile;
    use crate::regimes::fcfs;

    fn params_1212() -> Params {
        Params::new(1.0, 2.0, 1.0, 2.0).unwrap()
    }

    fn config(rounds: u64, reps: u32, seed: u64) -> SimConfig {
        SimConfig {
            params: params_1212(),
            rounds,
            replications: reps,
            seed,
            duration: DurationMode::Expected,
        }
    }

    #[test]
    fn identical_seeds_identical_output() {
        let cfg = config(20_000, 4, 7);
        let profile = ThresholdProfile { threshold: 2 };
        let a = run_sim(&cfg, &fcfs(), &profile).unwrap();
        let b = run_sim(&cfg, &fcfs(), &profile).unwrap();
        assert_eq!(a, b);
        let c = run_sim_seq(&cfg, &fcfs(), &profile).unwrap();
        assert_eq!(a, c, "parallel and sequential paths must agree bitwise");
    }

    #[test]
    fn near_zero_arrivals_leave_the_system_empty() {
        let params = Params::new(1e-6, 1.0, 1.0, 2.0).unwrap();
        let cfg = SimConfig {
            params,
            rounds: 50_000,
            replications: 2,
            seed: 3,
            duration: DurationMode::Expected,
        };
        let stats = run_sim(&cfg, &fcfs(), &ThresholdProfile { threshold: 2 }).unwrap();
        assert!(stats.histogram[0] > 0.999);
        assert!(stats.welfare_rate.abs() < 1e-3);
    }

    #[test]
    fn histogram_masses_sum_to_one() {
        let cfg = SimConfig {
            duration: DurationMode::Sampled,
            ..config(50_000, 3, 11)
        };
        let stats = run_sim(&cfg, &fcfs(), &ThresholdProfile { threshold: 2 }).unwrap();
        let mass: f64 = stats.histogram.iter().sum();
        assert!((mass - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn welfare_matches_birth_death_oracle() {
        let cfg = config(400_000, 8, 42);
        let stats = run_sim(&cfg, &fcfs(), &ThresholdProfile { threshold: 2 }).unwrap();
        let want = 8.0 / 7.0;
        assert!(
            (stats.welfare_rate - want).abs() <= 3.0 * stats.welfare_se,
            "{} vs {want} (se {})",
            stats.welfare_rate,
            stats.welfare_se
        );
    }

    #[test]
    fn coupled_estimate_matches_d1_closed_form() {
        // lambda = mu: D_1 = (r mu - c)/(lambda + mu).
        let params = Params::new(1.0, 1.0, 1.0, 3.0).unwrap();
        let est = coupled_dn_estimate(&params, 1, 200_000, 10, 5);
        let want = (3.0 - 1.0) / 2.0;
        assert!(est.blocks > 0);
        assert!(
            (est.d_hat - want).abs() <= 3.0 * est.se,
            "{} vs {want} (se {})",
            est.d_hat,
            est.se
        );
        let seq = coupled_dn_estimate_seq(&params, 1, 200_000, 10, 5);
        assert_eq!(est, seq);
    }

    #[test]
    fn sampled_durations_agree_with_expected_mode() {
        let cfg = SimConfig {
            duration: DurationMode::Sampled,
            ..config(400_000, 8, 9)
        };
        let stats = run_sim(&cfg, &fcfs(), &ThresholdProfile { threshold: 2 }).unwrap();
        let want = 8.0 / 7.0;
        assert!((stats.welfare_rate - want).abs() <= 4.0 * stats.welfare_se.max(5e-3));
    }
}
