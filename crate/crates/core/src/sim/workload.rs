//! Request arrival processes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How request arrival times are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Poisson arrivals at `rate` requests per second.
    Poisson { rate: f64 },
    /// Replay explicit timestamps (seconds from simulation start).
    Replay { timestamps: Vec<f64> },
}

/// A request workload: arrivals over a fixed horizon, with request
/// bodies drawn from a trace by cycling record indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workload {
    pub arrivals: ArrivalProcess,
    /// Simulated horizon in seconds.
    pub duration: f64,
    pub seed: u64,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Invariant("workload duration must be > 0".into()));
        }
        match &self.arrivals {
            ArrivalProcess::Poisson { rate } => {
                if !(*rate > 0.0) {
                    return Err(Error::Invariant("Poisson rate must be > 0".into()));
                }
            }
            ArrivalProcess::Replay { timestamps } => {
                let mut prev = 0.0;
                for &t in timestamps {
                    if t < prev {
                        return Err(Error::Invariant(
                            "replay timestamps must be nondecreasing".into(),
                        ));
                    }
                    prev = t;
                }
            }
        }
        Ok(())
    }

    /// Arrival times within `[0, duration)`, deterministic under the seed.
    pub fn arrival_times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        match &self.arrivals {
            ArrivalProcess::Poisson { rate } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let exp = Exp::new(*rate).map_err(|e| Error::Invariant(e.to_string()))?;
                let mut t = 0.0;
                let mut times = Vec::new();
                loop {
                    t += exp.sample(&mut rng);
                    if t >= self.duration {
                        return Ok(times);
                    }
                    times.push(t);
                }
            }
            ArrivalProcess::Replay { timestamps } => Ok(timestamps
                .iter()
                .copied()
                .filter(|t| *t < self.duration)
                .collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_rate_is_respected() {
        let w = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 100.0 },
            duration: 50.0,
            seed: 7,
        };
        let times = w.arrival_times().unwrap();
        let rate = times.len() as f64 / 50.0;
        assert!((rate - 100.0).abs() < 5.0, "rate {rate}");
        assert!(times.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn replay_filters_beyond_horizon() {
        let w = Workload {
            arrivals: ArrivalProcess::Replay {
                timestamps: vec![0.1, 0.5, 2.5],
            },
            duration: 1.0,
            seed: 0,
        };
        assert_eq!(w.arrival_times().unwrap(), vec![0.1, 0.5]);
    }

    #[test]
    fn deterministic_under_seed() {
        let w = Workload {
            arrivals: ArrivalProcess::Poisson { rate: 20.0 },
            duration: 10.0,
            seed: 3,
        };
        assert_eq!(w.arrival_times().unwrap(), w.arrival_times().unwrap());
    }
}
