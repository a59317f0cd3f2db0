use std::io::{Read, Write};
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Result};

/// `amplitude * sin(angular_freq * t + phase) + offset`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub angular_freq: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Sinusoid {
    pub fn constant(value: f64) -> Self {
        Self {
            amplitude: 0.0,
            angular_freq: 0.0,
            phase: 0.0,
            offset: value,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.angular_freq * t + self.phase).sin() + self.offset
    }
}

/// Demand process as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowSpec {
    Synthetic {
        waves: Vec<Sinusoid>,
        /// Uniform noise in `[-noise, noise]` added to every demand.
        #[serde(default)]
        noise: f64,
    },
    Trace {
        path: String,
    },
}

impl FlowSpec {
    pub fn build(&self, num_commodities: usize) -> Result<FlowProcess> {
        let process = match self {
            FlowSpec::Synthetic { waves, noise } => FlowProcess::Synthetic {
                waves: waves.clone(),
                noise: *noise,
            },
            FlowSpec::Trace { path } => FlowProcess::Trace(DemandTrace::load(path)?),
        };
        process.check(num_commodities)?;
        Ok(process)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowProcess {
    Synthetic { waves: Vec<Sinusoid>, noise: f64 },
    Trace(DemandTrace),
}

impl FlowProcess {
    pub fn check(&self, num_commodities: usize) -> Result<()> {
        match self {
            FlowProcess::Synthetic { waves, noise } => {
                if waves.len() != num_commodities {
                    return Err(EnvError::Flow(format!(
                        "{} sinusoids for {num_commodities} commodities",
                        waves.len()
                    )));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(EnvError::Flow(format!("noise amplitude {noise} is invalid")));
                }
                let bad = waves.iter().any(|w| {
                    ![w.amplitude, w.angular_freq, w.phase, w.offset]
                        .iter()
                        .all(|x| x.is_finite())
                });
                if bad {
                    return Err(EnvError::Flow("non-finite sinusoid parameter".into()));
                }
            }
            FlowProcess::Trace(trace) => {
                if trace.commodities != num_commodities {
                    return Err(EnvError::Flow(format!(
                        "trace has {} commodities, topology has {num_commodities}",
                        trace.commodities
                    )));
                }
            }
        }
        Ok(())
    }

    /// Demand of `commodity` at step `t`, never negative.
    ///
    /// Synthetic noise consumes exactly one draw from `rng` per call; traces
    /// wrap around their length and ignore `rng`.
    pub fn demand_at<R: Rng + ?Sized>(&self, t: usize, commodity: usize, rng: &mut R) -> f64 {
        match self {
            FlowProcess::Synthetic { waves, noise } => {
                let base = waves[commodity].value(t as f64).max(0.0);
                if *noise > 0.0 {
                    (base + rng.random_range(-*noise..=*noise)).max(0.0)
                } else {
                    base
                }
            }
            FlowProcess::Trace(trace) => trace.demand(t % trace.steps, commodity),
        }
    }
}

/// Time-indexed demand table.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTrace {
    pub steps: usize,
    pub commodities: usize,
    demand: Vec<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRow {
    t: usize,
    commodity: usize,
    demand: f64,
}

impl DemandTrace {
    pub fn from_fn(steps: usize, commodities: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut demand = Vec::with_capacity(steps * commodities);
        for t in 0..steps {
            for c in 0..commodities {
                demand.push(f(t, c));
            }
        }
        Self {
            steps,
            commodities,
            demand,
        }
    }

    pub fn demand(&self, t: usize, commodity: usize) -> f64 {
        self.demand[t * self.commodities + commodity]
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    /// Parses `t,commodity,demand` rows. Every `(t, commodity)` pair in the
    /// dense grid must appear exactly once.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header_ok = rdr
            .headers()
            .map(|h| h.iter().eq(["t", "commodity", "demand"]))
            .map_err(|e| EnvError::Trace {
                line: 1,
                message: e.to_string(),
            })?;
        if !header_ok {
            return Err(EnvError::Trace {
                line: 1,
                message: "header must be `t,commodity,demand`".into(),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| EnvError::Trace {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row: TraceRow = record.deserialize(None).map_err(|e| EnvError::Trace {
                line,
                message: e.to_string(),
            })?;
            if !(row.demand.is_finite() && row.demand >= 0.0) {
                return Err(EnvError::Trace {
                    line,
                    message: format!("demand {} is not a non-negative number", row.demand),
                });
            }
            rows.push((line, row));
        }
        if rows.is_empty() {
            return Err(EnvError::Trace {
                line: 1,
                message: "trace has no rows".into(),
            });
        }
        let steps = rows.iter().map(|(_, r)| r.t).max().unwrap() + 1;
        let commodities = rows.iter().map(|(_, r)| r.commodity).max().unwrap() + 1;
        let mut demand = vec![f64::NAN; steps * commodities];
        for (line, row) in &rows {
            let slot = &mut demand[row.t * commodities + row.commodity];
            if !slot.is_nan() {
                return Err(EnvError::Trace {
                    line: *line,
                    message: format!("duplicate row for t={} commodity={}", row.t, row.commodity),
                });
            }
            *slot = row.demand;
        }
        if let Some(missing) = demand.iter().position(|d| d.is_nan()) {
            return Err(EnvError::Trace {
                line: rows.last().map(|(l, _)| *l).unwrap_or(0),
                message: format!(
                    "missing row for t={} commodity={}",
                    missing / commodities,
                    missing % commodities
                ),
            });
        }
        Ok(Self {
            steps,
            commodities,
            demand,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for t in 0..self.steps {
            for c in 0..self.commodities {
                wtr.serialize(TraceRow {
                    t,
                    commodity: c,
                    demand: self.demand(t, c),
                })
                .map_err(|e| EnvError::Flow(e.to_string()))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn mean(&self, commodity: usize) -> f64 {
        (0..self.steps).map(|t| self.demand(t, commodity)).sum::<f64>() / self.steps as f64
    }

    pub fn max(&self, commodity: usize) -> f64 {
        (0..self.steps)
            .map(|t| self.demand(t, commodity))
            .fold(0.0, f64::max)
    }
}
