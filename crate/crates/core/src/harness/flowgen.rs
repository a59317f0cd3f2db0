use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{DemandTrace, FlowProcess};
use crate::rng::{self, Stream};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub steps: usize,
    pub commodities: usize,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FlowSummary {
    pub fn of(trace: &DemandTrace) -> Self {
        let column = |c: usize| (0..trace.steps).map(move |t| trace.demand(t, c));
        Self {
            steps: trace.steps,
            commodities: trace.commodities,
            mean: (0..trace.commodities).map(|c| trace.mean(c)).collect(),
            min: (0..trace.commodities)
                .map(|c| column(c).fold(f64::INFINITY, f64::min))
                .collect(),
            max: (0..trace.commodities).map(|c| trace.max(c)).collect(),
        }
    }
}

/// Samples `steps` steps of `process` into a trace; noise is drawn from the
/// seed's episode stream, so the same seed gives the same file.
pub fn gen_flow(process: &FlowProcess, commodities: usize, steps: usize, seed: u64) -> Result<DemandTrace> {
    process.check(commodities)?;
    let mut rng = rng::stream(seed, Stream::Episodes);
    Ok(DemandTrace::from_fn(steps, commodities, |t, c| {
        process.demand_at(t, c, &mut rng)
    }))
}

pub fn write_flow(trace: &DemandTrace, path: impl AsRef<Path>) -> Result<FlowSummary> {
    let file = std::fs::File::create(path)?;
    trace.write_csv(file)?;
    Ok(FlowSummary::of(trace))
}

/// Parses and checks an existing trace file.
pub fn validate_flow(path: impl AsRef<Path>) -> Result<FlowSummary> {
    Ok(FlowSummary::of(&DemandTrace::load(path)?))
}
