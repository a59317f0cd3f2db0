use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::Result;

pub const METRICS_HEADER: [&str; 10] = [
    "method",
    "topology",
    "seed",
    "episode",
    "mean_mlu",
    "mean_reward",
    "msgs_sent",
    "msgs_possible",
    "prune_frac",
    "converged",
];

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub mean_mlu: f64,
    pub mean_reward: f64,
    pub msgs_sent: u64,
    pub msgs_possible: u64,
    /// Fraction of steps each agent's gate was open.
    pub open_rates: Vec<f64>,
}

impl EpisodeMetrics {
    pub fn prune_frac(&self) -> f64 {
        prune_frac(self.msgs_sent, self.msgs_possible)
    }
}

pub fn prune_frac(sent: u64, possible: u64) -> f64 {
    if possible == 0 {
        0.0
    } else {
        1.0 - sent as f64 / possible as f64
    }
}

/// Evaluation results for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub topology: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
    /// Mean training reward over the last 20% of steps; `None` for WCMP.
    pub final_window_reward: Option<f64>,
    /// WCMP's mean evaluation reward on the same episodes.
    pub wcmp_reward: f64,
    pub converged: bool,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    fn mean_of(&self, f: impl Fn(&EpisodeMetrics) -> f64) -> f64 {
        self.episodes.iter().map(f).sum::<f64>() / self.episodes.len().max(1) as f64
    }

    pub fn mean_mlu(&self) -> f64 {
        self.mean_of(|e| e.mean_mlu)
    }

    pub fn mean_reward(&self) -> f64 {
        self.mean_of(|e| e.mean_reward)
    }

    pub fn msgs_sent(&self) -> u64 {
        self.episodes.iter().map(|e| e.msgs_sent).sum()
    }

    pub fn msgs_possible(&self) -> u64 {
        self.episodes.iter().map(|e| e.msgs_possible).sum()
    }

    pub fn prune_frac(&self) -> f64 {
        prune_frac(self.msgs_sent(), self.msgs_possible())
    }

    pub fn summary_row(&self) -> MetricsRow {
        MetricsRow {
            method: self.method,
            topology: self.topology.clone(),
            seed: self.seed.to_string(),
            episode: "all".into(),
            mean_mlu: self.mean_mlu(),
            mean_reward: self.mean_reward(),
            msgs_sent: self.msgs_sent(),
            msgs_possible: self.msgs_possible(),
            prune_frac: self.prune_frac(),
            converged: if self.converged { 1.0 } else { 0.0 },
        }
    }

    pub fn episode_rows(&self) -> Vec<MetricsRow> {
        self.episodes
            .iter()
            .map(|e| MetricsRow {
                method: self.method,
                topology: self.topology.clone(),
                seed: self.seed.to_string(),
                episode: e.episode.to_string(),
                mean_mlu: e.mean_mlu,
                mean_reward: e.mean_reward,
                msgs_sent: e.msgs_sent,
                msgs_possible: e.msgs_possible,
                prune_frac: e.prune_frac(),
                converged: if self.converged { 1.0 } else { 0.0 },
            })
            .collect()
    }
}

/// A line of the metrics CSV. Per-seed rows carry `episode = "all"`; the
/// aggregate row additionally carries `seed = "all"` and the convergence
/// ratio in `converged`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub topology: String,
    pub seed: String,
    pub episode: String,
    pub mean_mlu: f64,
    pub mean_reward: f64,
    pub msgs_sent: u64,
    pub msgs_possible: u64,
    pub prune_frac: f64,
    pub converged: f64,
}

/// Fraction of runs whose final-window training reward beat WCMP.
pub fn convergence_ratio(runs: &[RunMetrics]) -> f64 {
    convergence_ratio_of(&runs.iter().map(|r| r.converged).collect::<Vec<_>>())
}

pub fn convergence_ratio_of(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
}

/// Mean over per-seed rows; message counts are summed.
pub fn aggregate(rows: &[MetricsRow]) -> Option<MetricsRow> {
    let first = rows.first()?;
    let n = rows.len() as f64;
    let sent = rows.iter().map(|r| r.msgs_sent).sum();
    let possible = rows.iter().map(|r| r.msgs_possible).sum();
    Some(MetricsRow {
        method: first.method,
        topology: first.topology.clone(),
        seed: "all".into(),
        episode: "all".into(),
        mean_mlu: rows.iter().map(|r| r.mean_mlu).sum::<f64>() / n,
        mean_reward: rows.iter().map(|r| r.mean_reward).sum::<f64>() / n,
        msgs_sent: sent,
        msgs_possible: possible,
        prune_frac: prune_frac(sent, possible),
        converged: rows.iter().map(|r| r.converged).sum::<f64>() / n,
    })
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

pub type MetricsCsv = csv::Writer<std::fs::File>;

/// A metrics CSV file with its header already written.
pub fn create_metrics_csv(path: impl AsRef<std::path::Path>) -> Result<MetricsCsv> {
    let mut w = csv_writer(std::fs::File::create(path)?);
    write_header(&mut w)?;
    Ok(w)
}

pub fn write_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(METRICS_HEADER)?;
    Ok(())
}

/// Writes rows of independently finishing jobs in job order. A job's rows
/// are flushed as soon as every earlier job has been written.
pub struct OrderedWriter<W: Write> {
    inner: Mutex<OrderedState<W>>,
}

struct OrderedState<W: Write> {
    writer: csv::Writer<W>,
    next: usize,
    pending: BTreeMap<usize, Vec<MetricsRow>>,
    error: Option<String>,
}

impl<W: Write> OrderedWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv_writer(out);
        write_header(&mut writer)?;
        writer.flush()?;
        Ok(Self {
            inner: Mutex::new(OrderedState {
                writer,
                next: 0,
                pending: BTreeMap::new(),
                error: None,
            }),
        })
    }

    /// Rows of job `index`; an empty list marks a failed job.
    pub fn submit(&self, index: usize, rows: Vec<MetricsRow>) {
        let mut state = self.inner.lock().expect("writer lock");
        state.pending.insert(index, rows);
        while let Some(rows) = {
            let next = state.next;
            state.pending.remove(&next)
        } {
            for row in &rows {
                if let Err(e) = state.writer.serialize(row) {
                    state.error.get_or_insert(e.to_string());
                }
            }
            if let Err(e) = state.writer.flush() {
                state.error.get_or_insert(e.to_string());
            }
            state.next += 1;
        }
    }

    /// Appends trailing rows and returns the underlying writer.
    pub fn finish(self, tail: &[MetricsRow]) -> Result<W> {
        let mut state = self.inner.into_inner().expect("writer lock");
        if let Some(e) = state.error {
            return Err(crate::Error::Invalid(format!("metrics write failed: {e}")));
        }
        for row in tail {
            state.writer.serialize(row)?;
        }
        state
            .writer
            .into_inner()
            .map_err(|e| crate::Error::Invalid(format!("metrics flush failed: {}", e.error())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, mlu: f64, converged: bool) -> MetricsRow {
        MetricsRow {
            method: Method::Acml,
            topology: "small".into(),
            seed: seed.to_string(),
            episode: "all".into(),
            mean_mlu: mlu,
            mean_reward: 1.0 - mlu,
            msgs_sent: 10,
            msgs_possible: 20,
            prune_frac: 0.5,
            converged: if converged { 1.0 } else { 0.0 },
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(convergence_ratio_of(&[true; 4]), 1.0);
        assert_eq!(convergence_ratio_of(&[false; 4]), 0.0);
        let mut flags = vec![true; 21];
        flags.extend([false; 9]);
        assert!((convergence_ratio_of(&flags) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn aggregate_recomputes_from_rows() {
        let rows = [row(1, 0.5, true), row(2, 0.7, false)];
        let agg = aggregate(&rows).unwrap();
        assert!((agg.mean_mlu - 0.6).abs() < 1e-15);
        assert_eq!(agg.msgs_sent, 20);
        assert_eq!(agg.converged, 0.5);
        assert_eq!(agg.seed, "all");
    }

    #[test]
    fn out_of_order_jobs_are_written_in_order() {
        let w = OrderedWriter::new(Vec::new()).unwrap();
        w.submit(2, vec![row(3, 0.1, true)]);
        w.submit(0, vec![row(1, 0.1, true)]);
        w.submit(1, vec![]);
        let text = String::from_utf8(w.finish(&[]).unwrap()).unwrap();
        let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
        assert_eq!(seeds, ["1", "3"]);
        assert!(text.starts_with(&METRICS_HEADER.join(",")));
    }
}
