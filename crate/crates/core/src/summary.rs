//! Run statistics, CSV/JSON export, A/B comparison, and the post-hoc
//! trace checks (duty cycle, per-node transmission serialization,
//! single-owner service placement, packet conservation).

use crate::engine::{Counters, FailoverRecord, RunResult, ServiceSpan};
use crate::kernel::SimTime;
use crate::metrics::LatencyRecord;
use crate::radio::TransmissionRecord;
use crate::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum SummaryError {
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("runs are incompatible: {0}")]
    Incompatible(String),
}

/// Latency distribution figures over one run (microseconds).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub median_us: u64,
    pub p95_us: u64,
    pub max_us: u64,
    pub spike_count: u64,
    pub spike_threshold_us: u64,
}

impl LatencyStats {
    fn from_sorted(sorted: &[u64], spike_factor: f64) -> Self {
        if sorted.is_empty() {
            return LatencyStats::default();
        }
        let n = sorted.len();
        let median = sorted[(n - 1) / 2];
        let p95 = sorted[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
        let threshold = (median as f64 * spike_factor).round() as u64;
        LatencyStats {
            count: n as u64,
            median_us: median,
            p95_us: p95,
            max_us: sorted[n - 1],
            spike_count: sorted.iter().filter(|&&v| v > threshold).count() as u64,
            spike_threshold_us: threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeLatencyStats {
    pub node: String,
    #[serde(flatten)]
    pub stats: LatencyStats,
}

/// One failover table row in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailoverRow {
    pub detect_us: u64,
    pub start_us: u64,
    pub total_us: u64,
    pub service: String,
    pub from: String,
    pub to: String,
}

/// Aggregated result of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration_us: u64,
    pub node_count: usize,
    pub aggregate: LatencyStats,
    pub per_node: Vec<NodeLatencyStats>,
    pub sampled: u64,
    pub ingested: u64,
    pub lost: u64,
    pub in_flight: u64,
    pub delivery_ratio: f64,
    pub frames_sent: u64,
    pub retransmissions: u64,
    pub collisions: u64,
    pub transfers_completed: u64,
    pub transfers_failed: u64,
    /// Peak sliding-window airtime over the duty budget, any node.
    pub duty_peak_utilization: f64,
    pub failovers: Vec<FailoverRow>,
}

impl RunSummary {
    pub fn compute(
        cfg: &ScenarioConfig,
        latency: &[LatencyRecord],
        transmissions: &[TransmissionRecord],
        failovers: &[FailoverRecord],
        counters: &Counters,
    ) -> RunSummary {
        let mut all: Vec<u64> = latency.iter().map(|r| r.latency_us).collect();
        all.sort_unstable();
        let aggregate = LatencyStats::from_sorted(&all, cfg.spike_factor);

        let per_node = (0..cfg.node_names.len())
            .map(|i| {
                let mut own: Vec<u64> = latency
                    .iter()
                    .filter(|r| r.source.index() == i)
                    .map(|r| r.latency_us)
                    .collect();
                own.sort_unstable();
                NodeLatencyStats {
                    node: cfg.node_names[i].clone(),
                    stats: LatencyStats::from_sorted(&own, cfg.spike_factor),
                }
            })
            .collect();

        let collisions = transmissions.iter().filter(|t| t.collided).count() as u64;
        let duty = duty_cycle_report(
            transmissions,
            cfg.node_names.len(),
            cfg.duty_window,
            duty_budget_us(cfg),
        );
        let in_flight = counters
            .sampled
            .saturating_sub(counters.ingested + counters.metrics_lost);
        RunSummary {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            duration_us: cfg.duration.as_micros(),
            node_count: cfg.node_names.len(),
            aggregate,
            per_node,
            sampled: counters.sampled,
            ingested: counters.ingested,
            lost: counters.metrics_lost,
            in_flight,
            delivery_ratio: if counters.sampled == 0 {
                1.0
            } else {
                counters.ingested as f64 / counters.sampled as f64
            },
            frames_sent: counters.frames_sent,
            retransmissions: counters.retransmissions,
            collisions,
            transfers_completed: counters.transfers_completed,
            transfers_failed: counters.transfers_failed,
            duty_peak_utilization: duty.peak_utilization,
            failovers: failovers
                .iter()
                .map(|f| FailoverRow {
                    detect_us: f.detect_us,
                    start_us: f.start_us,
                    total_us: f.total_us,
                    service: f.service.clone(),
                    from: f.from.clone(),
                    to: f.to.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, SummaryError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SummaryError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Human-readable block printed after a run.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario {} (seed {}, {:.0}s simulated, {} nodes)\n",
            self.scenario,
            self.seed,
            self.duration_us as f64 / 1e6,
            self.node_count
        ));
        out.push_str(&format!(
            "latency: n={} median={:.3}s p95={:.3}s max={:.3}s spikes={} (>{:.3}s)\n",
            self.aggregate.count,
            self.aggregate.median_us as f64 / 1e6,
            self.aggregate.p95_us as f64 / 1e6,
            self.aggregate.max_us as f64 / 1e6,
            self.aggregate.spike_count,
            self.aggregate.spike_threshold_us as f64 / 1e6,
        ));
        out.push_str(&format!(
            "packets: sampled={} ingested={} lost={} in_flight={} delivery_ratio={:.4}\n",
            self.sampled, self.ingested, self.lost, self.in_flight, self.delivery_ratio
        ));
        out.push_str(&format!(
            "radio: frames={} retransmissions={} collisions={} duty_peak={:.2}%\n",
            self.frames_sent,
            self.retransmissions,
            self.collisions,
            self.duty_peak_utilization * 100.0
        ));
        if !self.failovers.is_empty() {
            out.push_str("failovers (detect_s start_s total_s service from->to):\n");
            for f in &self.failovers {
                out.push_str(&format!(
                    "  {:8.3} {:6.3} {:8.3}  {} {}->{}\n",
                    f.detect_us as f64 / 1e6,
                    f.start_us as f64 / 1e6,
                    f.total_us as f64 / 1e6,
                    f.service,
                    f.from,
                    f.to
                ));
            }
        }
        out
    }
}

fn duty_budget_us(cfg: &ScenarioConfig) -> u64 {
    cfg.duty_window.as_micros() * cfg.duty_budget.0 / cfg.duty_budget.1
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

pub fn latency_csv(result: &RunResult) -> String {
    let mut out = String::from("source,sequence,origin_us,ingest_us,latency_us\n");
    for r in &result.latency {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            result.node_names[r.source.index()],
            r.sequence,
            r.origin_us,
            r.ingest_us,
            r.latency_us
        ));
    }
    out
}

pub fn transmissions_csv(result: &RunResult) -> String {
    let mut out = String::from("sender,start_us,end_us,bytes,delivered_to,collided\n");
    for t in &result.transmissions {
        let delivered: Vec<&str> = t
            .delivered_to
            .iter()
            .map(|n| result.node_names[n.index()].as_str())
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            result.node_names[t.sender.index()],
            t.start.as_micros(),
            t.end.as_micros(),
            t.bytes,
            delivered.join(";"),
            t.collided
        ));
    }
    out
}

pub fn failover_csv(result: &RunResult) -> String {
    let mut out = String::from("detect_us,start_us,total_us,service,from,to\n");
    for f in &result.failovers {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.detect_us, f.start_us, f.total_us, f.service, f.from, f.to
        ));
    }
    out
}

/// Write every run artifact into `dir`: three CSVs, the time-series text
/// log, the JSON summary, and the text summary block.
pub fn write_outputs(result: &RunResult, dir: &Path) -> Result<(), SummaryError> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, contents: &str| -> Result<(), SummaryError> {
        let mut f = std::fs::File::create(dir.join(name))?;
        f.write_all(contents.as_bytes())?;
        Ok(())
    };
    write("latency.csv", &latency_csv(result))?;
    write("transmissions.csv", &transmissions_csv(result))?;
    write("failover.csv", &failover_csv(result))?;
    write("timeseries.txt", &(result.store_lines.join("\n") + "\n"))?;
    write("summary.json", &result.summary.to_json()?)?;
    write("summary.txt", &result.summary.render_text())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

/// Signed deltas of the headline figures between two runs (b minus a).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub scenario_a: String,
    pub scenario_b: String,
    pub median_us: i64,
    pub p95_us: i64,
    pub delivery_ratio: f64,
    pub collisions: i64,
    pub spike_count: i64,
}

impl DeltaReport {
    pub fn render_text(&self) -> String {
        format!(
            "compare {} -> {}\n  median:        {:+.3}s\n  p95:           {:+.3}s\n  delivery:      {:+.4}\n  collisions:    {:+}\n  spikes:        {:+}\n",
            self.scenario_a,
            self.scenario_b,
            self.median_us as f64 / 1e6,
            self.p95_us as f64 / 1e6,
            self.delivery_ratio,
            self.collisions,
            self.spike_count
        )
    }
}

/// Compare two summaries; they must share duration and node count.
pub fn compare_runs(a: &RunSummary, b: &RunSummary) -> Result<DeltaReport, SummaryError> {
    if a.duration_us != b.duration_us {
        return Err(SummaryError::Incompatible(format!(
            "durations differ: {} vs {}",
            a.duration_us, b.duration_us
        )));
    }
    if a.node_count != b.node_count {
        return Err(SummaryError::Incompatible(format!(
            "node counts differ: {} vs {}",
            a.node_count, b.node_count
        )));
    }
    Ok(DeltaReport {
        scenario_a: a.scenario.clone(),
        scenario_b: b.scenario.clone(),
        median_us: b.aggregate.median_us as i64 - a.aggregate.median_us as i64,
        p95_us: b.aggregate.p95_us as i64 - a.aggregate.p95_us as i64,
        delivery_ratio: b.delivery_ratio - a.delivery_ratio,
        collisions: b.collisions as i64 - a.collisions as i64,
        spike_count: b.aggregate.spike_count as i64 - a.aggregate.spike_count as i64,
    })
}

// ---------------------------------------------------------------------------
// Post-hoc trace checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyReport {
    /// Max sliding-window airtime over the budget across all nodes.
    pub peak_utilization: f64,
    pub violations: usize,
}

/// Scan the full transmission log: for every node, the total airtime
/// inside any sliding window must stay within the budget. Window ends are
/// checked at every transmission end and every start + window, which
/// covers all local maxima of the piecewise-linear occupancy function.
pub fn duty_cycle_report(
    log: &[TransmissionRecord],
    node_count: usize,
    window: SimTime,
    budget_us: u64,
) -> DutyReport {
    let mut peak = 0.0f64;
    let mut violations = 0;
    for node in 0..node_count {
        let spans: Vec<(u64, u64)> = log
            .iter()
            .filter(|t| t.sender.index() == node)
            .map(|t| (t.start.as_micros(), t.end.as_micros()))
            .collect();
        if spans.is_empty() {
            continue;
        }
        let w = window.as_micros();
        let mut candidates: Vec<u64> = Vec::with_capacity(spans.len() * 2);
        candidates.extend(spans.iter().map(|&(_, e)| e));
        candidates.extend(spans.iter().map(|&(s, _)| s + w));
        for &window_end in &candidates {
            let window_start = window_end.saturating_sub(w);
            let mut sum = 0u64;
            for &(s, e) in &spans {
                let lo = s.max(window_start);
                let hi = e.min(window_end);
                if hi > lo {
                    sum += hi - lo;
                }
            }
            let utilization = sum as f64 / budget_us as f64;
            if utilization > peak {
                peak = utilization;
            }
            if sum > budget_us {
                violations += 1;
            }
        }
    }
    DutyReport {
        peak_utilization: peak,
        violations,
    }
}

/// Check that no node's transmissions ever overlap in time
/// (the radio-gate invariant, judged from the physical log).
pub fn self_overlap_violations(log: &[TransmissionRecord], node_count: usize) -> usize {
    let mut violations = 0;
    for node in 0..node_count {
        let mut spans: Vec<(u64, u64)> = log
            .iter()
            .filter(|t| t.sender.index() == node)
            .map(|t| (t.start.as_micros(), t.end.as_micros()))
            .collect();
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                violations += 1;
            }
        }
    }
    violations
}

/// Check the single-owner property: for each service, run spans on
/// different nodes must never overlap in time.
pub fn single_owner_violations(spans: &[ServiceSpan]) -> Vec<String> {
    let mut violations = Vec::new();
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a.service != b.service || a.node == b.node {
                continue;
            }
            let a_end = a.end.expect("finalized span").as_micros();
            let b_end = b.end.expect("finalized span").as_micros();
            let overlap_start = a.start.as_micros().max(b.start.as_micros());
            let overlap_end = a_end.min(b_end);
            if overlap_start < overlap_end {
                violations.push(format!(
                    "service {} ran on {} and {} simultaneously during [{}, {})",
                    a.service.0, a.node, b.node, overlap_start, overlap_end
                ));
            }
        }
    }
    violations
}

/// Packet conservation: sampled = ingested + lost + in-flight, and the
/// exported rows reconcile with the counters exactly.
pub fn conservation_ok(result: &RunResult) -> bool {
    let c = &result.counters;
    c.sampled == c.ingested + c.metrics_lost + c.metrics_in_flight
        && result.latency.len() as u64 == c.ingested
        && result.store_lines.len() as u64 == c.ingested
}
