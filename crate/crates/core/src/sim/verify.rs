//! Checks simulated runs against an abstraction and its flow pipes.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Trace;
use crate::abstraction::Abstraction;
use crate::partition::RegionId;
use crate::reach::{FlowPipe, FlowPipeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("configuration hash mismatch: {what} has {found}, abstraction has {expected}")]
    HashMismatch {
        what: String,
        found: String,
        expected: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCheck {
    pub trace: usize,
    pub event: usize,
    pub source: RegionId,
    pub dest: RegionId,
    pub steps: usize,
    pub interval_ok: bool,
    /// `None` when skipped because the source state lies beyond the truncation radius.
    pub edge_ok: Option<bool>,
    pub pipe_ok: Option<bool>,
    pub excursion: bool,
}

impl EventCheck {
    pub fn passed(&self) -> bool {
        self.interval_ok && self.edge_ok != Some(false) && self.pipe_ok != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub traces: usize,
    pub events: usize,
    pub interval_violations: usize,
    pub edge_violations: usize,
    pub edges_checked: usize,
    pub pipe_violations: usize,
    pub pipes_checked: usize,
    pub excursions: usize,
    pub passed: bool,
    /// Failing events only.
    pub failures: Vec<EventCheck>,
}

/// Checks every completed event: the realized steps lie in the source interval,
/// the move is an edge, and the post-event state lies in the source pipe at the
/// realized step. Events starting beyond the truncation radius skip the last two.
pub fn verify(traces: &[Trace], abs: &Abstraction, pipes: Option<&FlowPipeSet>) -> Result<VerifyReport, VerifyError> {
    let expected = &abs.meta.config_hash;
    for (i, t) in traces.iter().enumerate() {
        if &t.config_hash != expected {
            return Err(VerifyError::HashMismatch {
                what: format!("trace {i}"),
                found: t.config_hash.clone(),
                expected: expected.clone(),
            });
        }
    }
    if let Some(p) = pipes {
        if &p.config_hash != expected {
            return Err(VerifyError::HashMismatch {
                what: "flow pipes".into(),
                found: p.config_hash.clone(),
                expected: expected.clone(),
            });
        }
    }
    let by_region: BTreeMap<RegionId, &FlowPipe> = pipes
        .map(|p| p.pipes.iter().map(|f| (f.region, f)).collect())
        .unwrap_or_default();
    let truncation = pipes.map(|p| p.truncation_radius).unwrap_or(f64::INFINITY);

    let mut report = VerifyReport {
        config_hash: expected.clone(),
        traces: traces.len(),
        events: 0,
        interval_violations: 0,
        edge_violations: 0,
        edges_checked: 0,
        pipe_violations: 0,
        pipes_checked: 0,
        excursions: 0,
        passed: true,
        failures: Vec::new(),
    };
    for (ti, trace) in traces.iter().enumerate() {
        for (ei, e) in trace.events.iter().enumerate() {
            report.events += 1;
            let interval_ok = abs
                .state(e.source)
                .is_some_and(|s| s.k_lo <= e.steps && e.steps <= s.k_hi);
            let start_norm = DVector::from_column_slice(&e.state_start).norm();
            let excursion = pipes.is_some() && start_norm >= truncation;
            let (edge_ok, pipe_ok) = if excursion {
                (None, None)
            } else {
                let edge = Some(abs.has_edge(e.source, e.dest));
                let pipe = pipes.map(|_| {
                    by_region
                        .get(&e.source)
                        .is_some_and(|p| p.contains_at(e.steps, &DVector::from_column_slice(&e.state_event)))
                });
                (edge, pipe)
            };
            let check = EventCheck {
                trace: ti,
                event: ei,
                source: e.source,
                dest: e.dest,
                steps: e.steps,
                interval_ok,
                edge_ok,
                pipe_ok,
                excursion,
            };
            report.interval_violations += usize::from(!interval_ok);
            report.excursions += usize::from(excursion);
            if let Some(ok) = edge_ok {
                report.edges_checked += 1;
                report.edge_violations += usize::from(!ok);
            }
            if let Some(ok) = pipe_ok {
                report.pipes_checked += 1;
                report.pipe_violations += usize::from(!ok);
            }
            if !check.passed() {
                report.failures.push(check);
            }
        }
    }
    report.passed = report.failures.is_empty();
    Ok(report)
}
