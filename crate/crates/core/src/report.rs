//! The JSON report. Field order is fixed and no timings are included, so
//! identical runs produce identical bytes.

use serde::Serialize;

use crate::explorer::{DeadlockReport, ExploreOptions, Limit, Report};
use crate::races::RaceReport;

pub const REPORT_VERSION: &str = "1";

/// JSON schema for [`JsonReport`].
pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfigJson {
    pub strategy: String,
    pub cutoffs: bool,
    pub max_events: usize,
    pub max_nodes: usize,
    pub time_limit_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Counts {
    pub max_configs: usize,
    pub exit: usize,
    pub err: usize,
    pub cut: usize,
    pub ssb: usize,
    pub events: usize,
    pub cutoffs: usize,
    pub mutex_events: usize,
    pub condvar_events: usize,
    pub local_events: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct JsonReport<'a> {
    pub version: &'static str,
    pub program: &'a str,
    pub config: RunConfigJson,
    pub counts: Counts,
    /// Digests of the maximal configurations.
    pub configurations: &'a [String],
    pub deadlocks: &'a [DeadlockReport],
    pub races: &'a [RaceReport],
    pub incomplete: bool,
    pub limit: Option<Limit>,
}

impl<'a> JsonReport<'a> {
    pub fn new(program: &'a str, opts: &ExploreOptions, r: &'a Report) -> Self {
        JsonReport {
            version: REPORT_VERSION,
            program,
            config: RunConfigJson {
                strategy: opts.strategy.to_string(),
                cutoffs: opts.cutoffs,
                max_events: opts.max_events,
                max_nodes: opts.max_nodes,
                time_limit_ms: opts.time_limit.map(|t| t.as_millis() as u64),
            },
            counts: Counts {
                max_configs: r.max_configs.len(),
                exit: r.exit,
                err: r.err(),
                cut: r.cut,
                ssb: r.ssb,
                events: r.events,
                cutoffs: r.cutoff_events,
                mutex_events: r.mutex_events,
                condvar_events: r.condvar_events,
                local_events: r.local_events,
            },
            configurations: &r.max_configs,
            deadlocks: &r.deadlocks,
            races: &r.races,
            incomplete: r.incomplete.is_some(),
            limit: r.incomplete,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Human-readable summary lines.
pub fn stats(r: &Report) -> String {
    format!(
        "maximal configurations: {}\n  exit: {}\n  deadlock: {}\n  race: {}\ncut leaves: {}\nssb leaves: {}\n\
         events: {} (cutoffs {}, mutex {}, condvar {}, local {})\nnodes: {}\ninstructions replayed: {}\n{}",
        r.max_configs.len(),
        r.exit,
        r.deadlock,
        r.race_leaves,
        r.cut,
        r.ssb,
        r.events,
        r.cutoff_events,
        r.mutex_events,
        r.condvar_events,
        r.local_events,
        r.nodes,
        r.instructions_replayed,
        match r.incomplete {
            Some(l) => format!("incomplete: {l:?}\n"),
            None => String::new(),
        }
    )
}
