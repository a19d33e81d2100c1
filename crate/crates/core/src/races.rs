//! Data-race detection on local events, following the causality of the
//! event structure.

use serde::Serialize;

use crate::pes::{Configuration, EventId, Store};
use crate::semantics::Effect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RaceReport {
    pub variable: String,
    /// The event already in the configuration.
    pub event_a: EventId,
    /// The event being appended.
    pub event_b: EventId,
    pub kinds: (AccessKind, AccessKind),
    /// Digest of the configuration that exhibits both accesses.
    pub witness: String,
}

/// Races between the local event `e`, about to extend `c`, and the local
/// events of `c` on other threads that are not causes of `e`.
pub fn check_event_races(store: &Store, c: &Configuration, e: EventId) -> Vec<RaceReport> {
    let program = store.program();
    let ev = store.event(e);
    let Effect::Loc(stmt_b) = ev.action.effect else {
        return Vec::new();
    };
    let acc_b = &program.statement(stmt_b).access;
    if acc_b.reads.is_empty() && acc_b.writes.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut witness = None;
    for x in store.events_of(c) {
        let other = store.event(x);
        if other.thread() == ev.thread() || store.contains(&ev.history, x) {
            continue;
        }
        let Effect::Loc(stmt_a) = other.action.effect else {
            continue;
        };
        let acc_a = &program.statement(stmt_a).access;
        let kind = |acc: &crate::model::AccessInfo, v: &crate::model::VarId| {
            if acc.writes.contains(v) {
                Some(AccessKind::Write)
            } else if acc.reads.contains(v) {
                Some(AccessKind::Read)
            } else {
                None
            }
        };
        for (v, decl) in program.vars.iter().enumerate() {
            let v = crate::model::VarId(v as u32);
            let (Some(ka), Some(kb)) = (kind(acc_a, &v), kind(acc_b, &v)) else {
                continue;
            };
            if ka == AccessKind::Read && kb == AccessKind::Read {
                continue;
            }
            let witness = witness
                .get_or_insert_with(|| store.digest(&store.extend_unchecked(c, e)))
                .clone();
            out.push(RaceReport {
                variable: decl.name.clone(),
                event_a: x,
                event_b: e,
                kinds: (ka, kb),
                witness,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;
    use std::sync::Arc;

    fn first_path(src: &str) -> (Store, Vec<RaceReport>) {
        let mut s = Store::new(Arc::new(parse_program(src).unwrap()), false);
        let mut c = s.empty_config();
        let mut races = Vec::new();
        loop {
            let st = s.state_of(&c).unwrap();
            let en = s.enabled_events(&c, &st).unwrap();
            let Some(e) = en.first().copied() else { break };
            races.extend(check_event_races(&s, &c, e));
            c = s.extend_unchecked(&c, e);
        }
        (s, races)
    }

    #[test]
    fn write_write() {
        let (s, races) = first_path("var x = 0\nthread a { x = 1 }\nthread b { x = 2 }\n");
        assert_eq!(races.len(), 1);
        assert_eq!(races[0].variable, "x");
        assert_eq!(races[0].kinds, (AccessKind::Write, AccessKind::Write));
        assert!(s.concurrent_pair(races[0].event_a, races[0].event_b));
    }

    #[test]
    fn locked_writes_do_not_race() {
        let (_, races) = first_path(
            "var x = 0\nmutex m\nthread a { lock m\n x = 1\n unlock m }\nthread b { lock m\n x = 2\n unlock m }\n",
        );
        assert!(races.is_empty());
    }

    #[test]
    fn concurrent_reads_do_not_race() {
        let (_, races) = first_path("var x = 0\nthread a { reg r = 0\n r = x }\nthread b { reg r = 0\n r = x }\n");
        assert!(races.is_empty());
    }
}
