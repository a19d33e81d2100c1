#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use unfold_por_core::explorer::{explore, Exploration, ExploreOptions, LeafKind};
use unfold_por_core::model::{parse_program, Program};
use unfold_por_core::oracle::TraceClass;
use unfold_por_core::pes::{Configuration, Store};
use unfold_por_core::semantics::ConcreteState;

/// Race-free, terminating programs small enough for the oracle.
pub const EQUIVALENCE_CORPUS: &[&str] = &[
    "fig3",
    "fig1",
    "two_lock",
    "three_lock",
    "abba",
    "prodcons",
    "broadcast",
    "signal2",
    "choose_branch",
    "indep",
    "lost_signal",
    "loop_counter",
    "locked_ww",
    "locked_rw",
];

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn source(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(format!("{name}.cp"))).unwrap()
}

pub fn program(name: &str) -> Arc<Program> {
    Arc::new(parse_program(&source(name)).unwrap())
}

pub fn checked(cutoffs: bool) -> ExploreOptions {
    ExploreOptions {
        cutoffs,
        check_invariants: true,
        record_leaves: true,
        ..Default::default()
    }
}

pub fn run(name: &str, cutoffs: bool) -> Exploration {
    explore(program(name), &checked(cutoffs)).unwrap()
}

/// Trace classes of the maximal configurations visited.
pub fn explored_traces(x: &Exploration) -> Vec<TraceClass> {
    x.report
        .leaves
        .iter()
        .filter(|l| matches!(l.kind, LeafKind::Exit | LeafKind::Deadlock))
        .map(|l| {
            let run: Vec<_> = x.store.interleave(&l.config);
            TraceClass::from_run(&run)
        })
        .collect()
}

/// States of every configuration below some visited leaf.
pub fn prefix_states(x: &mut Exploration) -> HashSet<ConcreteState> {
    let leaves: Vec<Configuration> = x.report.leaves.iter().map(|l| l.config.clone()).collect();
    let store: &mut Store = &mut x.store;
    let mut states = HashSet::new();
    for leaf in leaves {
        let mut seen: HashSet<Configuration> = HashSet::new();
        let members: BTreeSet<_> = store.events_of(&leaf).into_iter().collect();
        let mut stack = vec![store.empty_config()];
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            states.insert(store.state_of(&c).unwrap());
            for e in &members {
                if !store.contains(&c, *e) && store.is_enabled_at(&c, *e) {
                    stack.push(store.extend_unchecked(&c, *e));
                }
            }
        }
    }
    states
}
