mod common;

use std::collections::BTreeSet;

use common::*;
use unfold_por_core::explorer::{explore, ExploreOptions, LeafKind, SelectionStrategy};
use unfold_por_core::oracle::{reachable_states, Bounds};

#[test]
fn condvar_example_reports_the_lost_wakeup() {
    let x = run("fig3", true);
    let r = &x.report;
    assert_eq!(r.max_configs.len(), 4);
    assert_eq!((r.exit, r.deadlock), (3, 1));
    let d = &r.deadlocks[0];
    assert!(!d.threads.is_empty());
    assert!(d.threads.iter().any(|t| t.reason.contains("wait") || t.reason.contains("cond")));
}

/// Cutoff decisions depend on discovery order, so with cutoffs the visited
/// traces may differ between strategies; without them they may not.
#[test]
fn strategies_agree_on_the_corpus() {
    for name in EQUIVALENCE_CORPUS {
        let counts = |strategy| {
            let x = explore(
                program(name),
                &ExploreOptions {
                    strategy,
                    ..checked(false)
                },
            )
            .unwrap();
            let traces: BTreeSet<_> = explored_traces(&x).into_iter().collect();
            (traces, x.report.exit, x.report.deadlock)
        };
        let fifo = counts(SelectionStrategy::Fifo);
        assert_eq!(fifo, counts(SelectionStrategy::Lifo), "{name}");
        assert_eq!(fifo, counts(SelectionStrategy::Random(7)), "{name}");
    }
}

#[test]
fn only_the_racy_branch_is_cut_short() {
    let x = run("guarded_race", true);
    let r = &x.report;
    assert_eq!(r.race_leaves, 1);
    assert_eq!(r.exit, 1);
    assert_eq!(r.races.len(), 1);
    let race = x.report.leaves.iter().find(|l| l.kind == LeafKind::Race).unwrap();
    let exit = x.report.leaves.iter().find(|l| l.kind == LeafKind::Exit).unwrap();
    let (a, b) = (r.races[0].event_a, r.races[0].event_b);
    assert!(!(x.store.contains(&race.config, a) && x.store.contains(&race.config, b)));
    assert!(!(x.store.contains(&exit.config, a) && x.store.contains(&exit.config, b)));
}

#[test]
fn every_visited_leaf_replays() {
    for name in EQUIVALENCE_CORPUS {
        let mut x = run(name, true);
        let leaves: Vec<_> = x.report.leaves.iter().map(|l| l.config.clone()).collect();
        for c in leaves {
            assert!(x.store.state_of(&c).is_ok(), "{name}");
        }
    }
}

#[test]
fn cutoff_gap_is_covered_without_cutoffs() {
    let reach = reachable_states(&program("cutoff_gap"), Bounds::default()).unwrap();
    let mut x = run("cutoff_gap", false);
    assert_eq!(prefix_states(&mut x), reach);
}

/// Known limitation: with cutoffs, an extension needed to reach two of the
/// states is only derivable past a cutoff event.
#[test]
fn cutoff_gap_misses_two_states_with_cutoffs() {
    let reach = reachable_states(&program("cutoff_gap"), Bounds::default()).unwrap();
    let mut x = run("cutoff_gap", true);
    let covered = prefix_states(&mut x);
    assert!(covered.is_subset(&reach));
    assert_eq!(reach.len() - covered.len(), 2);
}
