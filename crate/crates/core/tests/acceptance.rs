//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test -p unfold-por-core --test acceptance`.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unfold_por_core::cutoff::{Fingerprint, Fingerprinter};
use unfold_por_core::explorer::{explore, ExploreOptions, Limit, SelectionStrategy};
use unfold_por_core::independence::is_independent;
use unfold_por_core::oracle::{enumerate_runs, fixpoint_unfold, reachable_states, Bounds, CanonicalNames};
use unfold_por_core::races::AccessKind;
use unfold_por_core::report::JsonReport;
use unfold_por_core::semantics::{self, initial_state};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))
}

/// Condvar example: four maximal configurations, one of them deadlocked.
fn c1() -> Outcome {
    let start = Instant::now();
    let x = run("fig3", false);
    within(start, Duration::from_secs(1))?;
    let r = &x.report;
    ensure(r.max_configs.len() == 4, format!("{} maximal configurations", r.max_configs.len()))?;
    ensure(r.deadlock == 1, format!("{} deadlocks", r.deadlock))?;
    Ok(format!("4 maximal, 1 deadlock in {:?}", start.elapsed()))
}

/// Input-dependent branch: count equals the oracle's trace count.
fn c2() -> Outcome {
    let start = Instant::now();
    let x = run("fig1", false);
    within(start, Duration::from_secs(1))?;
    let oracle = enumerate_runs(&program("fig1"), Bounds::default()).map_err(|e| e.to_string())?;
    let n = x.report.max_configs.len();
    ensure(
        n == oracle.maximal_traces.len(),
        format!("{n} configurations vs {} traces", oracle.maximal_traces.len()),
    )?;
    Ok(format!("{n} maximal configurations = oracle"))
}

/// Bijection with the oracle's maximal traces and equal reachable states.
fn c3() -> Outcome {
    let start = Instant::now();
    ensure(EQUIVALENCE_CORPUS.len() >= 10, "corpus too small")?;
    for name in EQUIVALENCE_CORPUS {
        let p = program(name);
        ensure(p.num_threads() <= 3, format!("{name}: too many threads"))?;
        ensure(p.statements.len() <= 30, format!("{name}: too many statements"))?;
        let oracle = enumerate_runs(&p, Bounds::default()).map_err(|e| format!("{name}: {e}"))?;
        ensure(oracle.racy_vars.is_empty(), format!("{name}: racy"))?;
        ensure(oracle.reachable.len() <= 10_000, format!("{name}: too many states"))?;
        let mut x = run(name, false);
        let traces = explored_traces(&x);
        let distinct: BTreeSet<_> = traces.iter().cloned().collect();
        ensure(distinct.len() == traces.len(), format!("{name}: not injective"))?;
        ensure(distinct == oracle.maximal_traces, format!("{name}: trace sets differ"))?;
        ensure(prefix_states(&mut x) == oracle.reachable, format!("{name}: state sets differ"))?;
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("{} programs exact", EQUIVALENCE_CORPUS.len()))
}

/// Interned events equal the fixpoint unfolding up to canonical names.
fn c4() -> Outcome {
    let mut checked = 0;
    for name in EQUIVALENCE_CORPUS {
        let x = run(name, false);
        if x.store.len() > 200 {
            continue;
        }
        let naive = fixpoint_unfold(&program(name), 200).map_err(|e| format!("{name}: {e}"))?;
        let mut names = CanonicalNames::default();
        let ours = names.of_store(&x.store);
        let theirs = names.of_naive(&naive);
        ensure(ours.len() == x.store.len(), format!("{name}: duplicate events"))?;
        ensure(ours == theirs, format!("{name}: {} vs {} events", ours.len(), theirs.len()))?;
        checked += 1;
    }
    ensure(checked > 0, "no program small enough")?;
    Ok(format!("{checked} programs exact"))
}

/// No maximal configuration is visited twice; SSB leaves stay rare.
fn c5() -> Outcome {
    let (mut leaves, mut ssb) = (0, 0);
    for name in EQUIVALENCE_CORPUS {
        for cutoffs in [false, true] {
            let r = run(name, cutoffs).report;
            ensure(r.duplicates == 0, format!("{name}: {} duplicates", r.duplicates))?;
            let unique: HashSet<_> = r.max_configs.iter().collect();
            ensure(unique.len() == r.max_configs.len(), format!("{name}: repeated digest"))?;
            leaves += r.leaf_count();
            ssb += r.ssb;
        }
    }
    ensure(ssb * 10 <= leaves, format!("{ssb} SSB of {leaves} leaves"))?;
    Ok(format!("0 duplicates, {ssb} SSB of {leaves} leaves"))
}

/// A nonterminating loop with finitely many states.
fn c6() -> Outcome {
    let start = Instant::now();
    let mut on = run("spin", true);
    let took = start.elapsed();
    within(start, Duration::from_secs(5))?;
    ensure(on.report.incomplete.is_none(), "did not terminate with cutoffs")?;
    let off = explore(
        program("spin"),
        &ExploreOptions {
            cutoffs: false,
            max_events: 5_000,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(off.report.incomplete == Some(Limit::MaxEvents), "no event limit without cutoffs")?;
    let expected = reachable_states(&program("spin"), Bounds::default()).map_err(|e| e.to_string())?;
    let covered = prefix_states(&mut on);
    ensure(covered == expected, format!("{} of {} states covered", covered.len(), expected.len()))?;
    Ok(format!(
        "terminates in {took:?} with {} cutoffs; {} states covered",
        on.report.cutoff_events,
        expected.len()
    ))
}

/// Composed fingerprints equal recomputed ones; no collisions.
fn c7() -> Outcome {
    let mut events = 0;
    let mut states = 0;
    for name in EQUIVALENCE_CORPUS.iter().chain(&["spin"]) {
        let p = program(name);
        let fp = Fingerprinter::new(&p);
        ensure(fp.fingerprint(&initial_state(&p), &p) == Fingerprint::ZERO, "initial not zero")?;
        for cutoffs in [false, true] {
            if *name == "spin" && !cutoffs {
                continue;
            }
            let x = run(name, cutoffs);
            for ev in x.store.events() {
                ensure(
                    ev.fingerprint == fp.fingerprint(ev.state(), &p),
                    format!("{name}: event {}", ev.id.0),
                )?;
                events += 1;
            }
        }
        let reach = reachable_states(&p, Bounds::default()).map_err(|e| e.to_string())?;
        let prints: HashSet<_> = reach.iter().map(|s| fp.fingerprint(s, &p)).collect();
        ensure(prints.len() == reach.len(), format!("{name}: collision"))?;
        states += reach.len();
    }
    Ok(format!("{events} events bit-exact, {states} states collision-free"))
}

/// Racy programs are reported, their locked twins are not.
fn c8() -> Outcome {
    for (name, kinds) in [
        ("racy_ww", (AccessKind::Write, AccessKind::Write)),
        ("racy_rw", (AccessKind::Write, AccessKind::Read)),
    ] {
        let x = run(name, true);
        let r = x.report.races.first().ok_or(format!("{name}: no report"))?;
        ensure(r.variable == "x", format!("{name}: variable {}", r.variable))?;
        ensure(r.kinds == kinds, format!("{name}: kinds {:?}", r.kinds))?;
        ensure(x.store.concurrent_pair(r.event_a, r.event_b), format!("{name}: ordered pair"))?;
        ensure(
            x.store.event(r.event_a).thread() != x.store.event(r.event_b).thread(),
            format!("{name}: same thread"),
        )?;
    }
    for name in ["locked_ww", "locked_rw"] {
        let n = run(name, true).report.races.len();
        ensure(n == 0, format!("{name}: {n} reports"))?;
    }
    Ok("2 racy programs reported, 2 locked twins clean".into())
}

/// Independent enabled actions commute and keep each other enabled.
fn c9() -> Outcome {
    let mut pool = Vec::new();
    for name in EQUIVALENCE_CORPUS {
        let p = program(name);
        let reach = reachable_states(&p, Bounds::default()).map_err(|e| e.to_string())?;
        let mut sorted: Vec<_> = reach.into_iter().collect();
        sorted.sort_by_key(|s| format!("{s:?}"));
        for s in sorted {
            let en = semantics::enabled(&s, &p).map_err(|e| e.to_string())?;
            for (i, a) in en.iter().enumerate() {
                for b in &en[i + 1..] {
                    if is_independent(a, b) {
                        pool.push((name, s.clone(), a.clone(), b.clone()));
                    }
                }
            }
        }
    }
    ensure(!pool.is_empty(), "no independent pairs")?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let (name, s, a, b) = pool.choose(&mut rng).unwrap();
        let p = program(name);
        let sa = semantics::fire(s, a, &p).map_err(|e| e.to_string())?;
        let sb = semantics::fire(s, b, &p).map_err(|e| e.to_string())?;
        ensure(semantics::is_enabled(&sa, b, &p), format!("{name}: b disabled by a"))?;
        ensure(semantics::is_enabled(&sb, a, &p), format!("{name}: a disabled by b"))?;
        let ab = semantics::fire(&sa, b, &p).map_err(|e| e.to_string())?;
        let ba = semantics::fire(&sb, a, &p).map_err(|e| e.to_string())?;
        ensure(ab == ba, format!("{name}: {a} and {b} do not commute"))?;
    }
    Ok(format!("1000 samples from {} pairs, 0 failures", pool.len()))
}

/// Identical configuration and seed give identical artifacts.
fn c10() -> Outcome {
    for name in ["fig3", "signal2", "broadcast", "guarded_race"] {
        let opts = ExploreOptions {
            strategy: SelectionStrategy::Random(42),
            ..Default::default()
        };
        let artifacts = || {
            let x = explore(program(name), &opts).unwrap();
            (
                JsonReport::new(name, &opts, &x.report).to_json(),
                x.store.to_dot(),
                x.tree_dot(),
            )
        };
        ensure(artifacts() == artifacts(), format!("{name}: artifacts differ"))?;
    }
    Ok("4 programs byte-identical".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("condvar example counts", c1),
        ("input-branch example vs oracle", c2),
        ("oracle equivalence", c3),
        ("unfolding equality", c4),
        ("no duplicate configurations", c5),
        ("cutoff termination", c6),
        ("fingerprint integrity", c7),
        ("race detection", c8),
        ("independence validity", c9),
        ("determinism", c10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
