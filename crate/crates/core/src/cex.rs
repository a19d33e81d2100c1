//! Conflicting extensions of a configuration: events whose causes lie in the
//! configuration but which conflict with some member.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{statements_of, CondId, MutexId, ThreadId};
use crate::pes::{Configuration, EventId, PesError, Store};
use crate::semantics::{self, Action, BlockReason, Effect};

/// Largest candidate set whose antichains are enumerated in full.
pub const SUBSET_CAP: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CexBatch {
    pub new_events: BTreeSet<EventId>,
    /// Contributions per source event; deadlock extensions are keyed by the
    /// blocked thread's last event, or absent when it has none.
    pub per_source: BTreeMap<Option<EventId>, BTreeSet<EventId>>,
    /// Some subset enumeration hit [`SUBSET_CAP`] and was truncated.
    pub truncated: bool,
    /// The configuration after adding enabled cutoff events.
    pub extended: Option<Configuration>,
}

impl CexBatch {
    fn add(&mut self, source: Option<EventId>, events: impl IntoIterator<Item = EventId>) {
        for e in events {
            self.new_events.insert(e);
            self.per_source.entry(source).or_default().insert(e);
        }
    }
}

pub fn last_of(c: &Configuration, t: ThreadId) -> Option<EventId> {
    c.last_of(t)
}

pub fn last_lock(store: &Store, c: &Configuration, m: MutexId) -> Option<EventId> {
    store.last_lock(c, m)
}

/// The notification that woke the `w2` event `e`: the event in `[e]` that
/// notifies `t` on `c` after its `w1`.
pub fn last_notify(store: &Store, e: EventId, c: CondId, t: ThreadId) -> Option<EventId> {
    let ev = store.event(e);
    let w1 = ev.thread_pred?;
    store
        .events_of(&ev.history)
        .into_iter()
        .find(|x| store.action(*x).effect.notifies(c, t) && store.is_causal(w1, *x))
}

/// Pairwise causally unordered.
pub fn concurrent(store: &Store, events: &[EventId]) -> bool {
    events
        .iter()
        .enumerate()
        .all(|(i, a)| events[i + 1..].iter().all(|b| store.concurrent_pair(*a, *b)))
}

/// `w1` events on `c` in `h` whose thread has not been notified since.
pub fn outstanding_w1(store: &Store, h: &Configuration, c: CondId) -> Vec<EventId> {
    let members = store.events_of(h);
    let mut out = Vec::new();
    for (pos, top) in h.max_per_thread.iter().enumerate() {
        let Some(top) = top else { continue };
        if !matches!(store.action(*top).effect, Effect::W1(c2, _) if c2 == c) {
            continue;
        }
        let t = ThreadId::from_pos(pos);
        let notified = members
            .iter()
            .any(|x| store.action(*x).effect.notifies(c, t) && store.is_causal(*top, *x));
        if !notified {
            out.push(*top);
        }
    }
    out
}

fn history_or_empty(store: &Store, e: Option<EventId>) -> Configuration {
    match e {
        Some(e) => store.event(e).history.clone(),
        None => store.empty_config(),
    }
}

/// All antichains of `cands` (the empty one included). Candidates beyond
/// [`SUBSET_CAP`] are dropped and reported through the flag.
fn antichains(store: &Store, cands: &[EventId], truncated: &mut bool) -> Vec<Vec<EventId>> {
    let cands = if cands.len() > SUBSET_CAP {
        *truncated = true;
        &cands[..SUBSET_CAP]
    } else {
        cands
    };
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(store: &Store, cands: &[EventId], i: usize, cur: &mut Vec<EventId>, out: &mut Vec<Vec<EventId>>) {
        if i == cands.len() {
            out.push(cur.clone());
            return;
        }
        go(store, cands, i + 1, cur, out);
        if cur.iter().all(|x| store.concurrent_pair(*x, cands[i])) {
            cur.push(cands[i]);
            go(store, cands, i + 1, cur, out);
            cur.pop();
        }
    }
    go(store, cands, 0, &mut cur, &mut out);
    out
}

fn intern_after(store: &mut Store, action: Action, h: &Configuration) -> Result<EventId, PesError> {
    let maxima = store.maxima(h);
    Ok(store.intern(action, &maxima)?.0)
}

/// Siblings of a local event's statement enabled after its causes.
pub fn cex_local(store: &mut Store, e: EventId) -> Result<Vec<EventId>, PesError> {
    let ev = store.event(e).clone();
    let Effect::Loc(stmt) = ev.action.effect else {
        return Ok(Vec::new());
    };
    let program = store.program_arc();
    let from = program.statement(stmt).from;
    let causes = store.causes(e);
    let state = store.state_of(&causes)?;
    let mut out = Vec::new();
    for st in statements_of(&program, ev.thread(), from) {
        if st.id == stmt {
            continue;
        }
        let a = Action::new(ev.thread(), Effect::Loc(st.id));
        if semantics::is_enabled(&state, &a, &program) {
            out.push(store.intern(a, &ev.preds)?.0);
        }
    }
    Ok(out)
}

/// Same lock acquisition (or wait re-acquisition) placed after an earlier
/// release of the mutex.
pub fn cex_acquire(store: &mut Store, e: EventId) -> Result<Vec<EventId>, PesError> {
    let ev = store.event(e).clone();
    let i = ev.thread();
    let l = match ev.action.effect {
        Effect::Acq(l) | Effect::W2(_, l) => l,
        _ => return Ok(Vec::new()),
    };
    let k = store.causes(e);
    let e_t = last_of(&k, i);
    let mut p = history_or_empty(store, e_t);
    if let Effect::W2(c, _) = ev.action.effect {
        let e_s = last_notify(store, e, c, i).expect("a woken wait has a notifying cause");
        p = store.union_within(&p, &store.event(e_s).history);
    }
    let e_m = last_lock(store, &p, l);
    let e_r = last_lock(store, &k, l);
    let mut out = Vec::new();
    if e_m == e_r {
        return Ok(out);
    }
    if e_m.is_none_or(|m| store.action(m).effect.releases(l)) {
        out.push(intern_after(store, ev.action.clone(), &p)?);
    }
    let candidates: Vec<EventId> = store
        .diff(&k, &p)
        .into_iter()
        .filter(|x| Some(*x) != e_r && store.action(*x).effect.releases(l))
        .collect();
    for x in candidates {
        let h = store.union_within(&p, &store.event(x).history);
        out.push(intern_after(store, ev.action.clone(), &h)?);
    }
    Ok(out)
}

/// The same `w1` placed before some lost notifications it followed.
pub fn cex_wait(store: &mut Store, e: EventId, truncated: &mut bool) -> Result<Vec<EventId>, PesError> {
    let ev = store.event(e).clone();
    let i = ev.thread();
    let Effect::W1(c, _) = ev.action.effect else {
        return Ok(Vec::new());
    };
    let k = store.causes(e);
    let ht = history_or_empty(store, last_of(&k, i));
    let mut xs: Vec<EventId> = store
        .diff(&k, &ht)
        .into_iter()
        .filter(|x| match &store.action(*x).effect {
            Effect::Sig(c2, None) => *c2 == c,
            Effect::Bro(c2, s) => *c2 == c && !s.contains(&i),
            _ => false,
        })
        .collect();
    xs.sort();
    let mut out = Vec::new();
    for m in antichains(store, &xs, truncated) {
        let h = m.iter().fold(ht.clone(), |acc, x| store.union_within(&acc, &store.event(*x).history));
        if h != k {
            out.push(intern_after(store, ev.action.clone(), &h)?);
        }
    }
    Ok(out)
}

/// Other outcomes of a signal or broadcast: different woken threads, a
/// broadcast in another context, or a lost notification.
pub fn cex_notify(
    store: &mut Store,
    conf: &Configuration,
    e: EventId,
    truncated: &mut bool,
) -> Result<Vec<EventId>, PesError> {
    let ev = store.event(e).clone();
    let i = ev.thread();
    let (c, is_signal) = match &ev.action.effect {
        Effect::Sig(c, _) => (*c, true),
        Effect::Bro(c, _) => (*c, false),
        _ => return Ok(Vec::new()),
    };
    let k = store.causes(e);
    let ht = history_or_empty(store, last_of(&k, i));
    let x_set: Vec<EventId> = store
        .events_of(conf)
        .into_iter()
        .filter(|x| !store.leq(e, *x) && !store.contains(&ht, *x))
        .collect();
    let rest = store.diff(&k, &ht);
    let mut m: Vec<EventId> = rest
        .iter()
        .filter(|x| !rest.iter().any(|y| store.is_causal(**x, *y)))
        .copied()
        .collect();
    m.sort();
    let with = |store: &Store, set: &[EventId]| {
        set.iter().fold(ht.clone(), |acc, x| store.union_within(&acc, &store.event(*x).history))
    };
    let mut out = Vec::new();

    if is_signal {
        let woken = match ev.action.effect {
            Effect::Sig(_, Some(j)) => last_of(&k, j),
            _ => None,
        };
        let mut waits: BTreeSet<EventId> = x_set
            .iter()
            .filter(|x| matches!(store.action(**x).effect, Effect::W1(c2, _) if c2 == c))
            .copied()
            .collect();
        waits.extend(outstanding_w1(store, &ht, c));
        for w in waits {
            if Some(w) == woken {
                continue;
            }
            let j = store.event(w).thread();
            let h = with(store, &[w]);
            out.push(intern_after(store, Action::new(i, Effect::Sig(c, Some(j))), &h)?);
        }
    } else {
        let cands: Vec<EventId> = x_set
            .iter()
            .filter(|x| match store.action(**x).effect {
                Effect::W1(c2, _) => c2 == c,
                Effect::Sig(c2, Some(_)) => c2 == c,
                _ => false,
            })
            .copied()
            .collect();
        for mm in antichains(store, &cands, truncated) {
            if mm == m {
                continue;
            }
            let h = with(store, &mm);
            let waiting = outstanding_w1(store, &h, c);
            if waiting.is_empty() {
                continue;
            }
            let tids: BTreeSet<ThreadId> = waiting.iter().map(|w| store.event(*w).thread()).collect();
            out.push(intern_after(store, Action::new(i, Effect::Bro(c, tids)), &h)?);
        }
    }

    // lost notifications
    let lost = Action::new(
        i,
        if is_signal {
            Effect::Sig(c, None)
        } else {
            Effect::Bro(c, BTreeSet::new())
        },
    );
    let sigs: Vec<EventId> = x_set
        .iter()
        .filter(|x| matches!(store.action(**x).effect, Effect::Sig(c2, Some(_)) if c2 == c))
        .copied()
        .collect();
    let mut shapes = antichains(store, &sigs, truncated);
    shapes.extend(
        x_set
            .iter()
            .filter(|x| matches!(&store.action(**x).effect, Effect::Bro(c2, s) if *c2 == c && !s.is_empty()))
            .map(|x| vec![*x]),
    );
    for mm in shapes {
        if mm == m {
            continue;
        }
        let h = with(store, &mm);
        if outstanding_w1(store, &h, c).is_empty() {
            out.push(intern_after(store, lost.clone(), &h)?);
        }
    }
    Ok(out)
}

/// Extensions for threads stuck on a lock (or on re-acquiring after a
/// wakeup) in `conf`: the same acquisition after an earlier release.
pub fn deadlock_cex(store: &mut Store, conf: &Configuration) -> Result<Vec<(Option<EventId>, EventId)>, PesError> {
    let program = store.program_arc();
    let state = store.state_of(conf)?;
    let mut out = Vec::new();
    for i in program.thread_ids() {
        let (action, l, cond) = match semantics::block_reason(&state, &program, i) {
            BlockReason::Lock(l) => (Action::new(i, Effect::Acq(l)), l, None),
            BlockReason::WaitReacquire(c, l) => (Action::new(i, Effect::W2(c, l)), l, Some(c)),
            _ => continue,
        };
        let e_t = last_of(conf, i);
        let mut p = history_or_empty(store, e_t);
        if let Some(c) = cond {
            let e_s = store
                .events_of(conf)
                .into_iter()
                .filter(|x| store.action(*x).effect.notifies(c, i))
                .max_by_key(|x| store.event(*x).depth)
                .expect("a woken thread has a notification");
            p = store.union_within(&p, &store.event(e_s).history);
        }
        let e_m = last_lock(store, &p, l);
        if e_m == last_lock(store, conf, l) {
            continue;
        }
        if e_m.is_none_or(|m| store.action(m).effect.releases(l)) {
            out.push((e_t, intern_after(store, action.clone(), &p)?));
        }
        let candidates: Vec<EventId> = store
            .diff(conf, &p)
            .into_iter()
            .filter(|x| store.action(*x).effect.releases(l))
            .collect();
        for x in candidates {
            let h = store.union_within(&p, &store.event(x).history);
            out.push((e_t, intern_after(store, action.clone(), &h)?));
        }
    }
    Ok(out)
}

/// Adds enabled cutoff events to `conf` until none is left.
pub fn add_enabled_cutoffs(store: &mut Store, conf: &Configuration) -> Result<Configuration, PesError> {
    let mut cur = conf.clone();
    loop {
        let state = store.state_of(&cur)?;
        let en = store.enabled_events(&cur, &state)?;
        let Some(e) = en.into_iter().find(|e| store.event(*e).cutoff) else {
            return Ok(cur);
        };
        cur = store.extend_unchecked(&cur, e);
    }
}

/// Conflicting extensions of a leaf configuration.
pub fn cex_main(store: &mut Store, conf: &Configuration) -> Result<CexBatch, PesError> {
    let full = add_enabled_cutoffs(store, conf)?;
    let mut batch = CexBatch::default();
    let mut truncated = false;
    for e in store.events_of(&full) {
        let produced = match store.action(e).effect {
            Effect::Loc(_) => cex_local(store, e)?,
            Effect::Acq(_) | Effect::W2(..) => cex_acquire(store, e)?,
            Effect::W1(..) => cex_wait(store, e, &mut truncated)?,
            Effect::Sig(..) | Effect::Bro(..) => cex_notify(store, &full, e, &mut truncated)?,
            Effect::Rel(_) => Vec::new(),
        };
        batch.add(Some(e), produced);
    }
    for (source, e) in deadlock_cex(store, &full)? {
        batch.add(source, [e]);
    }
    batch.new_events.retain(|e| !store.contains(&full, *e));
    for v in batch.per_source.values_mut() {
        v.retain(|e| !store.contains(&full, *e));
    }
    batch.truncated = truncated;
    batch.extended = Some(full);
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;
    use std::sync::Arc;

    /// Runs `conf` forward by always picking the first enabled event.
    fn run_first(store: &mut Store) -> Configuration {
        let mut c = store.empty_config();
        loop {
            let st = store.state_of(&c).unwrap();
            let en = store.enabled_events(&c, &st).unwrap();
            match en.first() {
                Some(e) => c = store.extend_unchecked(&c, *e),
                None => return c,
            }
        }
    }

    #[test]
    fn single_thread_has_no_conflicting_extensions() {
        let p = parse_program("var x = 0\nmutex m\nthread a { lock m\n x = 1\n unlock m }\n").unwrap();
        let mut s = Store::new(Arc::new(p), false);
        let c = run_first(&mut s);
        let batch = cex_main(&mut s, &c).unwrap();
        assert!(batch.new_events.is_empty());
    }

    #[test]
    fn lock_order_alternative() {
        let p = parse_program("mutex m\nthread a { lock m\n unlock m }\nthread b { lock m\n unlock m }\n").unwrap();
        let mut s = Store::new(Arc::new(p), false);
        let c = run_first(&mut s);
        // thread 1 first, then thread 2 acquires after thread 1's release
        let events = s.events_of(&c);
        let acq2 = *events
            .iter()
            .find(|e| s.event(**e).thread() == ThreadId(2) && s.event(**e).seq == 1)
            .unwrap();
        let ext = cex_acquire(&mut s, acq2).unwrap();
        assert_eq!(ext.len(), 1);
        let alt = s.event(ext[0]);
        assert!(alt.preds.is_empty());
        assert!(s.in_conflict(ext[0], events[0]));
        let batch = cex_main(&mut s, &c).unwrap();
        assert_eq!(batch.new_events, [ext[0]].into());
    }

    #[test]
    fn choose_siblings() {
        let p = parse_program("var x = 0\nthread a { x = choose(1, 2, 3) }\n").unwrap();
        let mut s = Store::new(Arc::new(p), false);
        let c = run_first(&mut s);
        let e = s.events_of(&c)[0];
        assert_eq!(cex_local(&mut s, e).unwrap().len(), 2);
    }

    #[test]
    fn guard_siblings_are_not_enabled() {
        let p = parse_program("var x = 0\nthread a { if x < 0 { x = 1 } }\n").unwrap();
        let mut s = Store::new(Arc::new(p), false);
        let c = run_first(&mut s);
        let e = s.events_of(&c)[0];
        assert!(cex_local(&mut s, e).unwrap().is_empty());
    }
}
