//! Prime event structure store: events interned by canonical name (action
//! plus maximal causes), causality and conflict queries, configurations and
//! replay.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};
use serde::Serialize;
use thiserror::Error;

use crate::cutoff::{delta_of_fire, CutoffTable, Fingerprint};
use crate::independence::is_dependent;
use crate::model::{MutexId, Program, ThreadId};
use crate::semantics::{self, Action, ConcreteState, Effect, SemanticsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EventId(pub u32);

impl EventId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// A configuration, represented by its maximal event on each thread (indexed
/// by thread position). Every event of a thread below that maximum belongs to
/// the configuration, and nothing else does.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub max_per_thread: Vec<Option<EventId>>,
}

impl Configuration {
    pub fn empty(threads: usize) -> Self {
        Configuration {
            max_per_thread: vec![None; threads],
        }
    }

    pub fn last_of(&self, t: ThreadId) -> Option<EventId> {
        self.max_per_thread[t.pos()]
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub id: EventId,
    pub action: Action,
    /// Maximal causes, sorted by id.
    pub preds: Vec<EventId>,
    /// Size of the local configuration `[e]`.
    pub depth: u32,
    /// Position in the thread's chain, starting at 1.
    pub seq: u32,
    pub thread_pred: Option<EventId>,
    /// The local configuration `[e]`.
    pub history: Configuration,
    pub delta: Fingerprint,
    pub thread_updates: Fingerprint,
    pub fingerprint: Fingerprint,
    pub cutoff: bool,
    /// Some strict cause is a cutoff, or beyond one.
    pub beyond_cutoff: bool,
    jumps: Vec<EventId>,
    last_lock: Vec<Option<EventId>>,
    state: Arc<ConcreteState>,
}

impl Event {
    pub fn thread(&self) -> ThreadId {
        self.action.thread
    }

    /// State reached by firing `[e]`.
    pub fn state(&self) -> &ConcreteState {
        &self.state
    }

    /// Pruned events and anything caused by them.
    pub fn is_pruned(&self) -> bool {
        self.cutoff || self.beyond_cutoff
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PesError {
    #[error("malformed causes: {0}")]
    MalformedCauses(String),
    #[error("action {0} is not enabled after its causes")]
    NotEnabledAction(Action),
    #[error("event {} is not an enabled extension of the configuration", .0.0)]
    NotEnabledEvent(EventId),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// The unfolding prefix discovered so far.
#[derive(Debug)]
pub struct Store {
    program: Arc<Program>,
    events: Vec<Event>,
    index: HashMap<(Action, Vec<EventId>), EventId>,
    cutoffs: bool,
    table: CutoffTable,
    initial: Arc<ConcreteState>,
    fires: u64,
}

impl Store {
    pub fn new(program: Arc<Program>, cutoffs: bool) -> Self {
        let initial = Arc::new(semantics::initial_state(&program));
        Store {
            program,
            events: Vec::new(),
            index: HashMap::new(),
            cutoffs,
            table: CutoffTable::new(),
            initial,
            fires: 0,
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn program_arc(&self) -> Arc<Program> {
        self.program.clone()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, e: EventId) -> &Event {
        &self.events[e.idx()]
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn action(&self, e: EventId) -> &Action {
        &self.events[e.idx()].action
    }

    pub fn cutoffs_enabled(&self) -> bool {
        self.cutoffs
    }

    /// Number of transitions fired while replaying or creating events.
    pub fn fires(&self) -> u64 {
        self.fires
    }

    pub fn empty_config(&self) -> Configuration {
        Configuration::empty(self.program.num_threads())
    }

    /// Ancestor of `e` on its own thread with chain position `seq`.
    fn ancestor(&self, mut e: EventId, seq: u32) -> Option<EventId> {
        let mut cur = self.event(e).seq;
        if seq > cur || seq == 0 {
            return None;
        }
        while cur > seq {
            let diff = cur - seq;
            let k = (31 - diff.leading_zeros()) as usize;
            let ev = self.event(e);
            let k = k.min(ev.jumps.len() - 1);
            e = ev.jumps[k];
            cur = self.event(e).seq;
        }
        Some(e)
    }

    pub fn contains(&self, c: &Configuration, e: EventId) -> bool {
        let ev = self.event(e);
        match c.max_per_thread[ev.thread().pos()] {
            Some(top) => self.ancestor(top, ev.seq) == Some(e),
            None => false,
        }
    }

    /// `a ≤ b` in causality.
    pub fn leq(&self, a: EventId, b: EventId) -> bool {
        a == b || self.contains(&self.event(b).history, a)
    }

    /// `a < b` in causality.
    pub fn is_causal(&self, a: EventId, b: EventId) -> bool {
        a != b && self.contains(&self.event(b).history, a)
    }

    pub fn concurrent_pair(&self, a: EventId, b: EventId) -> bool {
        !self.leq(a, b) && !self.leq(b, a)
    }

    pub fn in_conflict(&self, a: EventId, b: EventId) -> bool {
        if self.leq(a, b) || self.leq(b, a) {
            return false;
        }
        self.union(&self.event(a).history, &self.event(b).history).is_none()
    }

    pub fn size(&self, c: &Configuration) -> u32 {
        c.max_per_thread.iter().flatten().map(|e| self.event(*e).seq).sum()
    }

    /// Events of `c` on thread `t`, from the top of the chain downwards.
    fn chain_down<'a>(&'a self, top: Option<EventId>) -> impl Iterator<Item = EventId> + 'a {
        std::iter::successors(top, move |e| self.event(*e).thread_pred)
    }

    /// Events of `a` that are not in `b`.
    pub fn diff(&self, a: &Configuration, b: &Configuration) -> Vec<EventId> {
        let mut out = Vec::new();
        for top in &a.max_per_thread {
            for e in self.chain_down(*top) {
                if self.contains(b, e) {
                    break;
                }
                out.push(e);
            }
        }
        out
    }

    pub fn events_of(&self, c: &Configuration) -> Vec<EventId> {
        let mut out: Vec<EventId> = c
            .max_per_thread
            .iter()
            .flat_map(|top| self.chain_down(*top))
            .collect();
        out.sort();
        out
    }

    /// Union of two configurations that are known to be compatible (for
    /// instance both subsets of one configuration).
    pub fn union_within(&self, a: &Configuration, b: &Configuration) -> Configuration {
        let max_per_thread = a
            .max_per_thread
            .iter()
            .zip(&b.max_per_thread)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => {
                    if self.event(*x).seq >= self.event(*y).seq {
                        Some(*x)
                    } else {
                        Some(*y)
                    }
                }
                (x, y) => x.or(*y),
            })
            .collect();
        Configuration { max_per_thread }
    }

    /// Union of two configurations, or `None` if it is not conflict-free.
    pub fn union(&self, a: &Configuration, b: &Configuration) -> Option<Configuration> {
        for (x, y) in a.max_per_thread.iter().zip(&b.max_per_thread) {
            if let (Some(x), Some(y)) = (x, y) {
                let (deep, shallow) = if self.event(*x).seq >= self.event(*y).seq {
                    (*x, *y)
                } else {
                    (*y, *x)
                };
                if self.ancestor(deep, self.event(shallow).seq) != Some(shallow) {
                    return None;
                }
            }
        }
        let only_a: Vec<EventId> = self
            .diff(a, b)
            .into_iter()
            .filter(|e| !self.action(*e).effect.is_local())
            .collect();
        if !only_a.is_empty() {
            let only_b: Vec<EventId> = self
                .diff(b, a)
                .into_iter()
                .filter(|e| !self.action(*e).effect.is_local())
                .collect();
            for x in &only_a {
                for y in &only_b {
                    if is_dependent(self.action(*x), self.action(*y)) {
                        return None;
                    }
                }
            }
        }
        Some(self.union_within(a, b))
    }

    /// Causally maximal events of `c`.
    pub fn maxima(&self, c: &Configuration) -> Vec<EventId> {
        let tops: Vec<EventId> = c.max_per_thread.iter().flatten().copied().collect();
        let mut out: Vec<EventId> = tops
            .iter()
            .filter(|e| !tops.iter().any(|f| f != *e && self.is_causal(**e, *f)))
            .copied()
            .collect();
        out.sort();
        out
    }

    /// Configuration generated by the local configurations of `events`.
    pub fn closure(&self, events: &[EventId]) -> Configuration {
        events.iter().fold(self.empty_config(), |acc, e| {
            self.union_within(&acc, &self.event(*e).history)
        })
    }

    /// The local configuration minus the event itself.
    pub fn causes(&self, e: EventId) -> Configuration {
        self.closure(&self.event(e).preds)
    }

    /// Last lock-manipulating event on `m` in `c`.
    pub fn last_lock(&self, c: &Configuration, m: MutexId) -> Option<EventId> {
        c.max_per_thread
            .iter()
            .flatten()
            .filter_map(|e| self.event(*e).last_lock[m.idx()])
            .max_by_key(|e| self.event(*e).depth)
    }

    /// A topological order of `c`, smallest id first among ready events.
    pub fn interleave(&self, c: &Configuration) -> Vec<Action> {
        self.linearize(c).into_iter().map(|e| self.action(e).clone()).collect()
    }

    pub fn linearize(&self, c: &Configuration) -> Vec<EventId> {
        let members = self.events_of(c);
        let mut waiting: HashMap<EventId, usize> = HashMap::new();
        let mut succs: HashMap<EventId, Vec<EventId>> = HashMap::new();
        let mut ready = BinaryHeap::new();
        for e in &members {
            let preds = &self.event(*e).preds;
            waiting.insert(*e, preds.len());
            for p in preds {
                succs.entry(*p).or_default().push(*e);
            }
            if preds.is_empty() {
                ready.push(Reverse(*e));
            }
        }
        let mut out = Vec::with_capacity(members.len());
        while let Some(Reverse(e)) = ready.pop() {
            out.push(e);
            for s in succs.get(&e).into_iter().flatten() {
                let n = waiting.get_mut(s).expect("member");
                *n -= 1;
                if *n == 0 {
                    ready.push(Reverse(*s));
                }
            }
        }
        out
    }

    /// State reached by `c`: start from the cached state of its deepest
    /// maximal event and fire the remaining events.
    pub fn state_of(&mut self, c: &Configuration) -> Result<ConcreteState, PesError> {
        let base = c
            .max_per_thread
            .iter()
            .flatten()
            .copied()
            .max_by_key(|e| (self.event(*e).depth, Reverse(*e)));
        let Some(base) = base else {
            return Ok((*self.initial).clone());
        };
        let mut rest = self.diff(c, &self.event(base).history);
        let mut state = (*self.event(base).state).clone();
        if rest.is_empty() {
            return Ok(state);
        }
        rest.sort_by_key(|e| (self.event(*e).depth, *e));
        for e in rest {
            let a = self.action(e).clone();
            state = semantics::fire(&state, &a, &self.program)?;
            self.fires += 1;
        }
        Ok(state)
    }

    /// `c ∪ {e}` after checking `e` is an enabled extension.
    pub fn extend(&self, c: &Configuration, e: EventId) -> Result<Configuration, PesError> {
        let ev = self.event(e);
        let ok = !self.contains(c, e)
            && c.max_per_thread[ev.thread().pos()] == ev.thread_pred
            && ev.preds.iter().all(|p| self.contains(c, *p))
            && self
                .diff(c, &ev.history)
                .iter()
                .all(|x| !is_dependent(self.action(*x), &ev.action));
        if !ok {
            return Err(PesError::NotEnabledEvent(e));
        }
        Ok(self.extend_unchecked(c, e))
    }

    pub fn extend_unchecked(&self, c: &Configuration, e: EventId) -> Configuration {
        let mut next = c.clone();
        next.max_per_thread[self.event(e).thread().pos()] = Some(e);
        next
    }

    /// True iff `e ∉ c` and `c ∪ {e}` is a configuration.
    pub fn is_enabled_at(&self, c: &Configuration, e: EventId) -> bool {
        self.extend(c, e).is_ok()
    }

    /// The unique event for `a` whose causes lie in `c`: the local
    /// configurations of the last event per thread dependent with `a`.
    pub fn event_for(&mut self, c: &Configuration, a: Action) -> Result<(EventId, bool), PesError> {
        let mut candidates = Vec::new();
        for (pos, top) in c.max_per_thread.iter().enumerate() {
            let t = ThreadId::from_pos(pos);
            if t == a.thread {
                candidates.extend(*top);
                continue;
            }
            if a.effect.is_local() {
                continue;
            }
            if let Some(x) = self.chain_down(*top).find(|x| is_dependent(self.action(*x), &a)) {
                candidates.push(x);
            }
        }
        let maxima: Vec<EventId> = candidates
            .iter()
            .filter(|x| !candidates.iter().any(|y| y != *x && self.is_causal(**x, *y)))
            .copied()
            .collect();
        self.intern(a, &maxima)
    }

    /// Enabled events of `c`, one per action enabled at `state`.
    pub fn enabled_events(&mut self, c: &Configuration, state: &ConcreteState) -> Result<Vec<EventId>, PesError> {
        let actions = semantics::enabled(state, &self.program)?;
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            out.push(self.event_for(c, a)?.0);
        }
        Ok(out)
    }

    /// Interns `⟨action, causes⟩`, returning the event and whether it is new.
    pub fn intern(&mut self, action: Action, max_causes: &[EventId]) -> Result<(EventId, bool), PesError> {
        let mut causes: Vec<EventId> = max_causes.to_vec();
        causes.sort();
        causes.dedup();
        let key = (action, causes);
        if let Some(e) = self.index.get(&key) {
            return Ok((*e, false));
        }
        let (action, causes) = key;
        for (i, x) in causes.iter().enumerate() {
            for y in &causes[i + 1..] {
                if !self.concurrent_pair(*x, *y) {
                    return Err(PesError::MalformedCauses(format!(
                        "events {} and {} are causally ordered",
                        x.0, y.0
                    )));
                }
            }
            if !is_dependent(self.action(*x), &action) {
                return Err(PesError::MalformedCauses(format!(
                    "maximal cause {} is independent of the action",
                    x.0
                )));
            }
        }
        let mut history = self.empty_config();
        for x in &causes {
            history = self
                .union(&history, &self.event(*x).history)
                .ok_or_else(|| PesError::MalformedCauses("causes are in conflict".into()))?;
        }
        let before = self.state_of(&history)?;
        if !semantics::is_enabled(&before, &action, &self.program) {
            return Err(PesError::NotEnabledAction(action));
        }
        let after = semantics::fire_unchecked(&before, &action, &self.program);
        self.fires += 1;

        let id = EventId(self.events.len() as u32);
        let t = action.thread;
        let thread_pred = history.last_of(t);
        let (seq, pred_updates) = match thread_pred {
            Some(p) => (self.event(p).seq + 1, self.event(p).thread_updates),
            None => (1, Fingerprint::ZERO),
        };
        let delta = delta_of_fire(&before, &action, &after, &self.program);
        let thread_updates = pred_updates ^ delta;
        let depth = self.size(&history) + 1;

        let mut last_lock: Vec<Option<EventId>> = (0..self.program.mutexes.len())
            .map(|m| self.last_lock(&history, MutexId(m as u32)))
            .collect();
        if let Some(m) = action.effect.mutex() {
            last_lock[m.idx()] = Some(id);
        }
        let mut jumps = Vec::new();
        if let Some(p) = thread_pred {
            jumps.push(p);
            let mut k = 0;
            while let Some(next) = self.event(jumps[k]).jumps.get(k).copied() {
                jumps.push(next);
                k += 1;
            }
        }
        history.max_per_thread[t.pos()] = Some(id);
        let fingerprint = history
            .max_per_thread
            .iter()
            .flatten()
            .fold(thread_updates, |acc, e| {
                if *e == id {
                    acc
                } else {
                    acc ^ self.event(*e).thread_updates
                }
            });
        let beyond_cutoff = causes.iter().any(|x| self.event(*x).is_pruned());
        let cutoff = self.cutoffs && !beyond_cutoff && self.table.is_cutoff(fingerprint, depth, id);

        self.index.insert((action.clone(), causes.clone()), id);
        self.events.push(Event {
            id,
            action,
            preds: causes,
            depth,
            seq,
            thread_pred,
            history,
            delta,
            thread_updates,
            fingerprint,
            cutoff,
            beyond_cutoff,
            jumps,
            last_lock,
            state: Arc::new(after),
        });
        Ok((id, true))
    }

    /// Events strictly above `e`.
    pub fn future(&self, e: EventId) -> Vec<EventId> {
        self.events
            .iter()
            .filter(|x| x.id != e && self.contains(&x.history, e))
            .map(|x| x.id)
            .collect()
    }

    /// `e` and `f` are in conflict but no conflict is inherited from causes.
    pub fn immediate_conflict(&self, e: EventId, f: EventId) -> bool {
        if e == f || !is_dependent(self.action(e), self.action(f)) || !self.concurrent_pair(e, f) {
            return false;
        }
        let ce = self.causes(e);
        let cf = self.causes(f);
        self.union(&ce, &self.event(f).history).is_some() && self.union(&cf, &self.event(e).history).is_some()
    }

    pub fn event_label(&self, e: EventId) -> String {
        let ev = self.event(e);
        format!("{}:{}:{}", e.0, ev.thread().0, ev.action.label(&self.program))
    }

    /// Graphviz rendering: causality as solid edges from maximal causes,
    /// immediate conflicts as dashed undirected edges.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph unfolding {\n  node [shape=box, fontname=\"monospace\"];\n");
        for ev in &self.events {
            let style = if ev.cutoff {
                ", style=filled, fillcolor=lightgray"
            } else {
                ""
            };
            let _ = writeln!(out, "  e{} [label=\"{}\"{}];", ev.id.0, escape(&self.event_label(ev.id)), style);
        }
        for ev in &self.events {
            for p in &ev.preds {
                let _ = writeln!(out, "  e{} -> e{};", p.0, ev.id.0);
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            for b in &self.events[i + 1..] {
                if self.immediate_conflict(a.id, b.id) {
                    let _ = writeln!(
                        out,
                        "  e{} -> e{} [style=dashed, dir=none, color=red];",
                        a.id.0, b.id.0
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }

    /// Threads of `c`'s events, as a set, for diagnostics.
    pub fn threads_of(&self, events: &[EventId]) -> BTreeSet<ThreadId> {
        events.iter().map(|e| self.event(*e).thread()).collect()
    }

    /// BLAKE2b-256 over the sorted member ids, as hex.
    pub fn digest(&self, c: &Configuration) -> String {
        let mut h = Blake2b::<U32>::new();
        for e in self.events_of(c) {
            h.update(e.0.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_mutex_event(&self, e: EventId) -> bool {
        matches!(self.action(e).effect, Effect::Acq(_) | Effect::Rel(_))
    }
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;

    fn store(src: &str) -> Store {
        Store::new(Arc::new(parse_program(src).unwrap()), false)
    }

    fn act(t: u32, e: Effect) -> Action {
        Action::new(ThreadId(t), e)
    }

    #[test]
    fn interning_is_idempotent() {
        let mut s = store("var x = 0\nthread a { x = choose(1, 2) }\n");
        let a = Action::new(ThreadId(1), Effect::Loc(crate::model::StmtId(0)));
        let (e1, fresh1) = s.intern(a.clone(), &[]).unwrap();
        let (e2, fresh2) = s.intern(a, &[]).unwrap();
        assert_eq!(e1, e2);
        assert!(fresh1);
        assert!(!fresh2);
        assert_eq!(s.event(e1).depth, 1);
    }

    #[test]
    fn lock_chain_causality_and_conflict() {
        let mut s = store("mutex m\nthread a { lock m\n unlock m }\nthread b { lock m\n unlock m }\n");
        let m = MutexId(0);
        let (a1, _) = s.intern(act(1, Effect::Acq(m)), &[]).unwrap();
        let (r1, _) = s.intern(act(1, Effect::Rel(m)), &[a1]).unwrap();
        let (b1, _) = s.intern(act(2, Effect::Acq(m)), &[r1]).unwrap();
        let (b0, _) = s.intern(act(2, Effect::Acq(m)), &[]).unwrap();
        assert!(s.is_causal(a1, b1));
        assert!(!s.is_causal(b1, a1));
        assert!(!s.is_causal(a1, a1));
        assert!(s.in_conflict(a1, b0));
        assert!(s.in_conflict(b1, b0));
        assert!(!s.in_conflict(a1, r1));
        assert!(s.immediate_conflict(a1, b0));
        // inherited from a1 # b0
        assert!(!s.immediate_conflict(b1, b0));
        assert_eq!(s.event(b1).depth, 3);
        // acquiring after an acquire is not enabled
        assert!(matches!(
            s.intern(act(2, Effect::Acq(m)), &[a1]),
            Err(PesError::NotEnabledAction(_))
        ));
        // ordered causes are malformed
        assert!(matches!(
            s.intern(act(2, Effect::Rel(m)), &[a1, b1]),
            Err(PesError::MalformedCauses(_))
        ));
        let c = s.event(b1).history.clone();
        assert_eq!(s.linearize(&c), vec![a1, r1, b1]);
        let st = s.state_of(&c).unwrap();
        assert_eq!(st.owners, vec![2]);
        assert!(s.extend(&s.event(r1).history.clone(), b0).is_err());
        let ext = s.extend(&s.event(r1).history.clone(), b1).unwrap();
        assert_eq!(ext, c);
    }

    #[test]
    fn enabled_events_from_empty() {
        let mut s = store("var x = 0\nvar y = 0\nthread a { x = choose(-1, 0) }\nthread b { y = 1 }\n");
        let c = s.empty_config();
        let st = s.state_of(&c).unwrap();
        let en = s.enabled_events(&c, &st).unwrap();
        assert_eq!(en.len(), 3);
        assert!(s.in_conflict(en[0], en[1]));
        assert!(!s.in_conflict(en[0], en[2]));
        assert!(s.concurrent_pair(en[0], en[2]));
    }
}
