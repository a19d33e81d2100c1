//! Brute-force reference implementations for tests: interleaving
//! enumeration with Mazurkiewicz trace canonicalization, and a naive
//! fixpoint unfolder. Exponential; not used by the explorer.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::independence::is_dependent;
use crate::model::{Program, VarId};
use crate::pes::{EventId, Store};
use crate::semantics::{self, Action, ConcreteState, Effect, SemanticsError};

#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub max_states: usize,
    pub max_depth: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_states: 10_000,
            max_depth: 1_000,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("bound exceeded: {0}")]
    BoundExceeded(&'static str),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Foata normal form: layers of pairwise independent actions, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceClass(pub Vec<Vec<Action>>);

impl TraceClass {
    /// The class of this trace extended by `a`.
    pub fn push(&self, a: &Action) -> TraceClass {
        let mut layers = self.0.clone();
        let pos = layers
            .iter()
            .rposition(|layer| layer.iter().any(|b| is_dependent(a, b)))
            .map_or(0, |i| i + 1);
        if pos == layers.len() {
            layers.push(vec![a.clone()]);
        } else {
            let layer = &mut layers[pos];
            let at = layer.partition_point(|b| b < a);
            layer.insert(at, a.clone());
        }
        TraceClass(layers)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_run(run: &[Action]) -> TraceClass {
        run.iter().fold(TraceClass::default(), |t, a| t.push(a))
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleResult {
    pub reachable: HashSet<ConcreteState>,
    pub maximal_traces: BTreeSet<TraceClass>,
    /// Maximal trace classes that end with some thread not exited.
    pub deadlocks: usize,
    pub racy_vars: BTreeSet<String>,
}

/// Every state reachable from the initial one, by breadth-first search.
pub fn reachable_states(p: &Program, bounds: Bounds) -> Result<HashSet<ConcreteState>, OracleError> {
    let init = semantics::initial_state(p);
    let mut seen = HashSet::from([init.clone()]);
    let mut queue = VecDeque::from([init]);
    while let Some(s) = queue.pop_front() {
        for a in semantics::enabled(&s, p)? {
            let next = semantics::fire_unchecked(&s, &a, p);
            if seen.insert(next.clone()) {
                if seen.len() > bounds.max_states {
                    return Err(OracleError::BoundExceeded("states"));
                }
                queue.push_back(next);
            }
        }
    }
    Ok(seen)
}

/// Variables accessed with at least one write by two local actions of
/// different threads enabled together.
fn racy_at(en: &[Action], p: &Program, out: &mut BTreeSet<String>) {
    for (i, a) in en.iter().enumerate() {
        for b in &en[i + 1..] {
            let (Effect::Loc(x), Effect::Loc(y)) = (&a.effect, &b.effect) else {
                continue;
            };
            if a.thread == b.thread {
                continue;
            }
            let (ax, by) = (&p.statement(*x).access, &p.statement(*y).access);
            for (v, decl) in p.vars.iter().enumerate() {
                let v = VarId(v as u32);
                let touches = |acc: &crate::model::AccessInfo| acc.reads.contains(&v) || acc.writes.contains(&v);
                if touches(ax) && touches(by) && (ax.writes.contains(&v) || by.writes.contains(&v)) {
                    out.insert(decl.name.clone());
                }
            }
        }
    }
}

/// Depth-first enumeration of runs, merged by trace class.
pub fn enumerate_runs(p: &Program, bounds: Bounds) -> Result<OracleResult, OracleError> {
    let mut result = OracleResult::default();
    let init = semantics::initial_state(p);
    let mut visited: HashSet<TraceClass> = HashSet::from([TraceClass::default()]);
    let mut stack = vec![(init, TraceClass::default())];
    while let Some((s, trace)) = stack.pop() {
        result.reachable.insert(s.clone());
        let en = semantics::enabled(&s, p)?;
        racy_at(&en, p, &mut result.racy_vars);
        if en.is_empty() {
            if p.thread_ids().any(|t| !semantics::is_exited(&s, p, t)) {
                result.deadlocks += 1;
            }
            result.maximal_traces.insert(trace);
            continue;
        }
        if trace.len() >= bounds.max_depth {
            return Err(OracleError::BoundExceeded("depth"));
        }
        for a in en {
            let next = trace.push(&a);
            if visited.insert(next.clone()) {
                if visited.len() > bounds.max_states {
                    return Err(OracleError::BoundExceeded("trace prefixes"));
                }
                stack.push((semantics::fire_unchecked(&s, &a, p), next));
            }
        }
    }
    Ok(result)
}

/// An event of the naive unfolding: an action and its local configuration.
#[derive(Debug, Clone)]
pub struct NaiveEvent {
    pub action: Action,
    /// Maximal causes.
    pub preds: Vec<usize>,
    /// `[e]`, including the event itself.
    pub history: BTreeSet<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct NaiveUnfolding {
    pub events: Vec<NaiveEvent>,
}

impl NaiveUnfolding {
    fn causal(&self, a: usize, b: usize) -> bool {
        a != b && self.events[b].history.contains(&a)
    }

    /// `c ∪ [e]` is conflict-free, with `c` causally closed.
    fn compatible(&self, c: &BTreeSet<usize>, e: usize) -> bool {
        self.events[e].history.iter().all(|y| {
            c.iter().all(|x| {
                x == y
                    || self.causal(*x, *y)
                    || self.causal(*y, *x)
                    || !is_dependent(&self.events[*x].action, &self.events[*y].action)
            })
        })
    }

    fn maxima(&self, c: &BTreeSet<usize>) -> Vec<usize> {
        c.iter()
            .copied()
            .filter(|x| !c.iter().any(|y| self.causal(*x, *y)))
            .collect()
    }

    /// All configurations, by extension from the empty one.
    fn configurations(&self) -> Vec<BTreeSet<usize>> {
        let mut seen = HashSet::from([BTreeSet::new()]);
        let mut out = vec![BTreeSet::new()];
        let mut i = 0;
        while i < out.len() {
            let c = out[i].clone();
            i += 1;
            for (e, ev) in self.events.iter().enumerate() {
                if c.contains(&e) || !ev.history.iter().all(|x| *x == e || c.contains(x)) || !self.compatible(&c, e) {
                    continue;
                }
                let mut next = c.clone();
                next.insert(e);
                if seen.insert(next.clone()) {
                    out.push(next);
                }
            }
        }
        out
    }

    fn state_of(&self, c: &BTreeSet<usize>, p: &Program) -> ConcreteState {
        let mut order: Vec<usize> = c.iter().copied().collect();
        order.sort_by_key(|e| self.events[*e].history.len());
        let mut s = semantics::initial_state(p);
        for e in order {
            s = semantics::fire_unchecked(&s, &self.events[e].action, p);
        }
        s
    }
}

/// The unfolding as the least fixpoint of: for every configuration `C` and
/// every action enabled at its state that depends on all maxima of `C`, add
/// the event `⟨a, C⟩`.
pub fn fixpoint_unfold(p: &Program, max_events: usize) -> Result<NaiveUnfolding, OracleError> {
    let mut u = NaiveUnfolding::default();
    let mut index: HashMap<(Action, Vec<usize>), usize> = HashMap::new();
    let mut done: HashSet<BTreeSet<usize>> = HashSet::new();
    loop {
        let mut added = false;
        for c in u.configurations() {
            if !done.insert(c.clone()) {
                continue;
            }
            let state = u.state_of(&c, p);
            let maxima = u.maxima(&c);
            for a in semantics::enabled(&state, p)? {
                if !maxima.iter().all(|m| is_dependent(&u.events[*m].action, &a)) {
                    continue;
                }
                let key = (a.clone(), maxima.clone());
                if index.contains_key(&key) {
                    continue;
                }
                let id = u.events.len();
                let mut history = c.clone();
                history.insert(id);
                u.events.push(NaiveEvent {
                    action: a,
                    preds: maxima.clone(),
                    history,
                });
                index.insert(key, id);
                added = true;
                if u.events.len() > max_events {
                    return Err(OracleError::BoundExceeded("events"));
                }
            }
        }
        if !added {
            return Ok(u);
        }
    }
}

/// Structural names shared between event structures: an event's name is
/// its action together with the names of its maximal causes.
#[derive(Debug, Default)]
pub struct CanonicalNames {
    ids: HashMap<(Action, Vec<u32>), u32>,
}

impl CanonicalNames {
    fn name(&mut self, action: &Action, preds: Vec<u32>) -> u32 {
        let mut preds = preds;
        preds.sort();
        let next = self.ids.len() as u32;
        *self.ids.entry((action.clone(), preds)).or_insert(next)
    }

    pub fn of_store(&mut self, store: &Store) -> BTreeSet<u32> {
        let mut names: Vec<u32> = Vec::with_capacity(store.len());
        // causes are interned before their effects, so ids are topological
        for ev in store.events() {
            let preds = ev.preds.iter().map(|x: &EventId| names[x.idx()]).collect();
            names.push(self.name(&ev.action, preds));
        }
        names.into_iter().collect()
    }

    pub fn of_naive(&mut self, u: &NaiveUnfolding) -> BTreeSet<u32> {
        let mut names: Vec<u32> = Vec::with_capacity(u.events.len());
        for ev in &u.events {
            let preds = ev.preds.iter().map(|x| names[*x]).collect();
            names.push(self.name(&ev.action, preds));
        }
        names.into_iter().collect()
    }
}
