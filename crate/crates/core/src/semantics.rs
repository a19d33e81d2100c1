//! Labeled transition system of a program: states, actions, enabledness and
//! firing for local code, mutexes and condition variables.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{statements_of, CondId, Loc, MutexId, Operation, Program, Ref, Statement, StmtId, ThreadId};

/// A concrete program state.
///
/// `waiters[c]` holds signed thread ids: `+i` while thread `i` waits for a
/// notification on `c`, `-i` once notified but before it re-acquires the mutex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConcreteState {
    pub pcs: Vec<Loc>,
    pub vars: Vec<i64>,
    pub regs: Vec<Vec<i64>>,
    /// Owner thread id per mutex, 0 when free.
    pub owners: Vec<u32>,
    pub waiters: Vec<BTreeSet<i32>>,
}

impl ConcreteState {
    pub fn pc(&self, t: ThreadId) -> Loc {
        self.pcs[t.pos()]
    }

    /// Status of thread `t` on condvar `c`.
    pub fn cond_status(&self, c: CondId, t: ThreadId) -> CondStatus {
        let set = &self.waiters[c.idx()];
        let i = t.0 as i32;
        if set.contains(&i) {
            CondStatus::Waiting
        } else if set.contains(&-i) {
            CondStatus::Notified
        } else {
            CondStatus::Absent
        }
    }

    fn waiting_on(&self, c: CondId) -> BTreeSet<ThreadId> {
        self.waiters[c.idx()]
            .iter()
            .filter(|&&i| i > 0)
            .map(|&i| ThreadId(i as u32))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CondStatus {
    Waiting,
    Notified,
    Absent,
}

/// What a transition does. `Sig(c, None)` and `Bro(c, {})` are lost
/// notifications.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Effect {
    Loc(StmtId),
    Acq(MutexId),
    Rel(MutexId),
    W1(CondId, MutexId),
    W2(CondId, MutexId),
    Sig(CondId, Option<ThreadId>),
    Bro(CondId, BTreeSet<ThreadId>),
}

impl Effect {
    /// The mutex this effect acquires or releases, if any.
    pub fn mutex(&self) -> Option<MutexId> {
        match self {
            Effect::Acq(m) | Effect::Rel(m) | Effect::W1(_, m) | Effect::W2(_, m) => Some(*m),
            _ => None,
        }
    }

    pub fn cond(&self) -> Option<CondId> {
        match self {
            Effect::W1(c, _) | Effect::W2(c, _) | Effect::Sig(c, _) | Effect::Bro(c, _) => Some(*c),
            _ => None,
        }
    }

    /// True for effects after which the mutex is free (`rel`, `w1`).
    pub fn releases(&self, m: MutexId) -> bool {
        matches!(self, Effect::Rel(l) | Effect::W1(_, l) if *l == m)
    }

    /// True if this notification wakes thread `t`.
    pub fn notifies(&self, c: CondId, t: ThreadId) -> bool {
        match self {
            Effect::Sig(c2, Some(j)) => *c2 == c && *j == t,
            Effect::Bro(c2, set) => *c2 == c && set.contains(&t),
            _ => false,
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, Effect::Loc(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub thread: ThreadId,
    pub effect: Effect,
}

impl Action {
    pub fn new(thread: ThreadId, effect: Effect) -> Self {
        Action { thread, effect }
    }

    /// Label such as `acq(m)`, `loc(x = 1)` or `sig(c,0)`.
    pub fn label(&self, p: &Program) -> String {
        let mutex = |m: &MutexId| p.mutexes[m.idx()].clone();
        let cond = |c: &CondId| p.conds[c.idx()].clone();
        match &self.effect {
            Effect::Loc(s) => format!("loc({})", p.describe(*s)),
            Effect::Acq(m) => format!("acq({})", mutex(m)),
            Effect::Rel(m) => format!("rel({})", mutex(m)),
            Effect::W1(c, m) => format!("w1({},{})", cond(c), mutex(m)),
            Effect::W2(c, m) => format!("w2({},{})", cond(c), mutex(m)),
            Effect::Sig(c, j) => format!("sig({},{})", cond(c), j.map_or(0, |t| t.0)),
            Effect::Bro(c, w) => {
                let ids: Vec<String> = w.iter().map(|t| t.0.to_string()).collect();
                format!("bro({},{{{}}})", cond(c), ids.join(","))
            }
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {:?}>", self.thread.0, self.effect)
    }
}

/// A sequence of actions fireable from the initial state.
pub type Run = Vec<Action>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("action {action} is not enabled{}", index.map(|i| format!(" at run position {i}")).unwrap_or_default())]
    NotEnabled { action: Action, index: Option<usize> },
    #[error("thread {} has {count} enabled actions that are not all local", thread.0)]
    WellFormedness { thread: ThreadId, count: usize },
}

/// Why a thread cannot move.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockReason {
    Exited,
    Lock(MutexId),
    WaitNotify(CondId),
    WaitReacquire(CondId, MutexId),
    /// Unlocking a mutex it does not own, or waiting without holding it.
    UndefinedBehavior,
    /// Every local guard at its location is false.
    Guard,
    Runnable,
}

pub fn initial_state(p: &Program) -> ConcreteState {
    ConcreteState {
        pcs: p.threads.iter().map(|t| t.entry).collect(),
        vars: p.vars.iter().map(|v| v.init).collect(),
        regs: p.threads.iter().map(|t| t.regs.iter().map(|r| r.init).collect()).collect(),
        owners: vec![0; p.mutexes.len()],
        waiters: vec![BTreeSet::new(); p.conds.len()],
    }
}

fn local_enabled(s: &ConcreteState, st: &Statement) -> bool {
    match &st.op {
        Operation::Local(op) => op
            .guard
            .as_ref()
            .is_none_or(|g| g.eval(&s.vars, &s.regs[st.thread.pos()]) != 0),
        _ => false,
    }
}

/// Enabled actions of one thread, without the well-formedness check.
pub fn enabled_of_thread(s: &ConcreteState, p: &Program, t: ThreadId) -> Vec<Action> {
    let mut out = Vec::new();
    let me = t.0;
    for st in statements_of(p, t, s.pc(t)) {
        let effect = match &st.op {
            Operation::Local(_) => local_enabled(s, st).then_some(Effect::Loc(st.id)),
            Operation::Lock(m) => (s.owners[m.idx()] == 0).then_some(Effect::Acq(*m)),
            Operation::Unlock(m) => (s.owners[m.idx()] == me).then_some(Effect::Rel(*m)),
            Operation::Wait(c, m) => match s.cond_status(*c, t) {
                CondStatus::Notified => (s.owners[m.idx()] == 0).then_some(Effect::W2(*c, *m)),
                CondStatus::Waiting => None,
                CondStatus::Absent => (s.owners[m.idx()] == me).then_some(Effect::W1(*c, *m)),
            },
            Operation::Signal(c) => {
                let waiting = s.waiting_on(*c);
                if waiting.is_empty() {
                    Some(Effect::Sig(*c, None))
                } else {
                    out.extend(waiting.into_iter().map(|j| Action::new(t, Effect::Sig(*c, Some(j)))));
                    None
                }
            }
            Operation::Broadcast(c) => Some(Effect::Bro(*c, s.waiting_on(*c))),
        };
        if let Some(effect) = effect {
            out.push(Action::new(t, effect));
        }
    }
    out
}

/// All enabled actions, by thread then statement order.
///
/// A thread may have several enabled actions only when they are all local
/// (data nondeterminism) or all notifications of one signal statement (choice
/// of the woken waiter); anything else is a well-formedness violation.
pub fn enabled(s: &ConcreteState, p: &Program) -> Result<Vec<Action>, SemanticsError> {
    let mut out = Vec::new();
    for t in p.thread_ids() {
        let acts = enabled_of_thread(s, p, t);
        if acts.len() > 1 {
            let all_local = acts.iter().all(|a| a.effect.is_local());
            let all_sig = acts.iter().all(|a| matches!(a.effect, Effect::Sig(..)));
            if !all_local && !all_sig {
                return Err(SemanticsError::WellFormedness {
                    thread: t,
                    count: acts.len(),
                });
            }
        }
        out.extend(acts);
    }
    Ok(out)
}

pub fn is_enabled(s: &ConcreteState, a: &Action, p: &Program) -> bool {
    if a.thread.0 == 0 || a.thread.pos() >= p.num_threads() {
        return false;
    }
    enabled_of_thread(s, p, a.thread).contains(a)
}

/// The single non-local statement at the thread's location, if any.
fn pending<'p>(s: &ConcreteState, p: &'p Program, t: ThreadId) -> Option<&'p Statement> {
    statements_of(p, t, s.pc(t))
        .into_iter()
        .find(|st| !matches!(st.op, Operation::Local(_)))
}

/// Successor state; fails with `NotEnabled` if no rule applies.
pub fn fire(s: &ConcreteState, a: &Action, p: &Program) -> Result<ConcreteState, SemanticsError> {
    if !is_enabled(s, a, p) {
        return Err(SemanticsError::NotEnabled {
            action: a.clone(),
            index: None,
        });
    }
    Ok(fire_unchecked(s, a, p))
}

/// Successor state for an action known to be enabled.
pub fn fire_unchecked(s: &ConcreteState, a: &Action, p: &Program) -> ConcreteState {
    let mut n = s.clone();
    let t = a.thread;
    let me = t.0 as i32;
    let next_pc = |n: &mut ConcreteState| {
        if let Some(st) = pending(s, p, t) {
            n.pcs[t.pos()] = st.to;
        }
    };
    match &a.effect {
        Effect::Loc(id) => {
            let st = p.statement(*id);
            if let Operation::Local(op) = &st.op {
                if let Some((target, value)) = &op.assign {
                    let v = value.eval(&s.vars, &s.regs[t.pos()]);
                    match target {
                        Ref::Var(x) => n.vars[x.idx()] = v,
                        Ref::Reg(r) => n.regs[t.pos()][r.idx()] = v,
                    }
                }
            }
            n.pcs[t.pos()] = st.to;
        }
        Effect::Acq(m) => {
            n.owners[m.idx()] = t.0;
            next_pc(&mut n);
        }
        Effect::Rel(m) => {
            n.owners[m.idx()] = 0;
            next_pc(&mut n);
        }
        Effect::W1(c, m) => {
            n.owners[m.idx()] = 0;
            n.waiters[c.idx()].insert(me);
        }
        Effect::W2(c, m) => {
            n.waiters[c.idx()].remove(&-me);
            n.owners[m.idx()] = t.0;
            next_pc(&mut n);
        }
        Effect::Sig(c, woken) => {
            if let Some(j) = woken {
                let j = j.0 as i32;
                n.waiters[c.idx()].remove(&j);
                n.waiters[c.idx()].insert(-j);
            }
            next_pc(&mut n);
        }
        Effect::Bro(c, woken) => {
            for j in woken {
                let j = j.0 as i32;
                n.waiters[c.idx()].remove(&j);
                n.waiters[c.idx()].insert(-j);
            }
            next_pc(&mut n);
        }
    }
    n
}

pub fn state_of_run(run: &[Action], p: &Program) -> Result<ConcreteState, SemanticsError> {
    let mut s = initial_state(p);
    for (i, a) in run.iter().enumerate() {
        s = fire(&s, a, p).map_err(|_| SemanticsError::NotEnabled {
            action: a.clone(),
            index: Some(i),
        })?;
    }
    Ok(s)
}

pub fn is_exited(s: &ConcreteState, p: &Program, t: ThreadId) -> bool {
    s.pc(t) == p.thread(t).exit
}

/// Why thread `t` cannot move at `s` (or `Runnable`).
pub fn block_reason(s: &ConcreteState, p: &Program, t: ThreadId) -> BlockReason {
    if is_exited(s, p, t) {
        return BlockReason::Exited;
    }
    if !enabled_of_thread(s, p, t).is_empty() {
        return BlockReason::Runnable;
    }
    match pending(s, p, t).map(|st| &st.op) {
        Some(Operation::Lock(m)) => BlockReason::Lock(*m),
        Some(Operation::Wait(c, m)) => match s.cond_status(*c, t) {
            CondStatus::Waiting => BlockReason::WaitNotify(*c),
            CondStatus::Notified => BlockReason::WaitReacquire(*c, *m),
            CondStatus::Absent => BlockReason::UndefinedBehavior,
        },
        Some(Operation::Unlock(_)) => BlockReason::UndefinedBehavior,
        _ => BlockReason::Guard,
    }
}

/// Threads stuck in a global deadlock: empty while anything is enabled,
/// otherwise every thread that has not exited.
pub fn detect_deadlock(s: &ConcreteState, p: &Program) -> BTreeSet<ThreadId> {
    let any_enabled = p.thread_ids().any(|t| !enabled_of_thread(s, p, t).is_empty());
    if any_enabled {
        return BTreeSet::new();
    }
    p.thread_ids().filter(|t| !is_exited(s, p, *t)).collect()
}
