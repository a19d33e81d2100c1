//! The dependence relation between actions. Independent actions commute at
//! every reachable state of a race-free program.

use crate::model::CondId;
use crate::semantics::{Action, Effect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    SameThread,
    SameMutex,
    CondInteraction,
    LostNotification,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DependenceVerdict {
    pub dependent: bool,
    pub reason: Reason,
}

/// Dependence as seen from `a`'s row of the table; `b` is on another thread.
fn row(a: &Action, b: &Action) -> Option<Reason> {
    let i = a.thread;
    let j = b.thread;
    let same_mutex = |m| b.effect.mutex() == Some(m);
    match &a.effect {
        Effect::Loc(_) => None,
        Effect::Acq(m) | Effect::Rel(m) => same_mutex(*m).then_some(Reason::SameMutex),
        Effect::W1(c, m) => {
            if same_mutex(*m) {
                return Some(Reason::SameMutex);
            }
            match &b.effect {
                Effect::Sig(c2, None) if c2 == c => Some(Reason::LostNotification),
                Effect::Sig(c2, Some(k)) if c2 == c && *k == i => Some(Reason::CondInteraction),
                Effect::Bro(c2, w) if c2 == c => Some(if w.is_empty() {
                    Reason::LostNotification
                } else {
                    Reason::CondInteraction
                }),
                _ => None,
            }
        }
        Effect::W2(c, m) => {
            if same_mutex(*m) {
                return Some(Reason::SameMutex);
            }
            b.effect.notifies(*c, i).then_some(Reason::CondInteraction)
        }
        Effect::Sig(c, Some(k)) => match &b.effect {
            Effect::W1(c2, _) | Effect::W2(c2, _) if c2 == c && j == *k => Some(Reason::CondInteraction),
            Effect::Sig(c2, None) if c2 == c => Some(Reason::LostNotification),
            Effect::Sig(c2, Some(k2)) if c2 == c && k2 == k => Some(Reason::CondInteraction),
            Effect::Bro(c2, _) if c2 == c => Some(Reason::CondInteraction),
            _ => None,
        },
        Effect::Sig(c, None) => lost_row(*c, b),
        Effect::Bro(c, w) if w.is_empty() => lost_row(*c, b),
        Effect::Bro(c, w) => match &b.effect {
            Effect::W1(c2, _) if c2 == c => Some(Reason::CondInteraction),
            Effect::W2(c2, _) if c2 == c && w.contains(&j) => Some(Reason::CondInteraction),
            Effect::Sig(c2, _) | Effect::Bro(c2, _) if c2 == c => Some(Reason::CondInteraction),
            _ => None,
        },
    }
}

/// Row shared by `sig(c,0)` and `bro(c,{})`.
fn lost_row(c: CondId, b: &Action) -> Option<Reason> {
    match &b.effect {
        Effect::W1(c2, _) if *c2 == c => Some(Reason::LostNotification),
        Effect::Sig(c2, Some(_)) if *c2 == c => Some(Reason::LostNotification),
        Effect::Bro(c2, w) if *c2 == c && !w.is_empty() => Some(Reason::LostNotification),
        _ => None,
    }
}

/// Symmetric, reflexive dependence with a reason code.
pub fn dependent(a: &Action, b: &Action) -> DependenceVerdict {
    let reason = if a.thread == b.thread {
        Some(Reason::SameThread)
    } else {
        row(a, b).or_else(|| row(b, a))
    };
    match reason {
        Some(reason) => DependenceVerdict {
            dependent: true,
            reason,
        },
        None => DependenceVerdict {
            dependent: false,
            reason: Reason::Independent,
        },
    }
}

pub fn is_dependent(a: &Action, b: &Action) -> bool {
    dependent(a, b).dependent
}

pub fn is_independent(a: &Action, b: &Action) -> bool {
    !is_dependent(a, b)
}
