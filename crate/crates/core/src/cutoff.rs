//! State fingerprints built by XOR-ing hashes of state fragments, their
//! per-transition deltas, and the cutoff table.

use std::collections::HashMap;
use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};

use crate::model::{Program, ThreadId};
use crate::pes::EventId;
use crate::semantics::{Action, CondStatus, ConcreteState, Effect};

/// 256-bit fingerprint. The zero value is the fingerprint of the initial state.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub const ZERO: Fingerprint = Fingerprint([0; 32]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 32]
    }

    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.hex()[..16])
    }
}

impl BitXor for Fingerprint {
    type Output = Fingerprint;

    fn bitxor(mut self, rhs: Fingerprint) -> Fingerprint {
        self ^= rhs;
        self
    }
}

impl BitXorAssign for Fingerprint {
    fn bitxor_assign(&mut self, rhs: Fingerprint) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a ^= b;
        }
    }
}

/// One component of a state. A state's fragment set determines it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment<'a> {
    Pc { thread: ThreadId, loc: u32 },
    Var { name: &'a str, value: i64 },
    Reg { thread: ThreadId, name: &'a str, value: i64 },
    Mutex { name: &'a str, owner: u32 },
    Cond { name: &'a str, thread: ThreadId, status: CondStatus },
}

impl Fragment<'_> {
    /// Canonical bytes: the tag as a string field followed by the fields.
    /// Strings are `0x01`, a little-endian `u32` length and the UTF-8 bytes;
    /// integers are `0x02` and a little-endian `i64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        fn s(out: &mut Vec<u8>, v: &str) {
            out.push(1);
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        fn i(out: &mut Vec<u8>, v: i64) {
            out.push(2);
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut out = Vec::new();
        match self {
            Fragment::Pc { thread, loc } => {
                s(&mut out, "pc");
                i(&mut out, thread.0 as i64);
                i(&mut out, *loc as i64);
            }
            Fragment::Var { name, value } => {
                s(&mut out, "var");
                s(&mut out, name);
                i(&mut out, *value);
            }
            Fragment::Reg { thread, name, value } => {
                s(&mut out, "reg");
                i(&mut out, thread.0 as i64);
                s(&mut out, name);
                i(&mut out, *value);
            }
            Fragment::Mutex { name, owner } => {
                s(&mut out, "mutex");
                s(&mut out, name);
                i(&mut out, *owner as i64);
            }
            Fragment::Cond { name, thread, status } => {
                s(&mut out, "cond");
                s(&mut out, name);
                i(&mut out, thread.0 as i64);
                s(
                    &mut out,
                    match status {
                        CondStatus::Waiting => "waiting",
                        CondStatus::Notified => "notified",
                        CondStatus::Absent => "absent",
                    },
                );
            }
        }
        out
    }
}

/// BLAKE2b with a 256-bit output over the fragment's canonical bytes.
pub fn hash_fragment(f: &Fragment<'_>) -> Fingerprint {
    let digest = Blake2b::<U32>::digest(f.to_bytes());
    Fingerprint(digest.into())
}

pub fn fragments<'p>(s: &ConcreteState, p: &'p Program) -> Vec<Fragment<'p>> {
    let mut out = Vec::new();
    for t in p.thread_ids() {
        out.push(Fragment::Pc {
            thread: t,
            loc: s.pc(t).0,
        });
        for (r, decl) in p.thread(t).regs.iter().enumerate() {
            out.push(Fragment::Reg {
                thread: t,
                name: &decl.name,
                value: s.regs[t.pos()][r],
            });
        }
    }
    for (v, decl) in p.vars.iter().enumerate() {
        out.push(Fragment::Var {
            name: &decl.name,
            value: s.vars[v],
        });
    }
    for (m, name) in p.mutexes.iter().enumerate() {
        out.push(Fragment::Mutex {
            name,
            owner: s.owners[m],
        });
    }
    for (c, name) in p.conds.iter().enumerate() {
        for t in p.thread_ids() {
            out.push(Fragment::Cond {
                name,
                thread: t,
                status: s.cond_status(crate::model::CondId(c as u32), t),
            });
        }
    }
    out
}

fn raw_fingerprint(s: &ConcreteState, p: &Program) -> Fingerprint {
    fragments(s, p)
        .iter()
        .fold(Fingerprint::ZERO, |acc, f| acc ^ hash_fragment(f))
}

/// Computes fingerprints from scratch. The initial-state fragment hashes are
/// folded into the offset so the initial state maps to zero.
#[derive(Debug, Clone)]
pub struct Fingerprinter {
    offset: Fingerprint,
}

impl Fingerprinter {
    pub fn new(p: &Program) -> Self {
        Fingerprinter {
            offset: raw_fingerprint(&crate::semantics::initial_state(p), p),
        }
    }

    pub fn fingerprint(&self, s: &ConcreteState, p: &Program) -> Fingerprint {
        raw_fingerprint(s, p) ^ self.offset
    }
}

/// XOR of old/new fragment hashes for every component `a` can change.
pub fn delta_of_fire(s: &ConcreteState, a: &Action, s2: &ConcreteState, p: &Program) -> Fingerprint {
    let mut d = Fingerprint::ZERO;
    let mut change = |old: Fragment<'_>, new: Fragment<'_>| {
        if old != new {
            d ^= hash_fragment(&old) ^ hash_fragment(&new);
        }
    };
    let t = a.thread;
    change(
        Fragment::Pc {
            thread: t,
            loc: s.pc(t).0,
        },
        Fragment::Pc {
            thread: t,
            loc: s2.pc(t).0,
        },
    );
    match &a.effect {
        Effect::Loc(_) => {
            for (v, decl) in p.vars.iter().enumerate() {
                change(
                    Fragment::Var {
                        name: &decl.name,
                        value: s.vars[v],
                    },
                    Fragment::Var {
                        name: &decl.name,
                        value: s2.vars[v],
                    },
                );
            }
            for (r, decl) in p.thread(t).regs.iter().enumerate() {
                change(
                    Fragment::Reg {
                        thread: t,
                        name: &decl.name,
                        value: s.regs[t.pos()][r],
                    },
                    Fragment::Reg {
                        thread: t,
                        name: &decl.name,
                        value: s2.regs[t.pos()][r],
                    },
                );
            }
        }
        effect => {
            if let Some(m) = effect.mutex() {
                let name = &p.mutexes[m.idx()];
                change(
                    Fragment::Mutex {
                        name,
                        owner: s.owners[m.idx()],
                    },
                    Fragment::Mutex {
                        name,
                        owner: s2.owners[m.idx()],
                    },
                );
            }
            if let Some(c) = effect.cond() {
                let name = &p.conds[c.idx()];
                for u in p.thread_ids() {
                    change(
                        Fragment::Cond {
                            name,
                            thread: u,
                            status: s.cond_status(c, u),
                        },
                        Fragment::Cond {
                            name,
                            thread: u,
                            status: s2.cond_status(c, u),
                        },
                    );
                }
            }
        }
    }
    d
}

/// Smallest local-configuration size seen per fingerprint, with the event
/// that achieved it.
#[derive(Debug, Default, Clone)]
pub struct CutoffTable {
    best: HashMap<Fingerprint, (u32, EventId)>,
}

impl CutoffTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// True iff a strictly smaller local configuration reached `fp`; otherwise
    /// records `depth` (keeping the minimum).
    pub fn is_cutoff(&mut self, fp: Fingerprint, depth: u32, event: EventId) -> bool {
        match self.best.get_mut(&fp) {
            Some((best, _)) if *best < depth => true,
            Some((best, witness)) => {
                if depth < *best {
                    *best = depth;
                    *witness = event;
                }
                false
            }
            None => {
                self.best.insert(fp, (depth, event));
                false
            }
        }
    }

    pub fn witness(&self, fp: &Fingerprint) -> Option<EventId> {
        self.best.get(fp).map(|(_, e)| *e)
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }
}
