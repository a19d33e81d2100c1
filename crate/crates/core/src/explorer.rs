//! The exploration tree: left expansion, right branches built from
//! 1-partial alternatives, and backtracking driven by the sweep bit.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cex::cex_main;
use crate::cutoff::delta_of_fire;
use crate::model::Program;
use crate::pes::{Configuration, EventId, PesError, Store};
use crate::races::{check_event_races, RaceReport};
use crate::semantics::{self, BlockReason, ConcreteState, Effect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionStrategy {
    #[default]
    Fifo,
    Lifo,
    Random(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid strategy `{0}` (expected fifo, lifo or random:SEED)")]
pub struct StrategyParseError(String);

impl FromStr for SelectionStrategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(Self::Fifo),
            "lifo" => Ok(Self::Lifo),
            _ => s
                .strip_prefix("random:")
                .and_then(|seed| seed.parse().ok())
                .map(Self::Random)
                .ok_or_else(|| StrategyParseError(s.to_string())),
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fifo => write!(f, "fifo"),
            Self::Lifo => write!(f, "lifo"),
            Self::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExploreOptions {
    pub strategy: SelectionStrategy,
    pub cutoffs: bool,
    pub max_events: usize,
    pub max_nodes: usize,
    pub time_limit: Option<Duration>,
    /// Check every conflicting extension against its definition.
    pub check_invariants: bool,
    /// Keep the configuration of every leaf in the report.
    pub record_leaves: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            strategy: SelectionStrategy::Fifo,
            cutoffs: true,
            max_events: 1_000_000,
            max_nodes: 1_000_000,
            time_limit: None,
            check_invariants: false,
            record_leaves: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafKind {
    Exit,
    Deadlock,
    Race,
    Cut,
    Ssb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Limit {
    MaxEvents,
    MaxNodes,
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockedThread {
    pub thread: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeadlockReport {
    pub config: String,
    pub events: Vec<EventId>,
    pub threads: Vec<BlockedThread>,
}

#[derive(Debug, Clone)]
pub struct LeafRecord {
    pub kind: LeafKind,
    pub config: Configuration,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Digests of the maximal configurations, in discovery order.
    pub max_configs: Vec<String>,
    pub exit: usize,
    pub deadlock: usize,
    pub race_leaves: usize,
    pub cut: usize,
    pub ssb: usize,
    /// Maximal configurations reached twice. Zero unless something is wrong.
    pub duplicates: usize,
    pub deadlocks: Vec<DeadlockReport>,
    pub races: Vec<RaceReport>,
    pub events: usize,
    pub cutoff_events: usize,
    pub mutex_events: usize,
    pub condvar_events: usize,
    pub local_events: usize,
    pub instructions_replayed: u64,
    pub nodes: usize,
    /// Some conflicting-extension subset enumeration was capped.
    pub cex_truncated: bool,
    pub incomplete: Option<Limit>,
    pub leaves: Vec<LeafRecord>,
}

impl Report {
    pub fn leaf_count(&self) -> usize {
        self.exit + self.deadlock + self.race_leaves + self.cut + self.ssb
    }

    pub fn err(&self) -> usize {
        self.deadlock + self.race_leaves
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Pes(#[from] PesError),
    #[error("event {} was re-derived with a different delta", .0.0)]
    DeltaMismatch(EventId),
    #[error("conflicting extension check failed: {0}")]
    Conformance(String),
}

type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    c: Configuration,
    d: BTreeSet<EventId>,
    e: Option<EventId>,
    left: Option<NodeId>,
    right: Option<NodeId>,
    sweep: bool,
    // creation-time shape, kept for the tree export after removal
    parent: Option<NodeId>,
    is_right: bool,
    removed: bool,
    processed: bool,
    racy: bool,
    leaf: Option<LeafKind>,
}

impl Node {
    fn has_children(&self) -> bool {
        self.left.is_some() || self.right.is_some()
    }
}

/// Result of an exploration: the unfolding prefix, the tree and the report.
#[derive(Debug)]
pub struct Exploration {
    pub store: Store,
    pub report: Report,
    nodes: Vec<Node>,
}

impl Exploration {
    /// DOT export of the exploration tree. Left edges are solid; right edges
    /// are dashed and labeled with the event they disable.
    pub fn tree_dot(&self) -> String {
        let mut out = String::from("digraph tree {\n  node [shape=box, fontname=\"monospace\"];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let mut label = format!("n{i}");
            if let Some(e) = n.e {
                label.push_str(&format!("\\ne={}", e.0));
            }
            if let Some(kind) = n.leaf {
                label.push_str(&format!("\\n{kind:?}").to_lowercase());
            }
            let style = if n.removed { ", style=dotted" } else { "" };
            out.push_str(&format!("  n{i} [label=\"{label}\"{style}];\n"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let Some(p) = n.parent else { continue };
            if n.is_right {
                let e = self.nodes[p].e.map(|e| e.0.to_string()).unwrap_or_default();
                out.push_str(&format!("  n{p} -> n{i} [style=dashed, label=\"not {e}\"];\n"));
            } else {
                out.push_str(&format!("  n{p} -> n{i};\n"));
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

struct Explorer<'o> {
    store: Store,
    opts: &'o ExploreOptions,
    nodes: Vec<Node>,
    queue: VecDeque<NodeId>,
    rng: ChaCha8Rng,
    report: Report,
    seen_maximal: HashSet<Configuration>,
    seen_races: HashSet<(String, EventId, EventId)>,
    started: Instant,
}

pub fn explore(program: Arc<Program>, opts: &ExploreOptions) -> Result<Exploration, ExploreError> {
    let seed = match opts.strategy {
        SelectionStrategy::Random(seed) => seed,
        _ => 0,
    };
    let store = Store::new(program, opts.cutoffs);
    let mut x = Explorer {
        store,
        opts,
        nodes: Vec::new(),
        queue: VecDeque::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        report: Report::default(),
        seen_maximal: HashSet::new(),
        seen_races: HashSet::new(),
        started: Instant::now(),
    };
    x.run()?;
    x.finish();
    Ok(Exploration {
        store: x.store,
        report: x.report,
        nodes: x.nodes,
    })
}

impl Explorer<'_> {
    fn run(&mut self) -> Result<(), ExploreError> {
        let empty = self.store.empty_config();
        let root = self.new_node(empty, BTreeSet::new(), None, false);
        self.nodes[root].sweep = true;
        self.queue.push_back(root);
        while let Some(n) = self.pick() {
            if self.nodes[n].removed || self.nodes[n].processed {
                continue;
            }
            if self.check_limits() {
                break;
            }
            let (leaf, branch) = self.expand_left(n)?;
            if self.report.incomplete.is_some() {
                break;
            }
            self.nodes[leaf].processed = true;
            self.classify(leaf)?;
            let batch = cex_main(&mut self.store, &self.nodes[leaf].c.clone())?;
            self.report.cex_truncated |= batch.truncated;
            if self.opts.check_invariants {
                self.check_cex(&batch)?;
            }
            self.create_right_branches(&branch)?;
            if self.report.incomplete.is_some() {
                break;
            }
            self.backtrack(leaf)?;
        }
        Ok(())
    }

    fn pick(&mut self) -> Option<NodeId> {
        match self.opts.strategy {
            SelectionStrategy::Fifo => self.queue.pop_front(),
            SelectionStrategy::Lifo => self.queue.pop_back(),
            SelectionStrategy::Random(_) => {
                if self.queue.is_empty() {
                    return None;
                }
                let i = self.rng.random_range(0..self.queue.len());
                self.queue.remove(i)
            }
        }
    }

    fn check_limits(&mut self) -> bool {
        let limit = if self.store.len() > self.opts.max_events {
            Some(Limit::MaxEvents)
        } else if self.nodes.len() > self.opts.max_nodes {
            Some(Limit::MaxNodes)
        } else if self.opts.time_limit.is_some_and(|t| self.started.elapsed() > t) {
            Some(Limit::Time)
        } else {
            None
        };
        if limit.is_some() {
            self.report.incomplete = limit;
        }
        limit.is_some()
    }

    fn new_node(&mut self, c: Configuration, d: BTreeSet<EventId>, parent: Option<NodeId>, is_right: bool) -> NodeId {
        self.nodes.push(Node {
            c,
            d,
            e: None,
            left: None,
            right: None,
            sweep: false,
            parent,
            is_right,
            removed: false,
            processed: false,
            racy: false,
            leaf: None,
        });
        self.nodes.len() - 1
    }

    fn make_left(&mut self, n: NodeId, e: EventId) -> NodeId {
        let c = self.store.extend_unchecked(&self.nodes[n].c, e);
        let d = self.nodes[n].d.clone();
        let child = self.new_node(c, d, Some(n), false);
        let node = &mut self.nodes[n];
        node.e = Some(e);
        node.left = Some(child);
        self.nodes[child].sweep = std::mem::take(&mut self.nodes[n].sweep);
        child
    }

    /// Records races of appending `e` to `n`. True when any was found.
    fn races_at(&mut self, n: NodeId, e: EventId) -> bool {
        if !matches!(self.store.action(e).effect, Effect::Loc(_)) {
            return false;
        }
        let found = check_event_races(&self.store, &self.nodes[n].c, e);
        if found.is_empty() {
            return false;
        }
        for r in found {
            if self.seen_races.insert((r.variable.clone(), r.event_a, r.event_b)) {
                self.report.races.push(r);
            }
        }
        self.nodes[n].racy = true;
        true
    }

    fn expand_left(&mut self, n: NodeId) -> Result<(NodeId, Vec<NodeId>), ExploreError> {
        let mut branch = vec![n];
        let mut cur = n;
        let mut state = self.store.state_of(&self.nodes[n].c)?;
        while !self.nodes[cur].racy {
            let c = self.nodes[cur].c.clone();
            let en = self.store.enabled_events(&c, &state)?;
            let next = en
                .into_iter()
                .filter(|e| !self.store.event(*e).cutoff && !self.nodes[cur].d.contains(e))
                .min();
            let Some(e) = next else { break };
            if self.races_at(cur, e) {
                break;
            }
            let action = self.store.action(e).clone();
            let program = self.store.program_arc();
            let after = semantics::fire_unchecked(&state, &action, &program);
            if delta_of_fire(&state, &action, &after, &program) != self.store.event(e).delta {
                return Err(ExploreError::DeltaMismatch(e));
            }
            state = after;
            cur = self.make_left(cur, e);
            branch.push(cur);
            if self.check_limits() {
                break;
            }
        }
        Ok((cur, branch))
    }

    fn classify(&mut self, leaf: NodeId) -> Result<(), ExploreError> {
        let c = self.nodes[leaf].c.clone();
        let kind = if self.nodes[leaf].racy {
            LeafKind::Race
        } else {
            let state = self.store.state_of(&c)?;
            let en = self.store.enabled_events(&c, &state)?;
            if en.is_empty() {
                let p = self.store.program();
                let stuck: Vec<_> = p.thread_ids().filter(|t| !semantics::is_exited(&state, p, *t)).collect();
                if stuck.is_empty() {
                    LeafKind::Exit
                } else {
                    let threads = stuck
                        .into_iter()
                        .map(|t| BlockedThread {
                            thread: p.thread(t).name.clone(),
                            reason: describe_block(semantics::block_reason(&state, p, t), p),
                        })
                        .collect();
                    self.report.deadlocks.push(DeadlockReport {
                        config: self.store.digest(&c),
                        events: self.store.events_of(&c),
                        threads,
                    });
                    LeafKind::Deadlock
                }
            } else if en.iter().any(|e| !self.store.event(*e).cutoff) {
                LeafKind::Ssb
            } else {
                LeafKind::Cut
            }
        };
        self.nodes[leaf].leaf = Some(kind);
        match kind {
            LeafKind::Exit | LeafKind::Deadlock => {
                if kind == LeafKind::Exit {
                    self.report.exit += 1;
                } else {
                    self.report.deadlock += 1;
                }
                if self.seen_maximal.insert(c.clone()) {
                    self.report.max_configs.push(self.store.digest(&c));
                } else {
                    self.report.duplicates += 1;
                }
            }
            LeafKind::Race => self.report.race_leaves += 1,
            LeafKind::Cut => self.report.cut += 1,
            LeafKind::Ssb => self.report.ssb += 1,
        }
        if self.opts.record_leaves {
            self.report.leaves.push(LeafRecord { kind, config: c });
        }
        Ok(())
    }

    /// Every new conflicting extension has its causes inside the extended
    /// leaf, is not a member of it, and conflicts with one of its events.
    fn check_cex(&self, batch: &crate::cex::CexBatch) -> Result<(), ExploreError> {
        let Some(full) = &batch.extended else {
            return Ok(());
        };
        let members = self.store.events_of(full);
        for &e in &batch.new_events {
            let ev = self.store.event(e);
            if self.store.contains(full, e) {
                return Err(ExploreError::Conformance(format!("event {} already in the configuration", e.0)));
            }
            if let Some(p) = ev.preds.iter().find(|p| !self.store.contains(full, **p)) {
                return Err(ExploreError::Conformance(format!(
                    "cause {} of event {} outside the configuration",
                    p.0, e.0
                )));
            }
            if !members.iter().any(|x| self.store.in_conflict(*x, e)) {
                return Err(ExploreError::Conformance(format!("event {} conflicts with nothing", e.0)));
            }
        }
        Ok(())
    }

    /// A 1-partial alternative to `d` after `c`, as the local configuration
    /// of the chosen event. Ties go to the lowest event id.
    fn alternatives(&mut self, c: &Configuration, d: &BTreeSet<EventId>) -> Option<Configuration> {
        let e = d.iter().copied().find(|e| self.store.is_enabled_at(c, *e))?;
        (0..self.store.len() as u32).map(EventId).find_map(|x| {
            let ev = self.store.event(x);
            if ev.is_pruned() || !self.store.in_conflict(x, e) {
                return None;
            }
            if d.iter().any(|y| self.store.contains(&ev.history, *y)) {
                return None;
            }
            self.store.union(c, &ev.history).map(|_| ev.history.clone())
        })
    }

    fn create_right_branches(&mut self, nodes: &[NodeId]) -> Result<(), ExploreError> {
        for &n in nodes {
            let node = &self.nodes[n];
            if node.removed || node.right.is_some() {
                continue;
            }
            let Some(e) = node.e else { continue };
            let mut d = node.d.clone();
            d.insert(e);
            let c = node.c.clone();
            if let Some(j) = self.alternatives(&c, &d) {
                self.make_right_branch(n, d, j);
                if self.check_limits() {
                    break;
                }
            }
        }
        Ok(())
    }

    fn make_right_branch(&mut self, n: NodeId, d: BTreeSet<EventId>, j: Configuration) {
        let c = self.nodes[n].c.clone();
        let right = self.new_node(c.clone(), d, Some(n), true);
        self.nodes[n].right = Some(right);
        let mut pending: BTreeSet<EventId> = self.store.diff(&j, &c).into_iter().collect();
        let mut cur = right;
        while let Some(e) = pending
            .iter()
            .copied()
            .find(|e| !pending.iter().any(|x| self.store.is_causal(*x, *e)))
        {
            pending.remove(&e);
            if self.races_at(cur, e) {
                break;
            }
            cur = self.make_left(cur, e);
        }
        self.queue.push_back(cur);
    }

    fn remove(&mut self, n: NodeId) {
        let node = &mut self.nodes[n];
        node.removed = true;
        node.sweep = false;
        if let Some(p) = node.parent {
            let parent = &mut self.nodes[p];
            if parent.left == Some(n) {
                parent.left = None;
            }
            if parent.right == Some(n) {
                parent.right = None;
            }
        }
    }

    fn backtrack(&mut self, leaf: NodeId) -> Result<(), ExploreError> {
        let mut n = leaf;
        loop {
            if !self.nodes[n].sweep {
                return Ok(());
            }
            let mut cur = Some(n);
            while let Some(x) = cur.filter(|x| !self.nodes[*x].has_children()) {
                let p = self.nodes[x].parent;
                if let Some(p) = p {
                    self.create_right_branches(&[p])?;
                }
                self.remove(x);
                cur = p;
            }
            let Some(top) = cur else { return Ok(()) };
            // move the sweep bit to the leftmost node under the right child
            let mut y = self.nodes[top].right.or(self.nodes[top].left).expect("node has children");
            while let Some(l) = self.nodes[y].left {
                y = l;
            }
            self.nodes[y].sweep = true;
            // a leaf processed before the bit reached it is backtracked now
            if self.nodes[y].processed && !self.nodes[y].has_children() {
                n = y;
                continue;
            }
            return Ok(());
        }
    }

    fn finish(&mut self) {
        let r = &mut self.report;
        r.events = self.store.len();
        for ev in self.store.events() {
            if ev.cutoff {
                r.cutoff_events += 1;
            }
            match ev.action.effect {
                Effect::Loc(_) => r.local_events += 1,
                Effect::Acq(_) | Effect::Rel(_) => r.mutex_events += 1,
                _ => r.condvar_events += 1,
            }
        }
        r.instructions_replayed = self.store.fires();
        r.nodes = self.nodes.len();
        r.races.sort();
    }
}

fn describe_block(reason: BlockReason, p: &Program) -> String {
    match reason {
        BlockReason::Lock(m) => format!("lock {}", p.mutexes[m.idx()]),
        BlockReason::WaitNotify(c) => format!("wait {} (not notified)", p.conds[c.idx()]),
        BlockReason::WaitReacquire(c, m) => {
            format!("wait {} (reacquire {})", p.conds[c.idx()], p.mutexes[m.idx()])
        }
        BlockReason::UndefinedBehavior => "undefined behavior".into(),
        BlockReason::Guard => "no guard holds".into(),
        BlockReason::Exited | BlockReason::Runnable => format!("{reason:?}").to_lowercase(),
    }
}

/// Replays the state of configuration `c` from scratch.
pub fn state_of_config(store: &mut Store, c: &Configuration) -> Result<ConcreteState, PesError> {
    store.state_of(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;

    const FIG3: &str = "var x = 0\nvar y = 0\nmutex m\ncond c\n\
        thread t1 {\n x = choose(-1, 0)\n lock m\n if x < 0 {\n  wait c m\n }\n unlock m\n}\n\
        thread t2 {\n y = 1\n lock m\n signal c\n unlock m\n}\n";

    fn run(src: &str, opts: ExploreOptions) -> Exploration {
        explore(Arc::new(parse_program(src).unwrap()), &opts).unwrap()
    }

    #[test]
    fn tree_discipline() {
        for strategy in [SelectionStrategy::Fifo, SelectionStrategy::Lifo] {
            let x = run(
                FIG3,
                ExploreOptions {
                    strategy,
                    ..Default::default()
                },
            );
            for n in &x.nodes {
                let Some(p) = n.parent.map(|p| &x.nodes[p]) else { continue };
                if n.is_right {
                    assert_eq!(n.c, p.c);
                    let mut d = p.d.clone();
                    d.insert(p.e.unwrap());
                    assert_eq!(n.d, d);
                } else {
                    assert_eq!(n.c, x.store.extend_unchecked(&p.c, p.e.unwrap()));
                    assert_eq!(n.d, p.d);
                }
                assert!(n.d.iter().all(|e| !x.store.contains(&n.c, *e)));
            }
            // everything was backtracked away at the end
            assert!(x.nodes.iter().all(|n| n.removed || !n.sweep));
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("fifo".parse(), Ok(SelectionStrategy::Fifo));
        assert_eq!("random:42".parse(), Ok(SelectionStrategy::Random(42)));
        assert!("random".parse::<SelectionStrategy>().is_err());
        assert_eq!(SelectionStrategy::Random(7).to_string(), "random:7");
    }

    #[test]
    fn straight_line_has_one_configuration() {
        let x = run("var x = 0\nthread a { x = 1\n x = x + 1 }\n", ExploreOptions::default());
        assert_eq!(x.report.max_configs.len(), 1);
        assert_eq!(x.report.exit, 1);
    }

    #[test]
    fn condvar_example() {
        let opts = ExploreOptions {
            check_invariants: true,
            ..Default::default()
        };
        let x = run(FIG3, opts);
        assert_eq!(x.report.max_configs.len(), 4);
        assert_eq!(x.report.deadlock, 1);
        assert_eq!(x.report.duplicates, 0);
        assert_eq!(x.report.deadlocks[0].threads[0].thread, "t1");
    }

    #[test]
    fn strategies_agree_on_counts() {
        for strategy in [SelectionStrategy::Fifo, SelectionStrategy::Lifo, SelectionStrategy::Random(3)] {
            let opts = ExploreOptions {
                strategy,
                ..Default::default()
            };
            let x = run(FIG3, opts);
            assert_eq!(x.report.max_configs.len(), 4, "{strategy}");
        }
    }

    #[test]
    fn event_limit_marks_incomplete() {
        let opts = ExploreOptions {
            cutoffs: false,
            max_events: 50,
            ..Default::default()
        };
        let x = run("var x = 0\nthread a { loop { x = 1 - x } }\n", opts);
        assert_eq!(x.report.incomplete, Some(Limit::MaxEvents));
    }

    #[test]
    fn cutoffs_stop_a_nonterminating_loop() {
        let x = run("var x = 0\nthread a { loop { x = 1 - x } }\n", ExploreOptions::default());
        assert_eq!(x.report.incomplete, None);
        assert!(x.report.cutoff_events >= 1);
        assert_eq!(x.report.cut, 1);
    }
}
