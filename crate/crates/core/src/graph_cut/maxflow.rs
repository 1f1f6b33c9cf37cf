//! Augmenting-path max-flow with persistent search trees, after
//! Boykov & Kolmogorov's algorithm for vision grid graphs.
//!
//! Two trees grow from the terminals over non-saturated arcs. When they touch,
//! the path is augmented; nodes cut off from their tree become orphans and try
//! to re-attach before being freed. Trees are kept between augmentations.

use std::collections::VecDeque;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INFINITE_D: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    first: u32,
    /// Arc to the tree parent, or one of NONE / TERMINAL / ORPHAN.
    parent: u32,
    /// Residual terminal capacity: > 0 towards the source, < 0 towards the sink.
    tr_cap: i64,
    ts: u32,
    dist: u32,
    is_sink: bool,
    active: bool,
}

#[derive(Debug, Clone)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: i64,
}

/// Which side of the minimum cut a node ended up on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Source,
    Sink,
}

#[derive(Debug, Clone, Default)]
pub struct FlowGraph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: i64,
    active: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u32,
    solved: bool,
}

#[inline]
fn sister(a: u32) -> u32 {
    a ^ 1
}

impl FlowGraph {
    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        FlowGraph {
            nodes: Vec::with_capacity(nodes),
            arcs: Vec::with_capacity(2 * edges),
            ..Default::default()
        }
    }

    /// Removes all nodes and arcs, keeping the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.arcs.clear();
        self.active.clear();
        self.orphans.clear();
        self.flow = 0;
        self.time = 0;
        self.solved = false;
    }

    /// Adds `count` nodes and returns the index of the first.
    pub fn add_nodes(&mut self, count: usize) -> usize {
        let first = self.nodes.len();
        self.nodes.extend((0..count).map(|_| Node {
            first: NONE,
            parent: NONE,
            tr_cap: 0,
            ts: 0,
            dist: 0,
            is_sink: false,
            active: false,
        }));
        first
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds capacity from the source to `i` and from `i` to the sink.
    /// The shared part is pushed immediately.
    pub fn add_tweights(&mut self, i: usize, cap_source: i64, cap_sink: i64) {
        debug_assert!(cap_source >= 0 && cap_sink >= 0);
        let node = &mut self.nodes[i];
        let delta = node.tr_cap;
        let (mut cs, mut ct) = (cap_source, cap_sink);
        if delta > 0 {
            cs += delta;
        } else {
            ct -= delta;
        }
        self.flow += cs.min(ct);
        node.tr_cap = cs - ct;
    }

    /// Adds arc `i -> j` with capacity `cap` and `j -> i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: i64, rev_cap: i64) {
        debug_assert!(i != j && cap >= 0 && rev_cap >= 0);
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc {
            head: j as u32,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.arcs.push(Arc {
            head: i as u32,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[i].first = a;
        self.nodes[j].first = a + 1;
    }

    fn set_active(&mut self, i: u32) {
        let node = &mut self.nodes[i as usize];
        if !node.active {
            node.active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            let node = &mut self.nodes[i as usize];
            node.active = false;
            if node.parent != NONE {
                return Some(i);
            }
        }
        None
    }

    fn set_orphan_front(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn set_orphan_rear(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    fn init(&mut self) {
        self.active.clear();
        self.orphans.clear();
        self.time = 0;
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            node.active = false;
            node.ts = 0;
            if node.tr_cap > 0 {
                node.is_sink = false;
                node.parent = TERMINAL;
                node.dist = 1;
            } else if node.tr_cap < 0 {
                node.is_sink = true;
                node.parent = TERMINAL;
                node.dist = 1;
            } else {
                node.parent = NONE;
                continue;
            }
            self.set_active(i as u32);
        }
    }

    /// Runs to completion and returns the total flow (= minimum cut value).
    pub fn maxflow(&mut self) -> i64 {
        self.init();
        let mut current: Option<u32> = None;

        loop {
            let mut i = match current.take() {
                Some(i) => {
                    self.nodes[i as usize].active = false;
                    if self.nodes[i as usize].parent == NONE {
                        None
                    } else {
                        Some(i)
                    }
                }
                None => None,
            };
            if i.is_none() {
                i = self.next_active();
            }
            let Some(i) = i else { break };

            // Growth.
            let mut meet = NONE;
            let (i_ts, i_dist, i_sink) = {
                let n = &self.nodes[i as usize];
                (n.ts, n.dist, n.is_sink)
            };
            let mut a = self.nodes[i as usize].first;
            while a != NONE {
                let arc_next = self.arcs[a as usize].next;
                let residual = if i_sink {
                    self.arcs[sister(a) as usize].r_cap
                } else {
                    self.arcs[a as usize].r_cap
                };
                if residual > 0 {
                    let j = self.arcs[a as usize].head as usize;
                    if self.nodes[j].parent == NONE {
                        let node = &mut self.nodes[j];
                        node.is_sink = i_sink;
                        node.parent = sister(a);
                        node.ts = i_ts;
                        node.dist = i_dist + 1;
                        self.set_active(j as u32);
                    } else if self.nodes[j].is_sink != i_sink {
                        meet = if i_sink { sister(a) } else { a };
                        break;
                    } else if self.nodes[j].ts <= i_ts && self.nodes[j].dist > i_dist {
                        let node = &mut self.nodes[j];
                        node.parent = sister(a);
                        node.ts = i_ts;
                        node.dist = i_dist + 1;
                    }
                }
                a = arc_next;
            }

            self.time += 1;

            if meet != NONE {
                self.nodes[i as usize].active = true;
                current = Some(i);
                self.augment(meet);
                while let Some(o) = self.orphans.pop_front() {
                    if self.nodes[o as usize].is_sink {
                        self.process_orphan(o, true);
                    } else {
                        self.process_orphan(o, false);
                    }
                }
            }
        }

        self.solved = true;
        self.flow
    }

    /// Augments along the path through `middle`, an arc from a source-tree
    /// node to a sink-tree node.
    fn augment(&mut self, middle: u32) {
        let mut bottleneck = self.arcs[middle as usize].r_cap;

        // Source side: walk up from the tail of `middle`.
        let mut i = self.arcs[sister(middle) as usize].head as usize;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[sister(a) as usize].r_cap);
            i = self.arcs[a as usize].head as usize;
        }
        bottleneck = bottleneck.min(self.nodes[i].tr_cap);

        // Sink side.
        let mut i = self.arcs[middle as usize].head as usize;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a as usize].r_cap);
            i = self.arcs[a as usize].head as usize;
        }
        bottleneck = bottleneck.min(-self.nodes[i].tr_cap);

        self.arcs[sister(middle) as usize].r_cap += bottleneck;
        self.arcs[middle as usize].r_cap -= bottleneck;

        let mut i = self.arcs[sister(middle) as usize].head as usize;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a as usize].r_cap += bottleneck;
            self.arcs[sister(a) as usize].r_cap -= bottleneck;
            if self.arcs[sister(a) as usize].r_cap == 0 {
                self.set_orphan_front(i as u32);
            }
            i = self.arcs[a as usize].head as usize;
        }
        self.nodes[i].tr_cap -= bottleneck;
        if self.nodes[i].tr_cap == 0 {
            self.set_orphan_front(i as u32);
        }

        let mut i = self.arcs[middle as usize].head as usize;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[sister(a) as usize].r_cap += bottleneck;
            self.arcs[a as usize].r_cap -= bottleneck;
            if self.arcs[a as usize].r_cap == 0 {
                self.set_orphan_front(i as u32);
            }
            i = self.arcs[a as usize].head as usize;
        }
        self.nodes[i].tr_cap += bottleneck;
        if self.nodes[i].tr_cap == 0 {
            self.set_orphan_front(i as u32);
        }

        self.flow += bottleneck;
    }

    /// Residual capacity along `a0` in the direction that feeds node `i`'s tree.
    #[inline]
    fn tree_residual(&self, a0: u32, sink_tree: bool) -> i64 {
        if sink_tree {
            self.arcs[a0 as usize].r_cap
        } else {
            self.arcs[sister(a0) as usize].r_cap
        }
    }

    fn process_orphan(&mut self, i: u32, sink_tree: bool) {
        let time = self.time;
        let mut best_arc = NONE;
        let mut d_min = INFINITE_D;

        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            if self.tree_residual(a0, sink_tree) > 0 {
                let mut j = self.arcs[a0 as usize].head as usize;
                if self.nodes[j].is_sink == sink_tree && self.nodes[j].parent != NONE {
                    // Trace j back to its terminal.
                    let mut d: u32 = 0;
                    loop {
                        if self.nodes[j].ts == time {
                            d = d.saturating_add(self.nodes[j].dist);
                            break;
                        }
                        let a = self.nodes[j].parent;
                        d += 1;
                        if a == TERMINAL {
                            self.nodes[j].ts = time;
                            self.nodes[j].dist = 1;
                            break;
                        }
                        if a == ORPHAN {
                            d = INFINITE_D;
                            break;
                        }
                        j = self.arcs[a as usize].head as usize;
                    }
                    if d < INFINITE_D {
                        if d < d_min {
                            best_arc = a0;
                            d_min = d;
                        }
                        let mut j = self.arcs[a0 as usize].head as usize;
                        while self.nodes[j].ts != time {
                            self.nodes[j].ts = time;
                            self.nodes[j].dist = d;
                            d -= 1;
                            let p = self.nodes[j].parent;
                            j = self.arcs[p as usize].head as usize;
                        }
                    }
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }

        if best_arc != NONE {
            let node = &mut self.nodes[i as usize];
            node.parent = best_arc;
            node.ts = time;
            node.dist = d_min + 1;
            return;
        }

        self.nodes[i as usize].parent = NONE;
        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let j = self.arcs[a0 as usize].head;
            let jn = &self.nodes[j as usize];
            if jn.is_sink == sink_tree && jn.parent != NONE {
                let a = jn.parent;
                if self.tree_residual(a0, sink_tree) > 0 {
                    self.set_active(j);
                }
                if a != TERMINAL && a != ORPHAN && self.arcs[a as usize].head == i {
                    self.set_orphan_rear(j);
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }
    }

    /// Cut sides with ties resolved towards the source: a node is on the sink
    /// side only if the sink is reachable from it through residual arcs.
    pub fn segments(&self) -> Vec<Segment> {
        assert!(self.solved, "maxflow() must run first");
        let n = self.nodes.len();
        let mut sink = vec![false; n];
        let mut queue = VecDeque::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tr_cap < 0 {
                sink[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(u) = queue.pop_front() {
            let mut a = self.nodes[u].first;
            while a != NONE {
                let v = self.arcs[a as usize].head as usize;
                // Arc v -> u is the sister of u -> v.
                if !sink[v] && self.arcs[sister(a) as usize].r_cap > 0 {
                    sink[v] = true;
                    queue.push_back(v);
                }
                a = self.arcs[a as usize].next;
            }
        }
        sink.into_iter()
            .map(|s| if s { Segment::Sink } else { Segment::Source })
            .collect()
    }

    pub fn flow(&self) -> i64 {
        self.flow
    }
}
