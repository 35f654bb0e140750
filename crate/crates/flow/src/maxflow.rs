//! Dinic max-flow on `i128` capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
struct Edge {
    to: u32,
    cap: i128,
}

/// Directed network; edge `e` and `e ^ 1` form a forward/residual pair.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    original: Vec<i128>,
    adj: Vec<Vec<u32>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            original: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn add_node(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    /// Adds an arc and returns its id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i128) -> usize {
        debug_assert!(cap >= 0);
        let id = self.edges.len();
        self.edges.push(Edge { to: to as u32, cap });
        self.edges.push(Edge {
            to: from as u32,
            cap: 0,
        });
        self.original.push(cap);
        self.original.push(0);
        self.adj[from].push(id as u32);
        self.adj[to].push(id as u32 + 1);
        id
    }

    /// Flow currently carried by arc `id`.
    pub fn flow(&self, id: usize) -> i128 {
        self.original[id] - self.edges[id].cap
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> i128 {
        let n = self.adj.len();
        let mut level = vec![-1i32; n];
        let mut next = vec![0usize; n];
        let mut total = 0i128;
        while self.bfs(source, sink, &mut level) {
            next.iter_mut().for_each(|x| *x = 0);
            loop {
                let pushed = self.augment(source, sink, &level, &mut next);
                if pushed == 0 {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    fn bfs(&self, source: usize, sink: usize, level: &mut [i32]) -> bool {
        level.iter_mut().for_each(|l| *l = -1);
        level[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let edge = self.edges[e as usize];
                let v = edge.to as usize;
                if edge.cap > 0 && level[v] < 0 {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level[sink] >= 0
    }

    /// Finds one augmenting path in the level graph and pushes the bottleneck along it.
    fn augment(&mut self, source: usize, sink: usize, level: &[i32], next: &mut [usize]) -> i128 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = source;
        loop {
            if u == sink {
                let pushed = path
                    .iter()
                    .map(|&e| self.edges[e].cap)
                    .min()
                    .unwrap_or(0);
                for &e in &path {
                    self.edges[e].cap -= pushed;
                    self.edges[e ^ 1].cap += pushed;
                }
                return pushed;
            }
            let mut advanced = false;
            while next[u] < self.adj[u].len() {
                let e = self.adj[u][next[u]] as usize;
                let Edge { to, cap } = self.edges[e];
                if cap > 0 && level[to as usize] == level[u] + 1 {
                    path.push(e);
                    u = to as usize;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                let Some(e) = path.pop() else {
                    return 0;
                };
                u = self.edges[e ^ 1].to as usize;
                next[u] += 1;
            }
        }
    }

    /// Nodes reachable from `source` in the residual graph.
    pub fn residual_reachable(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[source] = true;
        let mut stack = vec![source];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let edge = self.edges[e as usize];
                let v = edge.to as usize;
                if edge.cap > 0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}
