//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Sources `0..m` and sinks `m..m+n` hang off an artificial root through
//! artificial arcs, which start as the spanning tree. Pivots keep the tree
//! strongly feasible (leaving arc = last blocking arc met when walking the
//! cycle from its apex), which rules out cycling under degeneracy.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

pub(crate) struct Flows {
    /// `(source, sink, flow)` for every positive real-arc flow.
    pub entries: Vec<(usize, usize, f64)>,
    pub primal: f64,
    pub dual: f64,
    pub pivots: usize,
}

struct Tree<'c, C: Fn(usize, usize) -> f64> {
    m: usize,
    n: usize,
    root: usize,
    art_cost: f64,
    cost: &'c C,
    parent: Vec<usize>,
    arc: Vec<usize>,
    up: Vec<bool>,
    flow: Vec<f64>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
}

impl<C: Fn(usize, usize) -> f64> Tree<'_, C> {
    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    fn ends(&self, k: usize) -> (usize, usize) {
        let real = self.real_arcs();
        if k < real {
            (k / self.n, self.m + k % self.n)
        } else if k < real + self.m {
            (k - real, self.root)
        } else {
            (self.root, self.m + (k - real - self.m))
        }
    }

    fn arc_cost(&self, k: usize) -> f64 {
        let real = self.real_arcs();
        if k < real {
            (self.cost)(k / self.n, k % self.n)
        } else if k < real + self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    fn unlink(&mut self, v: usize) {
        let p = self.parent[v];
        let (prev, next) = (self.prev_sib[v], self.next_sib[v]);
        if prev == NONE {
            self.first_child[p] = next;
        } else {
            self.next_sib[prev] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[v] = NONE;
        self.next_sib[v] = NONE;
    }

    fn link(&mut self, v: usize, p: usize) {
        self.parent[v] = p;
        let head = self.first_child[p];
        self.next_sib[v] = head;
        self.prev_sib[v] = NONE;
        if head != NONE {
            self.prev_sib[head] = v;
        }
        self.first_child[p] = v;
    }

    /// Recomputes depth and potential over the subtree rooted at `top`.
    fn refresh(&mut self, top: usize, stack: &mut Vec<usize>) {
        stack.clear();
        stack.push(top);
        while let Some(v) = stack.pop() {
            let p = self.parent[v];
            self.depth[v] = self.depth[p] + 1;
            let c = self.arc_cost(self.arc[v]);
            self.pi[v] = if self.up[v] { self.pi[p] - c } else { self.pi[p] + c };
            let mut ch = self.first_child[v];
            while ch != NONE {
                stack.push(ch);
                ch = self.next_sib[ch];
            }
        }
    }

    fn reduced_cost(&self, k: usize) -> f64 {
        let (t, h) = self.ends(k);
        self.arc_cost(k) + self.pi[t] - self.pi[h]
    }

    /// Pivots arc `e` into the tree.
    fn pivot(&mut self, e: usize, path_u: &mut Vec<usize>, path_w: &mut Vec<usize>, stack: &mut Vec<usize>) -> Result<()> {
        let (u, w) = self.ends(e);
        // walk both endpoints up to their common ancestor
        path_u.clear();
        path_w.clear();
        let (mut a, mut b) = (u, w);
        while a != b {
            if self.depth[a] >= self.depth[b] {
                path_u.push(a);
                a = self.parent[a];
            } else {
                path_w.push(b);
                b = self.parent[b];
            }
        }
        // flow runs join -> u, across e, then w -> join
        let mut delta = f64::INFINITY;
        let mut leave = NONE;
        let mut on_u_side = true;
        for &v in path_u.iter() {
            if self.up[v] && self.flow[v] < delta {
                delta = self.flow[v];
                leave = v;
            }
        }
        for &v in path_w.iter() {
            if !self.up[v] && self.flow[v] <= delta {
                delta = self.flow[v];
                leave = v;
                on_u_side = false;
            }
        }
        if leave == NONE {
            return Err(Error::Infeasible("unbounded pivot cycle".into()));
        }
        if delta > 0.0 {
            for &v in path_u.iter() {
                self.flow[v] += if self.up[v] { -delta } else { delta };
            }
            for &v in path_w.iter() {
                self.flow[v] += if self.up[v] { delta } else { -delta };
            }
        }
        let (q, other) = if on_u_side { (u, w) } else { (w, u) };
        // reverse the tree path q -> leave so that q becomes the subtree root
        let path = if on_u_side { &*path_u } else { &*path_w };
        let k = path.iter().position(|&v| v == leave).expect("leaving node lies on the path");
        let nodes: Vec<usize> = path[..=k].to_vec();
        let saved: Vec<(usize, bool, f64)> = nodes.iter().map(|&v| (self.arc[v], self.up[v], self.flow[v])).collect();
        for &v in &nodes {
            self.unlink(v);
        }
        for t in (0..k).rev() {
            let (child, par) = (nodes[t + 1], nodes[t]);
            let (arc, up, flow) = saved[t];
            self.arc[child] = arc;
            self.up[child] = !up;
            self.flow[child] = flow;
            self.link(child, par);
        }
        self.arc[q] = e;
        self.up[q] = self.ends(e).0 == q;
        self.flow[q] = delta;
        self.link(q, other);
        self.refresh(q, stack);
        Ok(())
    }
}

/// Solves `min sum c(i, j) x_ij` over `x >= 0` with row sums `supply` and
/// column sums `demand`. All supplies and demands must be positive.
pub(crate) fn solve<C: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: &C) -> Result<Flows> {
    let (m, n) = (supply.len(), demand.len());
    let root = m + n;
    let nodes = m + n + 1;
    let mut max_cost: f64 = 0.0;
    for i in 0..m {
        for j in 0..n {
            let c = cost(i, j);
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::Infeasible(format!("cost ({i}, {j}) = {c} is not finite and nonnegative")));
            }
            max_cost = max_cost.max(c);
        }
    }
    // a path through the root must cost more than any direct arc
    let art_cost = max_cost + 1.0;
    let mut tree = Tree {
        m,
        n,
        root,
        art_cost,
        cost,
        parent: vec![NONE; nodes],
        arc: vec![NONE; nodes],
        up: vec![false; nodes],
        flow: vec![0.0; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
        first_child: vec![NONE; nodes],
        next_sib: vec![NONE; nodes],
        prev_sib: vec![NONE; nodes],
    };
    let real = m * n;
    for i in 0..m {
        tree.arc[i] = real + i;
        tree.up[i] = true;
        tree.flow[i] = supply[i];
        tree.link(i, root);
    }
    for j in 0..n {
        let v = m + j;
        tree.arc[v] = real + m + j;
        tree.up[v] = false;
        tree.flow[v] = demand[j];
        tree.link(v, root);
    }
    for v in 0..root {
        tree.depth[v] = 1;
        let c = tree.arc_cost(tree.arc[v]);
        tree.pi[v] = if tree.up[v] { -c } else { c };
    }
    let mut stack = Vec::new();

    let total_arcs = real + m + n;
    let block = ((total_arcs as f64).sqrt().ceil() as usize).max(32);
    let eps = 1e-12 * (1.0 + max_cost);
    let (mut path_u, mut path_w) = (Vec::new(), Vec::new());
    let mut next = 0usize;
    let mut pivots = 0usize;
    loop {
        // block search pricing
        let mut best = NONE;
        let mut best_rc = -eps;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < total_arcs {
            let k = next;
            next += 1;
            if next == total_arcs {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            let rc = tree.reduced_cost(k);
            if rc < best_rc {
                best_rc = rc;
                best = k;
            }
            if in_block == block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            break;
        }
        tree.pivot(best, &mut path_u, &mut path_w, &mut stack)?;
        pivots += 1;
    }

    let mut entries = Vec::new();
    let mut artificial = 0.0;
    for v in 0..root {
        let k = tree.arc[v];
        if k < real {
            if tree.flow[v] > 0.0 {
                entries.push((k / n, k % n, tree.flow[v]));
            }
        } else {
            artificial += tree.flow[v].abs();
        }
    }
    if artificial > 1e-9 {
        return Err(Error::Infeasible(format!("{artificial:e} of mass left on artificial arcs")));
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let primal: f64 = entries.iter().map(|&(i, j, x)| x * cost(i, j)).sum();
    let mut min_rc: f64 = 0.0;
    for i in 0..m {
        for j in 0..n {
            min_rc = min_rc.min(cost(i, j) + tree.pi[i] - tree.pi[m + j]);
        }
    }
    let total_demand: f64 = demand.iter().sum();
    let dual = -supply.iter().enumerate().map(|(i, a)| a * tree.pi[i]).sum::<f64>()
        + demand.iter().enumerate().map(|(j, b)| b * tree.pi[m + j]).sum::<f64>()
        + min_rc * total_demand;
    Ok(Flows {
        entries,
        primal,
        dual,
        pivots,
    })
}
