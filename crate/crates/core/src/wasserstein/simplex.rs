//! Transportation simplex on the complete bipartite support graph.
//!
//! The basis is a spanning tree of the `m + n` row/column nodes with exactly
//! `m + n - 1` cells (degenerate zero-flow cells included). Entering cells
//! come from block pricing on the reduced costs `c_ij - u_i - v_j`; the
//! leaving cell is the first minimum along the tree cycle.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) struct Solution {
    pub flow: DMatrix<f64>,
    pub cost: f64,
}

/// Minimises `Σ π_ij c_ij` subject to row sums `supply` and column sums `demand`.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<Solution> {
    let (m, n) = (supply.len(), demand.len());
    debug_assert_eq!(cost.shape(), (m, n));
    let mut flow = DMatrix::zeros(m, n);
    let mut basis = northwest_corner(supply, demand, &mut flow);

    let cmax = cost.amax().max(1e-300);
    let tol = 1e-12 * cmax;
    let cells = m * n;
    let block = ((cells as f64).sqrt().ceil() as usize).max(16).min(cells);
    let max_pivots = 50 * cells + 1000;

    let mut tree = Tree::new(m, n, &basis);
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut next_cell = 0usize;
    let mut pivots = 0usize;
    loop {
        tree.potentials(&basis, cost, &mut u, &mut v);

        // block pricing: best candidate inside the first block that has one
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        let mut scanned = 0;
        while scanned < cells {
            let end = (scanned + block).min(cells);
            for _ in scanned..end {
                let (i, j) = (next_cell / n, next_cell % n);
                let rc = cost[(i, j)] - u[i] - v[j];
                if rc < best {
                    best = rc;
                    entering = Some((i, j));
                }
                next_cell = (next_cell + 1) % cells;
            }
            scanned = end;
            if entering.is_some() {
                break;
            }
        }
        let Some((ei, ej)) = entering else { break };

        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NotConverged { what: "transport simplex", residual: best });
        }

        let cycle = tree.path(&basis, ei, ej);
        // even positions lose flow, odd positions gain; the entering cell gains
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &b) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                let (i, j) = basis[b];
                if flow[(i, j)] < theta {
                    theta = flow[(i, j)];
                    leave = b;
                }
            }
        }
        let theta = theta.max(0.0);
        for (k, &b) in cycle.iter().enumerate() {
            let (i, j) = basis[b];
            if k % 2 == 0 {
                flow[(i, j)] = (flow[(i, j)] - theta).max(0.0);
            } else {
                flow[(i, j)] += theta;
            }
        }
        let (li, lj) = basis[leave];
        flow[(li, lj)] = 0.0;
        flow[(ei, ej)] = theta;
        tree.replace(leave, (li, lj), (ei, ej));
        basis[leave] = (ei, ej);
    }

    let cost = flow.iter().zip(cost.iter()).map(|(f, c)| f * c).sum();
    Ok(Solution { flow, cost })
}

/// Staircase initial basis; ties advance the row so the basis stays a spanning tree.
fn northwest_corner(supply: &[f64], demand: &[f64], flow: &mut DMatrix<f64>) -> Vec<(usize, usize)> {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut basis = Vec::with_capacity(m + n - 1);
    loop {
        basis.push((i, j));
        if i == m - 1 && j == n - 1 {
            flow[(i, j)] = s[i].min(d[j]).max(0.0);
            break;
        }
        let move_row = j == n - 1 || (i < m - 1 && s[i] <= d[j]);
        if move_row {
            flow[(i, j)] = s[i].max(0.0);
            d[j] -= s[i];
            s[i] = 0.0;
            i += 1;
        } else {
            flow[(i, j)] = d[j].max(0.0);
            s[i] -= d[j];
            d[j] = 0.0;
            j += 1;
        }
    }
    basis
}

/// Adjacency of the basis tree over nodes `0..m` (rows) and `m..m+n` (columns),
/// with scratch buffers reused across pivots.
struct Tree {
    m: usize,
    adj: Vec<Vec<usize>>,
    stamp: Vec<u64>,
    epoch: u64,
    parent: Vec<usize>,
    queue: Vec<usize>,
}

impl Tree {
    fn new(m: usize, n: usize, basis: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::with_capacity(4); m + n];
        for (b, &(i, j)) in basis.iter().enumerate() {
            adj[i].push(b);
            adj[m + j].push(b);
        }
        Self { m, adj, stamp: vec![0; m + n], epoch: 0, parent: vec![usize::MAX; m + n], queue: Vec::with_capacity(m + n) }
    }

    fn replace(&mut self, b: usize, old: (usize, usize), new: (usize, usize)) {
        let m = self.m;
        self.adj[old.0].retain(|&x| x != b);
        self.adj[m + old.1].retain(|&x| x != b);
        self.adj[new.0].push(b);
        self.adj[m + new.1].push(b);
    }

    fn other(&self, node: usize, cell: (usize, usize)) -> usize {
        if node < self.m {
            self.m + cell.1
        } else {
            cell.0
        }
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on every basic cell.
    fn potentials(&mut self, basis: &[(usize, usize)], cost: &DMatrix<f64>, u: &mut [f64], v: &mut [f64]) {
        self.epoch += 1;
        self.queue.clear();
        self.queue.push(0);
        self.stamp[0] = self.epoch;
        u[0] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for &b in &self.adj[node] {
                let (i, j) = basis[b];
                let other = self.other(node, (i, j));
                if self.stamp[other] == self.epoch {
                    continue;
                }
                self.stamp[other] = self.epoch;
                if other >= self.m {
                    v[j] = cost[(i, j)] - u[i];
                } else {
                    u[i] = cost[(i, j)] - v[j];
                }
                self.queue.push(other);
            }
        }
    }

    /// Basic cells on the tree path from column node `ej` to row node `ei`,
    /// listed starting next to the column.
    fn path(&mut self, basis: &[(usize, usize)], ei: usize, ej: usize) -> Vec<usize> {
        let target = self.m + ej;
        self.epoch += 1;
        self.queue.clear();
        self.queue.push(ei);
        self.stamp[ei] = self.epoch;
        let mut head = 0;
        'search: while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for &b in &self.adj[node] {
                let other = self.other(node, basis[b]);
                if self.stamp[other] != self.epoch {
                    self.stamp[other] = self.epoch;
                    self.parent[other] = b;
                    if other == target {
                        break 'search;
                    }
                    self.queue.push(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != ei {
            let b = self.parent[node];
            path.push(b);
            node = self.other(node, basis[b]);
        }
        path
    }
}
