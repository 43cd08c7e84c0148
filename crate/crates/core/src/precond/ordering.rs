//! Fill-reducing ordering by graph nested dissection.
//!
//! Separators are taken from the middle of a rooted level structure grown
//! from a pseudo-peripheral vertex. Each half is ordered recursively and the
//! separator is numbered last.

use crate::sparse::SparseMatrix;

const LEAF_SIZE: usize = 48;
const MAX_PERIPHERAL_SWEEPS: usize = 6;

struct Graph {
    offsets: Vec<usize>,
    adj: Vec<usize>,
}

impl Graph {
    fn from_matrix(a: &SparseMatrix) -> Graph {
        let n = a.n_rows();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adj = Vec::with_capacity(a.nnz());
        offsets.push(0);
        for r in 0..n {
            adj.extend(a.row(r).0.iter().copied().filter(|&c| c != r));
            offsets.push(adj.len());
        }
        Graph { offsets, adj }
    }

    fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }
}

struct Dissector<'g> {
    graph: &'g Graph,
    /// Id of the node set each vertex currently belongs to.
    owner: Vec<usize>,
    next_owner: usize,
    /// BFS visit stamps.
    seen: Vec<usize>,
    stamp: usize,
    order: Vec<usize>,
}

impl Dissector<'_> {
    fn claim(&mut self, nodes: &[usize]) -> usize {
        self.next_owner += 1;
        for &v in nodes {
            self.owner[v] = self.next_owner;
        }
        self.next_owner
    }

    /// Level structure of the component of `root` inside set `id`.
    fn levels(&mut self, root: usize, id: usize) -> Vec<Vec<usize>> {
        self.stamp += 1;
        let stamp = self.stamp;
        self.seen[root] = stamp;
        let mut levels = vec![vec![root]];
        loop {
            let mut next = Vec::new();
            for &v in levels.last().unwrap() {
                for &w in self.graph.neighbors(v) {
                    if self.owner[w] == id && self.seen[w] != stamp {
                        self.seen[w] = stamp;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                return levels;
            }
            levels.push(next);
        }
    }

    fn peripheral_levels(&mut self, start: usize, id: usize) -> Vec<Vec<usize>> {
        let mut levels = self.levels(start, id);
        for _ in 0..MAX_PERIPHERAL_SWEEPS {
            let g = self.graph;
            let candidate = *levels
                .last()
                .unwrap()
                .iter()
                .min_by_key(|&&v| g.neighbors(v).len())
                .unwrap();
            let trial = self.levels(candidate, id);
            if trial.len() > levels.len() {
                levels = trial;
            } else {
                break;
            }
        }
        levels
    }

    fn dissect(&mut self, nodes: Vec<usize>) {
        if nodes.len() <= LEAF_SIZE {
            self.order.extend_from_slice(&nodes);
            return;
        }
        let id = self.claim(&nodes);
        let levels = self.peripheral_levels(nodes[0], id);
        let reached: usize = levels.iter().map(Vec::len).sum();
        if reached < nodes.len() {
            // disconnected: split off the component just explored
            let stamp = self.stamp;
            let (comp, rest): (Vec<usize>, Vec<usize>) =
                nodes.into_iter().partition(|&v| self.seen[v] == stamp);
            self.dissect(comp);
            self.dissect(rest);
            return;
        }
        if levels.len() < 3 {
            self.order.extend_from_slice(&nodes);
            return;
        }
        let half = nodes.len() / 2;
        let mut cum = 0;
        let mut mid = levels.len() - 2;
        for (k, level) in levels.iter().enumerate() {
            cum += level.len();
            if cum > half {
                mid = k;
                break;
            }
        }
        let mid = mid.clamp(1, levels.len() - 2);

        // separator vertices with no neighbour beyond the separator join the near side
        let beyond = self.claim(&levels[mid + 1]);
        let mut near: Vec<usize> = levels[..mid].concat();
        let mut separator = Vec::with_capacity(levels[mid].len());
        for &v in &levels[mid] {
            if self.graph.neighbors(v).iter().any(|&w| self.owner[w] == beyond) {
                separator.push(v);
            } else {
                near.push(v);
            }
        }
        let far: Vec<usize> = levels[mid + 1..].concat();
        self.dissect(near);
        self.dissect(far);
        self.order.extend_from_slice(&separator);
    }
}

/// Permutation `perm` with `perm[new] = old`.
pub fn nested_dissection(a: &SparseMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let graph = Graph::from_matrix(a);
    let mut d = Dissector {
        graph: &graph,
        owner: vec![0; n],
        next_owner: 0,
        seen: vec![0; n],
        stamp: 0,
        order: Vec::with_capacity(n),
    };
    d.dissect((0..n).collect());
    debug_assert_eq!(d.order.len(), n);
    d.order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_laplacian(nx: usize, ny: usize) -> SparseMatrix {
        let id = |i: usize, j: usize| i + nx * j;
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                t.push((id(i, j), id(i, j), 4.0));
                if i + 1 < nx {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                    t.push((id(i + 1, j), id(i, j), -1.0));
                }
                if j + 1 < ny {
                    t.push((id(i, j), id(i, j + 1), -1.0));
                    t.push((id(i, j + 1), id(i, j), -1.0));
                }
            }
        }
        SparseMatrix::from_triplets(nx * ny, nx * ny, &t).unwrap()
    }

    #[test]
    fn is_permutation() {
        let a = grid_laplacian(30, 17);
        let mut p = nested_dissection(&a);
        p.sort_unstable();
        assert_eq!(p, (0..30 * 17).collect::<Vec<_>>());
    }

    #[test]
    fn handles_disconnected_graphs() {
        let a = SparseMatrix::identity(200);
        let mut p = nested_dissection(&a);
        p.sort_unstable();
        assert_eq!(p, (0..200).collect::<Vec<_>>());
    }
}
