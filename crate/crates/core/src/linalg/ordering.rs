//! Reverse Cuthill–McKee ordering for symmetric sparsity patterns.

use std::collections::VecDeque;

use super::SparseSym;

/// Returns `perm` with `perm[k]` = original index placed at position `k`.
pub fn reverse_cuthill_mckee(a: &SparseSym) -> Vec<usize> {
    let n = a.n();
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|j| a.column(j).map(|(i, _)| i).filter(|&i| i != j).collect())
        .collect();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &adjacency, &degree, &visited);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            order.push(node);
            let mut next: Vec<usize> = adjacency[node].iter().copied().filter(|&i| !visited[i]).collect();
            next.sort_by_key(|&i| (degree[i], i));
            for i in next {
                visited[i] = true;
                queue.push_back(i);
            }
        }
    }
    order.reverse();
    order
}

/// Level structure of a BFS from `root` restricted to unvisited nodes.
fn levels(root: usize, adjacency: &[Vec<usize>], blocked: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = blocked.to_vec();
    seen[root] = true;
    let mut out = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &node in out.last().expect("non-empty") {
            for &i in &adjacency[node] {
                if !seen[i] {
                    seen[i] = true;
                    next.push(i);
                }
            }
        }
        if next.is_empty() {
            return out;
        }
        out.push(next);
    }
}

fn pseudo_peripheral(seed: usize, adjacency: &[Vec<usize>], degree: &[usize], blocked: &[bool]) -> usize {
    let mut root = seed;
    let mut depth = levels(root, adjacency, blocked).len();
    loop {
        let structure = levels(root, adjacency, blocked);
        let candidate = *structure
            .last()
            .expect("non-empty")
            .iter()
            .min_by_key(|&&i| (degree[i], i))
            .expect("last level non-empty");
        let cand_depth = levels(candidate, adjacency, blocked).len();
        if cand_depth > depth {
            root = candidate;
            depth = cand_depth;
        } else {
            return root;
        }
    }
}
