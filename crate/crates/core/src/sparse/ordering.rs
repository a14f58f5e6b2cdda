/// Pivoting role of a node in a symmetric (possibly indefinite) matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    /// Carries a diagonal that is safe to pivot on at any time.
    Regular,
    /// Constraint row with a zero diagonal. Eligible once every `Regular`
    /// neighbour is eliminated and at least one neighbour is: its pivot is
    /// then a Schur complement over the full support of the row, which
    /// cannot cancel to zero while the rows keep full rank.
    Constraint,
    /// Variable without curvature. Eligible once an eligible neighbour has
    /// been eliminated, so its pivot has picked up a non-zero update.
    Uncurved,
}

/// Minimum-degree ordering on the explicit elimination graph.
///
/// `adjacency[i]` lists the neighbours of node `i` (symmetric, no self
/// loops required); `class` gates when zero-diagonal nodes may be pivoted.
/// If nothing is eligible the lowest-index remaining node is forced. Ties
/// break on the lowest index, which keeps the ordering deterministic.
///
/// Returns `perm` with `perm[k]` = node eliminated at step `k`.
pub fn minimum_degree(adjacency: &[Vec<usize>], class: &[NodeClass]) -> Vec<usize> {
    let n = adjacency.len();
    assert_eq!(class.len(), n);
    let mut adj: Vec<Vec<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut v: Vec<usize> = nb.iter().copied().filter(|&j| j != i).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    // Regular neighbours still to be eliminated, per constraint node.
    let mut pending: Vec<usize> = (0..n)
        .map(|i| adj[i].iter().filter(|&&j| class[j] == NodeClass::Regular).count())
        .collect();
    let mut eliminated = vec![false; n];
    let mut ready: Vec<bool> = class.iter().map(|c| *c == NodeClass::Regular).collect();
    let original = adj.clone();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();

    for _ in 0..n {
        let pick = (0..n)
            .filter(|&i| !eliminated[i] && ready[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .or_else(|| (0..n).find(|&i| !eliminated[i]))
            .expect("a node remains");
        // A forced pick still counts as eligible for propagation.
        ready[pick] = true;
        eliminated[pick] = true;
        perm.push(pick);

        for &u in &original[pick] {
            if class[pick] == NodeClass::Regular {
                pending[u] -= 1;
            }
            if class[u] == NodeClass::Constraint && pending[u] == 0 {
                ready[u] = true;
            }
        }
        let nbrs = std::mem::take(&mut adj[pick]);
        for &u in &nbrs {
            // Neighbours of the pivot become a clique.
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != pick {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            if ready[pick] && class[u] == NodeClass::Uncurved {
                ready[u] = true;
            }
        }
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeClass::{Constraint as C, Regular as R, Uncurved as U};

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn star_eliminates_leaves_first() {
        // hub 0 connected to 1..5
        let mut adj = vec![vec![1, 2, 3, 4, 5]];
        adj.extend((1..6).map(|_| vec![0]));
        let p = minimum_degree(&adj, &[R; 6]);
        assert!(is_permutation(&p));
        // hub only becomes cheapest once a single leaf remains
        assert!(p.iter().position(|&i| i == 0).unwrap() >= 4);
    }

    #[test]
    fn delayed_nodes_wait_for_a_neighbour() {
        // x0 - c2 - x1 path with the constraint in the middle having lowest degree
        let adj = vec![vec![2, 3], vec![2, 3], vec![0, 1], vec![0, 1]];
        let p = minimum_degree(&adj, &[R, R, C, R]);
        assert!(is_permutation(&p));
        let pos_c = p.iter().position(|&i| i == 2).unwrap();
        assert!(pos_c > p.iter().position(|&i| i == 0).unwrap().min(p.iter().position(|&i| i == 1).unwrap()));
    }

    #[test]
    fn readiness_propagates_through_uncurved_chain() {
        // x0 - c1 - t2 - c3 with only x0 eligible at the start
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let p = minimum_degree(&adj, &[R, C, U, C]);
        assert_eq!(p, vec![0, 1, 2, 3]);
    }

    #[test]
    fn constraint_waits_for_its_whole_support() {
        // Rows c3 = {x0, x1} and c4 = {x0, x2}; x0 has the lowest degree.
        // After x0 alone, pivoting c3 then c4 would cancel exactly.
        let adj = vec![vec![3, 4], vec![3], vec![4], vec![0, 1], vec![0, 2]];
        let p = minimum_degree(&adj, &[R, R, R, C, C]);
        let pos = |k| p.iter().position(|&i| i == k).unwrap();
        assert!(pos(3) > pos(0).max(pos(1)));
        assert!(pos(4) > pos(0).max(pos(2)));
    }

    #[test]
    fn isolated_delayed_node_still_ordered() {
        let adj = vec![vec![], vec![]];
        let p = minimum_degree(&adj, &[C, R]);
        assert_eq!(p, vec![1, 0]);
    }
}
