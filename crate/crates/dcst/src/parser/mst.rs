//! Maximum spanning arborescence decoding over arc score matrices.
//!
//! Scores come in as `(m, m+1)`: row `i` holds the head candidate scores of
//! dependent `i+1`, with column 0 being ROOT. Decoding enforces the
//! single-root constraint by running Chu-Liu/Edmonds once per candidate root
//! child and keeping the best total.

use ndarray::Array2;

use crate::tree::validate_tree;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Plain Chu-Liu/Edmonds on a dense `(n, n)` matrix `score[head][dep]`,
/// rooted at vertex 0. Returns the parent of each vertex (parent[0] unused).
fn chu_liu_edmonds(score: &Array2<f64>) -> Vec<usize> {
    let n = score.nrows();
    if n == 1 {
        return vec![0];
    }
    // Best incoming edge per non-root vertex.
    let mut parent = vec![0usize; n];
    for d in 1..n {
        let mut best = NEG_INF;
        for h in 0..n {
            if h != d && score[(h, d)] > best {
                best = score[(h, d)];
                parent[d] = h;
            }
        }
    }
    // Find a cycle among the chosen edges.
    let cycle = find_cycle(&parent);
    let cycle = match cycle {
        Some(c) => c,
        None => return parent,
    };
    let in_cycle: Vec<bool> = {
        let mut v = vec![false; n];
        for &c in &cycle {
            v[c] = true;
        }
        v
    };

    // Contract the cycle into one node placed at index `n_out` of the new
    // graph; outside vertices keep their relative order.
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let n_out = outside.len();
    let mut new_score = Array2::from_elem((n_out + 1, n_out + 1), NEG_INF);
    // Which cycle vertex an edge into/out of the contraction really uses.
    let mut enter_via = vec![0usize; n_out];
    let mut leave_via = vec![0usize; n_out];

    for (i, &u) in outside.iter().enumerate() {
        for (j, &v) in outside.iter().enumerate() {
            if i != j {
                new_score[(i, j)] = score[(u, v)];
            }
        }
        // u -> cycle: entering at v costs score(u, v) - score(parent[v], v).
        let mut best = NEG_INF;
        for &v in &cycle {
            let adj = score[(u, v)] - score[(parent[v], v)];
            if adj > best {
                best = adj;
                enter_via[i] = v;
            }
        }
        new_score[(i, n_out)] = best;
        // cycle -> u: leave from the best cycle vertex.
        let mut best = NEG_INF;
        for &v in &cycle {
            if score[(v, u)] > best {
                best = score[(v, u)];
                leave_via[i] = v;
            }
        }
        new_score[(n_out, i)] = best;
    }

    let contracted_parent = chu_liu_edmonds(&new_score);

    // Expand back to the original vertex set.
    let mut result = vec![0usize; n];
    for (i, &u) in outside.iter().enumerate() {
        if u == 0 {
            continue;
        }
        let p = contracted_parent[i];
        result[u] = if p == n_out { leave_via[i] } else { outside[p] };
    }
    // The contracted node's parent decides where the cycle is broken.
    let p = contracted_parent[n_out];
    debug_assert!(p < n_out, "cycle node cannot be its own parent");
    let entry = enter_via[p];
    for &v in &cycle {
        result[v] = if v == entry { outside[p] } else { parent[v] };
    }
    result
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let n = parent.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            // v closes a cycle; collect it from the path tail.
            let pos = path.iter().position(|&x| x == v).unwrap();
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

fn to_square(scores: &Array2<f64>) -> Array2<f64> {
    let m = scores.nrows();
    assert_eq!(scores.ncols(), m + 1, "arc scores must be (m, m+1)");
    let mut sq = Array2::from_elem((m + 1, m + 1), NEG_INF);
    for dep in 1..=m {
        for head in 0..=m {
            if head != dep {
                sq[(head, dep)] = scores[(dep - 1, head)];
            }
        }
    }
    sq
}

fn tree_score(scores: &Array2<f64>, heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| scores[(i, h)])
        .sum()
}

/// Highest-scoring single-rooted arborescence for an `(m, m+1)` score matrix.
///
/// The objective is head-factored, so the search runs once per candidate
/// root child with all other ROOT arcs disabled, keeping the best total.
pub fn decode_mst(scores: &Array2<f64>) -> Vec<usize> {
    let m = scores.nrows();
    assert!(m >= 1);
    if m == 1 {
        return vec![0];
    }
    let sq = to_square(scores);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for root_child in 1..=m {
        let mut constrained = sq.clone();
        for d in 1..=m {
            if d != root_child {
                constrained[(0, d)] = NEG_INF;
            }
        }
        let parent = chu_liu_edmonds(&constrained);
        let heads: Vec<usize> = (1..=m).map(|v| parent[v]).collect();
        let total = tree_score(scores, &heads);
        if best.as_ref().is_none_or(|(s, _)| total > *s) {
            best = Some((total, heads));
        }
    }
    let (_, heads) = best.expect("at least one candidate root child");
    debug_assert!(validate_tree(&heads).is_ok());
    heads
}

/// Exhaustive oracle: best single-rooted tree by enumerating all head
/// arrays in `[0..m]^m`. Ties break to the lexicographically smallest
/// head array. Only sensible for `m <= 7`.
pub fn brute_force_best_tree(scores: &Array2<f64>) -> Vec<usize> {
    let m = scores.nrows();
    assert!(m <= 7, "brute force limited to m <= 7, got {}", m);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut heads = vec![0usize; m];
    loop {
        if validate_tree(&heads).is_ok() {
            let total = tree_score(scores, &heads);
            if best.as_ref().is_none_or(|(s, _)| total > *s) {
                best = Some((total, heads.clone()));
            }
        }
        // Lexicographic increment over [0..m]^m.
        let mut i = m;
        loop {
            if i == 0 {
                return best.expect("at least one valid tree").1;
            }
            i -= 1;
            if heads[i] < m {
                heads[i] += 1;
                break;
            }
            heads[i] = 0;
        }
    }
}
