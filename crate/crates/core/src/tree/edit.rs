//! Ordered labeled tree edit distance (Zhang–Shasha, unit costs).
//!
//! Labels are node names. Insert, delete and relabel each cost 1.

use super::{NodeId, RelationTree};

struct PostOrder<'a> {
    labels: Vec<&'a str>,
    /// Post-order index of each node's leftmost leaf descendant.
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> PostOrder<'a> {
    fn new(tree: &'a RelationTree) -> Self {
        let mut labels = Vec::with_capacity(tree.len());
        let mut lml = Vec::with_capacity(tree.len());
        // iterative post-order: (node, children visited?)
        let mut stack: Vec<(NodeId, bool)> = vec![(tree.root(), false)];
        let mut first_leaf: Vec<usize> = Vec::new();
        while let Some((id, expanded)) = stack.pop() {
            let kids = tree.direct_children(id);
            if !expanded && !kids.is_empty() {
                stack.push((id, true));
                for c in kids.iter().rev() {
                    stack.push((*c, false));
                }
                first_leaf.push(usize::MAX);
                continue;
            }
            let idx = labels.len();
            labels.push(tree.name(id));
            let leftmost = if kids.is_empty() {
                idx
            } else {
                first_leaf.pop().expect("balanced")
            };
            lml.push(leftmost);
            // the first finished child of the enclosing node fixes its leftmost leaf
            if let Some(slot) = first_leaf.last_mut() {
                if *slot == usize::MAX {
                    *slot = leftmost;
                }
            }
        }
        let n = labels.len();
        let mut keyroots = Vec::new();
        for i in 0..n {
            // i is a keyroot iff no later node shares its leftmost leaf
            if !(i + 1..n).any(|j| lml[j] == lml[i]) {
                keyroots.push(i);
            }
        }
        Self { labels, lml, keyroots }
    }
}

/// Unit-cost edit distance between two trees, comparing node names.
pub fn tree_edit_distance(a: &RelationTree, b: &RelationTree) -> usize {
    let ta = PostOrder::new(a);
    let tb = PostOrder::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];

    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.lml[i], tb.lml[j]);
            // fd indices are offset so that fd[x - li + 1][y - lj + 1] covers forests li..=x, lj..=y
            fd[0][0] = 0;
            for x in li..=i {
                fd[x - li + 1][0] = fd[x - li][0] + 1;
            }
            for y in lj..=j {
                fd[0][y - lj + 1] = fd[0][y - lj] + 1;
            }
            for x in li..=i {
                for y in lj..=j {
                    let (fx, fy) = (x - li + 1, y - lj + 1);
                    let del = fd[fx - 1][fy] + 1;
                    let ins = fd[fx][fy - 1] + 1;
                    if ta.lml[x] == li && tb.lml[y] == lj {
                        let relabel = usize::from(ta.labels[x] != tb.labels[y]);
                        let best = del.min(ins).min(fd[fx - 1][fy - 1] + relabel);
                        fd[fx][fy] = best;
                        td[x][y] = best;
                    } else {
                        let (px, py) = (ta.lml[x] - li, tb.lml[y] - lj);
                        fd[fx][fy] = del.min(ins).min(fd[px][py] + td[x][y]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// `100 · (1 − distance / max(|a|, |b|))`, floored at 0.
///
/// The distance can exceed the larger tree size when shapes differ a lot
/// (it is bounded by `|a| + |b| − 2`), hence the floor.
pub fn tree_edit_similarity(a: &RelationTree, b: &RelationTree) -> f64 {
    let norm = a.len().max(b.len()) as f64;
    (100.0 * (1.0 - tree_edit_distance(a, b) as f64 / norm)).max(0.0)
}
