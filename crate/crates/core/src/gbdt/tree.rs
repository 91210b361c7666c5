use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Tree node. Internal nodes send a row left iff `value <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree stored as a flat node array rooted at index 0. Children
/// always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree without nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            match *n {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(Error::Format(format!("node {i}: non-finite leaf value")));
                }
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::Format(format!("node {i}: non-finite threshold")));
                    }
                    for c in [left as usize, right as usize] {
                        if c <= i || c >= nodes.len() {
                            return Err(Error::Format(format!("node {i}: bad child index {c}")));
                        }
                        parents[c] += 1;
                    }
                }
                _ => {}
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::Format("nodes do not form a tree".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Column-major copy of the training matrix with per-feature sort orders.
pub(crate) struct ColumnData {
    pub columns: Vec<Vec<f64>>,
    pub sorted: Vec<Vec<u32>>,
    /// `columns[f]` permuted by `sorted[f]`.
    pub sorted_values: Vec<Vec<f64>>,
}

impl ColumnData {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        cell: impl Fn(usize, usize) -> f64 + Sync,
        exec: Exec,
    ) -> Self {
        let columns: Vec<Vec<f64>> =
            par::map_range(exec, n_cols, |j| (0..n_rows).map(|i| cell(i, j)).collect());
        let sorted = par::map(exec, &columns, |col: &Vec<f64>| {
            let mut idx: Vec<u32> = (0..n_rows as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        });
        let sorted_values = columns
            .iter()
            .zip(&sorted)
            .map(|(col, idx)| idx.iter().map(|&i| col[i as usize]).collect())
            .collect();
        Self {
            columns,
            sorted,
            sorted_values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct NodeStats {
    node: usize,
    g: f64,
    h: f64,
    count: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    gl: f64,
    hl: f64,
    cl: usize,
}

/// Node slot of a row for the current level (`u32::MAX` when its node is
/// finished) with its gradient and hessian.
#[derive(Clone, Copy)]
struct RowState {
    slot: u32,
    g: f64,
    h: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Newton leaf value scaled by the learning rate.
pub(crate) fn leaf_value(g: f64, h: f64, lambda: f64, learning_rate: f64) -> f64 {
    let denom = h + lambda;
    if denom <= 0.0 {
        0.0
    } else {
        -g / denom * learning_rate
    }
}

/// Best split of every active node for one feature, scanning the rows in
/// ascending feature order. Candidates sit between consecutive distinct
/// values; ties keep the lowest threshold.
fn scan_feature(
    data: &ColumnData,
    feature: usize,
    rows: &[RowState],
    active: &[NodeStats],
    params: &GrowParams,
) -> Vec<Option<Candidate>> {
    #[derive(Clone, Copy)]
    struct Running {
        gl: f64,
        hl: f64,
        cl: usize,
        last: f64,
    }
    let values = &data.sorted_values[feature];
    if values.first() == values.last() {
        return vec![None; active.len()];
    }
    let mut run = vec![
        Running {
            gl: 0.0,
            hl: 0.0,
            cl: 0,
            last: f64::NEG_INFINITY,
        };
        active.len()
    ];
    let parent: Vec<f64> = active
        .iter()
        .map(|a| score(a.g, a.h, params.lambda))
        .collect();
    let mut best_gain = vec![f64::NEG_INFINITY; active.len()];
    let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
    let min_leaf = params.min_samples_leaf.max(1);
    for (&r, &v) in data.sorted[feature].iter().zip(values) {
        let row = rows[r as usize];
        if row.slot == u32::MAX {
            continue;
        }
        let s = row.slot as usize;
        let st = &mut run[s];
        let node = &active[s];
        if st.cl >= min_leaf && node.count - st.cl >= min_leaf && v > st.last {
            let hr = node.h - st.hl;
            if st.hl + params.lambda > 0.0 && hr + params.lambda > 0.0 {
                // ½ [GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)]
                let gain = 0.5
                    * (score(st.gl, st.hl, params.lambda)
                        + score(node.g - st.gl, hr, params.lambda)
                        - parent[s]);
                if gain > best_gain[s] {
                    best_gain[s] = gain;
                    let mut threshold = 0.5 * (st.last + v);
                    if threshold >= v {
                        threshold = st.last;
                    }
                    best[s] = Some(Candidate {
                        gain,
                        feature,
                        threshold,
                        gl: st.gl,
                        hl: st.hl,
                        cl: st.cl,
                    });
                }
            }
        }
        st.gl += row.g;
        st.hl += row.h;
        st.cl += 1;
        st.last = v;
    }
    best
}

/// Grows one tree level by level with exact greedy split search.
///
/// Splits are searched per feature (in parallel under [`Exec::Parallel`]) and
/// reduced in feature order, so the result does not depend on `exec`.
/// Returns the tree and the leaf value reached by each training row.
pub(crate) fn grow_tree(
    data: &ColumnData,
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
    exec: Exec,
) -> (Tree, Vec<f64>) {
    let n = data.n_rows();
    let n_features = data.columns.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0u32; n];
    let mut active = vec![NodeStats {
        node: 0,
        g: grad.iter().sum(),
        h: hess.iter().sum(),
        count: n,
    }];

    for _depth in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let mut slot_of_node = vec![u32::MAX; nodes.len()];
        for (s, a) in active.iter().enumerate() {
            slot_of_node[a.node] = s as u32;
        }
        let rows: Vec<RowState> = node_of
            .iter()
            .enumerate()
            .map(|(r, &nd)| RowState {
                slot: slot_of_node[nd as usize],
                g: grad[r],
                h: hess[r],
            })
            .collect();

        let per_feature = par::map_range(exec, n_features, |f| {
            scan_feature(data, f, &rows, &active, params)
        });
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        for cands in per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if b.is_none_or(|cur| c.gain > cur.gain) {
                        *b = Some(c);
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut split_of_slot: Vec<Option<(usize, f64, u32, u32)>> = vec![None; active.len()];
        for (s, a) in active.iter().enumerate() {
            match best[s] {
                Some(c) if c.gain > 0.0 => {
                    let left = nodes.len() as u32;
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[a.node] = Node::Split {
                        feature: c.feature as u32,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    split_of_slot[s] = Some((c.feature, c.threshold, left, right));
                    next.push(NodeStats {
                        node: left as usize,
                        g: c.gl,
                        h: c.hl,
                        count: c.cl,
                    });
                    next.push(NodeStats {
                        node: right as usize,
                        g: a.g - c.gl,
                        h: a.h - c.hl,
                        count: a.count - c.cl,
                    });
                }
                _ => {}
            }
        }
        for (r, nd) in node_of.iter_mut().enumerate() {
            let slot = rows[r].slot;
            if slot == u32::MAX {
                continue;
            }
            if let Some((f, thr, left, right)) = split_of_slot[slot as usize] {
                *nd = if data.columns[f][r] <= thr {
                    left
                } else {
                    right
                };
            }
        }
        active = next;
    }
    // Leaf values come from per-row sums over each leaf's rows.
    let mut g = vec![0.0; nodes.len()];
    let mut h = vec![0.0; nodes.len()];
    for (r, &nd) in node_of.iter().enumerate() {
        g[nd as usize] += grad[r];
        h[nd as usize] += hess[r];
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = leaf_value(g[i], h[i], params.lambda, params.learning_rate);
        }
    }
    let tree = Tree { nodes };
    let per_row = node_of
        .iter()
        .map(|&nd| match tree.nodes[nd as usize] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("rows end in leaves"),
        })
        .collect();
    (tree, per_row)
}
