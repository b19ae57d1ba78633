//! Reverse-mode autodiff over a flat tape of 2-D f64 tensors.
//!
//! Every value is an `Array2<f64>`; column vectors are `(n, 1)` and scalars
//! `(1, 1)`. A forward pass records one `Op` per node; `backward` walks the
//! tape in reverse, accumulating gradients additively. Shape mismatches are
//! contract violations and panic with both shapes in the message.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::Rng;

pub type NodeId = usize;

enum Op {
    Leaf { param: Option<String> },
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// matrix + column vector, broadcast over columns
    AddColBroadcast(NodeId, NodeId),
    /// matrix + row vector, broadcast over rows
    AddRowBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Elu(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    MaxPair(NodeId, NodeId),
    /// softmax over rows, independently per column
    SoftmaxCols(NodeId),
    Dropout(NodeId, Array2<f64>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    StackCols(Vec<NodeId>),
    SelectCols(NodeId, Vec<usize>),
    /// gather rows of `table` (embedding lookup); repeated indices accumulate
    SelectRows(NodeId, Vec<usize>),
    Transpose(NodeId),
    Reshape(NodeId),
    /// per-row max over columns; cached argmax per row
    MaxPoolCols(NodeId, Vec<usize>),
    Sum(NodeId),
    /// sum over columns of -log softmax(col)[gold]; caches the softmax
    CrossEntropyCols(NodeId, Vec<usize>, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a forward pass and computes gradients for it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_cols(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - mx).exp());
        let sum: f64 = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id].value;
        (v.nrows(), v.ncols())
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        assert_eq!(v.dim(), (1, 1), "expected scalar node, got {:?}", v.dim());
        v[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.leaf(Array2::zeros((rows, cols)))
    }

    /// Leaf carrying a named parameter; its gradient is collected by name.
    pub fn param(&mut self, name: &str, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: Some(name.to_string()) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch: ({ar},{ac}) x ({br},{bc})");
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "add shape mismatch: {:?} vs {:?}", sa, sb);
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_col_broadcast(&mut self, m: NodeId, col: NodeId) -> NodeId {
        let sm = self.shape(m);
        let sc = self.shape(col);
        assert!(
            sc == (sm.0, 1),
            "column broadcast shape mismatch: {:?} + {:?}",
            sm,
            sc
        );
        let v = &self.nodes[m].value + &self.nodes[col].value;
        self.push(v, Op::AddColBroadcast(m, col))
    }

    pub fn add_row_broadcast(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let sm = self.shape(m);
        let sr = self.shape(row);
        assert!(sr == (1, sm.1), "row broadcast shape mismatch: {:?} + {:?}", sm, sr);
        let v = &self.nodes[m].value + &self.nodes[row].value;
        self.push(v, Op::AddRowBroadcast(m, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "mul shape mismatch: {:?} vs {:?}", sa, sb);
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "div shape mismatch: {:?} vs {:?}", sa, sb);
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.nodes[a].value * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x >= 0.0 { x } else { x.exp() - 1.0 });
        self.push(v, Op::Elu(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn max_pair(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert_eq!(sa, sb, "max_pair shape mismatch: {:?} vs {:?}", sa, sb);
        let mut v = self.nodes[a].value.clone();
        v.zip_mut_with(&self.nodes[b].value, |x, &y| *x = x.max(y));
        self.push(v, Op::MaxPair(a, b))
    }

    pub fn softmax_cols_node(&mut self, a: NodeId) -> NodeId {
        let v = softmax_cols(&self.nodes[a].value);
        self.push(v, Op::SoftmaxCols(a))
    }

    /// Inverted dropout: each unit zeroed with probability `p`, survivors
    /// scaled by `1/(1-p)`. With `train == false` this is the identity.
    pub fn dropout<R: Rng>(&mut self, a: NodeId, p: f64, train: bool, rng: &mut R) -> NodeId {
        assert!((0.0..1.0).contains(&p), "dropout probability {} out of [0,1)", p);
        if !train || p == 0.0 {
            return a;
        }
        let shape = self.nodes[a].value.dim();
        let keep = 1.0 - p;
        let mask = Array2::from_shape_fn(shape, |_| {
            if rng.gen::<f64>() < p {
                0.0
            } else {
                1.0 / keep
            }
        });
        let v = &self.nodes[a].value * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        for &p in parts {
            assert_eq!(self.shape(p).1, cols, "concat_rows column mismatch");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let (r, _) = self.shape(a);
        assert!(start < end && end <= r, "slice_rows {}..{} out of {} rows", start, end, r);
        let v = self.nodes[a].value.slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn stack_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            assert_eq!(self.shape(p).0, rows, "stack_cols row mismatch");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("stack_cols");
        self.push(v, Op::StackCols(parts.to_vec()))
    }

    pub fn select_cols(&mut self, a: NodeId, idxs: &[usize]) -> NodeId {
        let (_, c) = self.shape(a);
        assert!(idxs.iter().all(|&i| i < c), "select_cols index out of {} cols", c);
        let v = self.nodes[a].value.select(Axis(1), idxs);
        self.push(v, Op::SelectCols(a, idxs.to_vec()))
    }

    pub fn select_rows(&mut self, a: NodeId, idxs: &[usize]) -> NodeId {
        let (r, _) = self.shape(a);
        assert!(idxs.iter().all(|&i| i < r), "select_rows index out of {} rows", r);
        let v = self.nodes[a].value.select(Axis(0), idxs);
        self.push(v, Op::SelectRows(a, idxs.to_vec()))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape {:?} -> ({rows},{cols})", (r, c));
        let flat: Vec<f64> = self.nodes[a].value.iter().cloned().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        self.push(v, Op::Reshape(a))
    }

    pub fn max_pool_cols(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(c >= 1, "max_pool_cols on empty matrix");
        let mut arg = vec![0usize; r];
        let mut v = Array2::zeros((r, 1));
        for i in 0..r {
            let mut best = f64::NEG_INFINITY;
            for j in 0..c {
                let x = self.nodes[a].value[(i, j)];
                if x > best {
                    best = x;
                    arg[i] = j;
                }
            }
            v[(i, 0)] = best;
        }
        self.push(v, Op::MaxPoolCols(a, arg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(v, Op::Sum(a))
    }

    /// Summed cross-entropy: logits are `(k, b)`, one gold class per column.
    pub fn cross_entropy_cols(&mut self, logits: NodeId, gold: &[usize]) -> NodeId {
        let (k, b) = self.shape(logits);
        assert_eq!(gold.len(), b, "cross_entropy gold count {} != {} columns", gold.len(), b);
        assert!(gold.iter().all(|&g| g < k), "cross_entropy gold index out of {} classes", k);
        let sm = softmax_cols(&self.nodes[logits].value);
        let mut loss = 0.0;
        for (j, &g) in gold.iter().enumerate() {
            loss -= sm[(g, j)].max(1e-300).ln();
        }
        let v = Array2::from_elem((1, 1), loss);
        self.push(v, Op::CrossEntropyCols(logits, gold.to_vec(), sm))
    }

    /// `W x + b` with the bias broadcast over columns.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let wx = self.matmul(w, x);
        self.add_col_broadcast(wx, b)
    }

    /// Run backward accumulation from a scalar node and return per-parameter
    /// gradients keyed by parameter name.
    pub fn backward(&mut self, loss: NodeId) -> BTreeMap<String, Array2<f64>> {
        assert_eq!(self.nodes[loss].value.dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Array2::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..self.nodes.len()).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g);
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.dot(&self.nodes[b].value.t());
                    let gb = self.nodes[a].value.t().dot(&g);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, g.clone());
                    acc(&mut grads, b, g);
                }
                Op::AddColBroadcast(m, col) => {
                    let (m, col) = (*m, *col);
                    let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, m, g);
                    acc(&mut grads, col, gc);
                }
                Op::AddRowBroadcast(m, row) => {
                    let (m, row) = (*m, *row);
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, m, g);
                    acc(&mut grads, row, gr);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = &self.nodes[b].value;
                    let ga = &g / bv;
                    let gb = -&(&g * &self.nodes[a].value) / &(bv * bv);
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    acc(&mut grads, a, &g * k);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = &self.nodes[id].value;
                    let ga = &g * &(y * &(1.0 - y));
                    acc(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = &self.nodes[id].value;
                    let ga = &g * &(1.0 - y * y);
                    acc(&mut grads, a, ga);
                }
                Op::Elu(a) => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let d = x.mapv(|v| if v >= 0.0 { 1.0 } else { v.exp() });
                    acc(&mut grads, a, &g * &d);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let d = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, a, &g * &d);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let ga = &g * &self.nodes[id].value;
                    acc(&mut grads, a, ga);
                }
                Op::MaxPair(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let mut ga = g.clone();
                    let mut gb = g;
                    ndarray::Zip::from(&mut ga).and(av).and(bv).for_each(|gg, &x, &y| {
                        if x < y {
                            *gg = 0.0
                        }
                    });
                    ndarray::Zip::from(&mut gb).and(av).and(bv).for_each(|gg, &x, &y| {
                        if x >= y {
                            *gg = 0.0
                        }
                    });
                    acc(&mut grads, a, ga);
                    acc(&mut grads, b, gb);
                }
                Op::SoftmaxCols(a) => {
                    let a = *a;
                    let y = &self.nodes[id].value;
                    let mut ga = Array2::zeros(y.dim());
                    for j in 0..y.ncols() {
                        let dot: f64 = (0..y.nrows()).map(|i| g[(i, j)] * y[(i, j)]).sum();
                        for i in 0..y.nrows() {
                            ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    acc(&mut grads, a, ga);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let ga = &g * mask;
                    acc(&mut grads, a, ga);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut start = 0;
                    for p in parts {
                        let r = self.nodes[p].value.nrows();
                        let gp = g.slice(s![start..start + r, ..]).to_owned();
                        acc(&mut grads, p, gp);
                        start += r;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let (a, start, end) = (*a, *start, *end);
                    let mut ga = Array2::zeros(self.nodes[a].value.dim());
                    ga.slice_mut(s![start..end, ..]).assign(&g);
                    acc(&mut grads, a, ga);
                }
                Op::StackCols(parts) => {
                    let parts = parts.clone();
                    let mut start = 0;
                    for p in parts {
                        let c = self.nodes[p].value.ncols();
                        let gp = g.slice(s![.., start..start + c]).to_owned();
                        acc(&mut grads, p, gp);
                        start += c;
                    }
                }
                Op::SelectCols(a, idxs) => {
                    let a = *a;
                    let idxs = idxs.clone();
                    let mut ga = Array2::zeros(self.nodes[a].value.dim());
                    for (j, &src) in idxs.iter().enumerate() {
                        for i in 0..ga.nrows() {
                            ga[(i, src)] += g[(i, j)];
                        }
                    }
                    acc(&mut grads, a, ga);
                }
                Op::SelectRows(a, idxs) => {
                    let a = *a;
                    let idxs = idxs.clone();
                    let mut ga = Array2::zeros(self.nodes[a].value.dim());
                    for (i, &src) in idxs.iter().enumerate() {
                        for j in 0..ga.ncols() {
                            ga[(src, j)] += g[(i, j)];
                        }
                    }
                    acc(&mut grads, a, ga);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    acc(&mut grads, a, g.t().to_owned());
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let dim = self.nodes[a].value.dim();
                    let flat: Vec<f64> = g.iter().cloned().collect();
                    let ga = Array2::from_shape_vec(dim, flat).expect("reshape grad");
                    acc(&mut grads, a, ga);
                }
                Op::MaxPoolCols(a, arg) => {
                    let a = *a;
                    let arg = arg.clone();
                    let mut ga = Array2::zeros(self.nodes[a].value.dim());
                    for (i, &j) in arg.iter().enumerate() {
                        ga[(i, j)] += g[(i, 0)];
                    }
                    acc(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let ga = Array2::from_elem(self.nodes[a].value.dim(), g[(0, 0)]);
                    acc(&mut grads, a, ga);
                }
                Op::CrossEntropyCols(logits, gold, sm) => {
                    let logits = *logits;
                    let scale = g[(0, 0)];
                    let mut ga = sm.clone();
                    for (j, &gi) in gold.iter().enumerate() {
                        ga[(gi, j)] -= 1.0;
                    }
                    acc(&mut grads, logits, ga * scale);
                }
            }
        }

        let mut by_param: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads[i] {
                    by_param
                        .entry(name.clone())
                        .and_modify(|e| *e += g)
                        .or_insert_with(|| g.clone());
                }
            }
        }
        by_param
    }
}
