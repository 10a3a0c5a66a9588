//! Reverse-mode autodiff over a per-forward tape.
//!
//! Each op evaluates eagerly and records enough structure for its
//! vector-Jacobian product; `backward` walks the tape once in reverse.
//! Non-smooth ops (max-pool, Chamfer nearest-neighbor) recompute their
//! arg-selections in backward from the stored forward values, choosing the
//! first extremum on exact ties so gradients are deterministic.

use crate::nn::tensor::{mm_nn_acc, mm_nt_acc, mm_tn_acc, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

enum Op {
    /// Constant input; no gradient.
    Const,
    /// Parameter leaf; gradients accumulate per `param` slot.
    Leaf { param: usize },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    /// Row-broadcast add of a 1×c bias.
    AddBias { a: NodeId, bias: NodeId },
    /// A·B.
    Matmul { a: NodeId, b: NodeId },
    /// A·Bᵀ.
    MatmulNT { a: NodeId, b: NodeId },
    Gelu { a: NodeId },
    Tanh { a: NodeId },
    /// Per-row normalization with learnable gain/shift (1×c each).
    LayerNorm {
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    SoftmaxRows { a: NodeId },
    /// Select rows of `a` in the given order.
    GatherRows { a: NodeId, rows: Vec<usize> },
    /// Inverse of gather over a partition: each destination row is written
    /// by exactly one (source, local row) pair.
    AssembleRows {
        sources: Vec<(NodeId, Vec<usize>)>,
    },
    /// Column-wise max over fixed-size row groups, restricted to rows
    /// whose mask entry is positive. Every group must have one such row.
    MaxPoolGroups {
        a: NodeId,
        group: usize,
        mask: Vec<f64>,
    },
    /// Overwrite `width` columns starting at `col` of the listed rows with
    /// a broadcast 1×width token.
    WriteToken {
        base: NodeId,
        token: NodeId,
        rows: Vec<usize>,
        col: usize,
    },
    /// Mean over rows of softmax cross-entropy against integer labels;
    /// scalar output.
    CrossEntropyMean { logits: NodeId, labels: Vec<usize> },
    /// Mean over rows of the symmetric squared-distance set loss between
    /// the row's predicted points (flattened x,y,z triples) and its target
    /// set; scalar output.
    ChamferRows {
        pred: NodeId,
        targets: Vec<Vec<[f64; 3]>>,
    },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Gradient-recording computation tape. Build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by tape op"
        );
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Scalar convenience for 1×1 nodes.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let n = &self.nodes[id.0];
        assert_eq!((n.rows, n.cols), (1, 1), "node is not a scalar");
        n.value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        self.push(Op::Const, rows, cols, value)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(1, 1, vec![v])
    }

    /// Register a parameter tensor under gradient slot `param`.
    pub fn leaf(&mut self, param: usize, t: &Tensor) -> NodeId {
        self.push(Op::Leaf { param }, t.rows, t.cols, t.data.clone())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!((ra, ca), (rb, cb), "add shape mismatch");
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add { a, b }, ra, ca, value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        self.push(Op::Scale { a, factor }, r, c, value)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(bias);
        assert_eq!((rb, cb), (1, c), "bias must be 1x{c}, got {rb}x{cb}");
        let bv = &self.nodes[bias.0].value;
        let mut value = self.nodes[a.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += bv[j];
            }
        }
        self.push(Op::AddBias { a, bias }, r, c, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut value = vec![0.0; m * n];
        mm_nn_acc(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &mut value,
            m,
            k,
            n,
        );
        self.push(Op::Matmul { a, b }, m, n, value)
    }

    /// a · bᵀ, used for attention scores.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut value = vec![0.0; m * n];
        mm_nt_acc(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            &mut value,
            m,
            k,
            n,
        );
        self.push(Op::MatmulNT { a, b }, m, n, value)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| gelu(x)).collect();
        self.push(Op::Gelu { a }, r, c, value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh { a }, r, c, value)
    }

    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(gamma), (1, c), "layer_norm gamma shape");
        assert_eq!(self.shape(beta), (1, c), "layer_norm beta shape");
        let av = &self.nodes[a.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let (mu, inv_std) = row_moments(row);
            for j in 0..c {
                value[i * c + j] = (row[j] - mu) * inv_std * gv[j] + bv[j];
            }
        }
        self.push(Op::LayerNorm { a, gamma, beta }, r, c, value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                value[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                value[i * c + j] /= sum;
            }
        }
        self.push(Op::SoftmaxRows { a }, r, c, value)
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let (ra, c) = self.shape(a);
        assert!(rows.iter().all(|&i| i < ra), "gather row out of range");
        let av = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            value.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        let n = rows.len();
        self.push(Op::GatherRows { a, rows }, n, c, value)
    }

    /// Reassemble a row-partitioned matrix: `sources` lists, per piece,
    /// the destination row of each of its local rows. The destination rows
    /// across all pieces must cover `0..rows` exactly once.
    pub fn assemble_rows(&mut self, sources: Vec<(NodeId, Vec<usize>)>, rows: usize) -> NodeId {
        assert!(!sources.is_empty(), "assemble_rows needs at least one source");
        let (_, c) = self.shape(sources[0].0);
        let mut value = vec![0.0; rows * c];
        let mut written = vec![false; rows];
        for (src, dests) in &sources {
            let (sr, sc) = self.shape(*src);
            assert_eq!(sc, c, "assemble_rows column mismatch");
            assert_eq!(sr, dests.len(), "assemble_rows row-count mismatch");
            let sv = &self.nodes[src.0].value;
            for (local, &dest) in dests.iter().enumerate() {
                assert!(dest < rows && !written[dest], "assemble_rows coverage");
                written[dest] = true;
                value[dest * c..(dest + 1) * c]
                    .copy_from_slice(&sv[local * c..(local + 1) * c]);
            }
        }
        assert!(written.iter().all(|&w| w), "assemble_rows left a row unwritten");
        self.push(Op::AssembleRows { sources }, rows, c, value)
    }

    /// Column-wise max over consecutive row groups of size `group`,
    /// considering only rows with `mask > 0`. `mask` has one entry per
    /// input row; every group needs at least one unmasked row.
    pub fn max_pool_groups(&mut self, a: NodeId, group: usize, mask: Vec<f64>) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r % group, 0, "rows {r} not divisible by group {group}");
        assert_eq!(mask.len(), r, "mask length mismatch");
        let groups = r / group;
        let av = &self.nodes[a.0].value;
        let mut value = vec![f64::NEG_INFINITY; groups * c];
        for g in 0..groups {
            let mut any = false;
            for t in 0..group {
                let row = g * group + t;
                if mask[row] <= 0.0 {
                    continue;
                }
                any = true;
                for j in 0..c {
                    let v = av[row * c + j];
                    if v > value[g * c + j] {
                        value[g * c + j] = v;
                    }
                }
            }
            assert!(any, "max_pool_groups: group {g} fully masked");
        }
        self.push(Op::MaxPoolGroups { a, group, mask }, groups, c, value)
    }

    /// Overwrite columns `col..col+width` of the listed rows with the
    /// broadcast token (a 1×width node).
    pub fn write_token(
        &mut self,
        base: NodeId,
        token: NodeId,
        rows: Vec<usize>,
        col: usize,
    ) -> NodeId {
        let (r, c) = self.shape(base);
        let (tr, width) = self.shape(token);
        assert_eq!(tr, 1, "token must be a single row");
        assert!(col + width <= c, "token write out of bounds");
        assert!(rows.iter().all(|&i| i < r), "token row out of range");
        let tv = self.nodes[token.0].value.clone();
        let mut value = self.nodes[base.0].value.clone();
        for &i in &rows {
            value[i * c + col..i * c + col + width].copy_from_slice(&tv);
        }
        self.push(Op::WriteToken { base, token, rows, col }, r, c, value)
    }

    /// Mean softmax cross-entropy over rows; stable log-sum-exp form.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let (r, c) = self.shape(logits);
        assert_eq!(labels.len(), r, "one label per logit row");
        assert!(labels.iter().all(|&l| l < c), "label out of range");
        assert!(r > 0, "cross_entropy_mean on empty logits");
        let lv = &self.nodes[logits.0].value;
        let mut total = 0.0;
        for i in 0..r {
            let row = &lv[i * c..(i + 1) * c];
            total += log_sum_exp(row) - row[labels[i]];
        }
        let value = vec![total / r as f64];
        self.push(Op::CrossEntropyMean { logits, labels }, 1, 1, value)
    }

    /// Mean over rows of the per-row symmetric squared-distance set loss.
    /// Row `i` of `pred` holds `cols/3` predicted points; `targets[i]` is
    /// its ground-truth set.
    pub fn chamfer_rows(&mut self, pred: NodeId, targets: Vec<Vec<[f64; 3]>>) -> NodeId {
        let (r, c) = self.shape(pred);
        assert_eq!(c % 3, 0, "pred cols must be a multiple of 3");
        assert_eq!(targets.len(), r, "one target set per pred row");
        assert!(r > 0, "chamfer_rows on empty prediction");
        assert!(
            targets.iter().all(|t| !t.is_empty()),
            "chamfer target set empty"
        );
        let pv = &self.nodes[pred.0].value;
        let n = c / 3;
        let mut total = 0.0;
        for i in 0..r {
            let row = &pv[i * c..(i + 1) * c];
            total += chamfer_row(row, n, &targets[i]).0;
        }
        let value = vec![total / r as f64];
        self.push(Op::ChamferRows { pred, targets }, 1, 1, value)
    }

    /// Reverse-mode sweep from a scalar loss node. Returns per-parameter
    /// gradients shaped like the tensors passed to [`Tape::leaf`], indexed
    /// by their `param` slot (`num_params` sizes the result).
    pub fn backward(&self, loss: NodeId, num_params: usize) -> Vec<Tensor> {
        let n = &self.nodes[loss.0];
        assert_eq!((n.rows, n.cols), (1, 1), "backward needs a scalar loss");
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut grads: Vec<Option<Tensor>> = (0..num_params).map(|_| None).collect();
        let mut param_shapes: Vec<Option<(usize, usize)>> = vec![None; num_params];

        for idx in (0..=loss.0).rev() {
            // Record leaf shapes even if unreached so zero grads have the
            // right shape.
            if let Op::Leaf { param } = self.nodes[idx].op {
                param_shapes[param] = Some((self.nodes[idx].rows, self.nodes[idx].cols));
            }
            let Some(up) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Leaf { param } => {
                    let g = grads[*param]
                        .get_or_insert_with(|| Tensor::zeros(node.rows, node.cols));
                    for (gd, u) in g.data.iter_mut().zip(&up) {
                        *gd += u;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, &up, self.size(*a));
                    accumulate(&mut adj, *b, &up, self.size(*b));
                }
                Op::Scale { a, factor } => {
                    let f = *factor;
                    let da: Vec<f64> = up.iter().map(|u| u * f).collect();
                    accumulate(&mut adj, *a, &da, self.size(*a));
                }
                Op::AddBias { a, bias } => {
                    accumulate(&mut adj, *a, &up, self.size(*a));
                    let (r, c) = (node.rows, node.cols);
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += up[i * c + j];
                        }
                    }
                    accumulate(&mut adj, *bias, &db, c);
                }
                Op::Matmul { a, b } => {
                    let (m, k) = self.shape(*a);
                    let (_, nn) = self.shape(*b);
                    let mut da = vec![0.0; m * k];
                    mm_nt_acc(&up, &self.nodes[b.0].value, &mut da, m, nn, k);
                    accumulate(&mut adj, *a, &da, m * k);
                    let mut db = vec![0.0; k * nn];
                    mm_tn_acc(&self.nodes[a.0].value, &up, &mut db, m, k, nn);
                    accumulate(&mut adj, *b, &db, k * nn);
                }
                Op::MatmulNT { a, b } => {
                    // out = A·Bᵀ with A: m×k, B: n×k, out: m×n.
                    let (m, k) = self.shape(*a);
                    let (nn, _) = self.shape(*b);
                    let mut da = vec![0.0; m * k];
                    mm_nn_acc(&up, &self.nodes[b.0].value, &mut da, m, nn, k);
                    accumulate(&mut adj, *a, &da, m * k);
                    let mut db = vec![0.0; nn * k];
                    mm_tn_acc(&up, &self.nodes[a.0].value, &mut db, m, nn, k);
                    accumulate(&mut adj, *b, &db, nn * k);
                }
                Op::Gelu { a } => {
                    let av = &self.nodes[a.0].value;
                    let da: Vec<f64> = av
                        .iter()
                        .zip(&up)
                        .map(|(&x, u)| u * gelu_grad(x))
                        .collect();
                    accumulate(&mut adj, *a, &da, self.size(*a));
                }
                Op::Tanh { a } => {
                    let da: Vec<f64> = node
                        .value
                        .iter()
                        .zip(&up)
                        .map(|(&y, u)| u * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, *a, &da, self.size(*a));
                }
                Op::LayerNorm { a, gamma, beta } => {
                    let (r, c) = (node.rows, node.cols);
                    let av = &self.nodes[a.0].value;
                    let gv = &self.nodes[gamma.0].value;
                    let mut da = vec![0.0; r * c];
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        let row = &av[i * c..(i + 1) * c];
                        let urow = &up[i * c..(i + 1) * c];
                        let (mu, inv_std) = row_moments(row);
                        // x̂, dx̂ and the two row means the VJP needs.
                        let xhat: Vec<f64> =
                            row.iter().map(|x| (x - mu) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            urow.iter().zip(gv).map(|(u, g)| u * g).collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dxhat_xhat: f64 = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(d, x)| d * x)
                            .sum::<f64>()
                            / c as f64;
                        for j in 0..c {
                            da[i * c + j] = inv_std
                                * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            dg[j] += urow[j] * xhat[j];
                            db[j] += urow[j];
                        }
                    }
                    accumulate(&mut adj, *a, &da, r * c);
                    accumulate(&mut adj, *gamma, &dg, c);
                    accumulate(&mut adj, *beta, &db, c);
                }
                Op::SoftmaxRows { a } => {
                    let (r, c) = (node.rows, node.cols);
                    let y = &node.value;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yrow = &y[i * c..(i + 1) * c];
                        let urow = &up[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(urow).map(|(yv, uv)| yv * uv).sum();
                        for j in 0..c {
                            da[i * c + j] = yrow[j] * (urow[j] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, &da, r * c);
                }
                Op::GatherRows { a, rows } => {
                    let (ra, c) = self.shape(*a);
                    let mut da = vec![0.0; ra * c];
                    for (local, &src) in rows.iter().enumerate() {
                        for j in 0..c {
                            da[src * c + j] += up[local * c + j];
                        }
                    }
                    accumulate(&mut adj, *a, &da, ra * c);
                }
                Op::AssembleRows { sources, .. } => {
                    let c = node.cols;
                    for (src, dests) in sources {
                        let (sr, _) = self.shape(*src);
                        let mut ds = vec![0.0; sr * c];
                        for (local, &dest) in dests.iter().enumerate() {
                            ds[local * c..(local + 1) * c]
                                .copy_from_slice(&up[dest * c..(dest + 1) * c]);
                        }
                        accumulate(&mut adj, *src, &ds, sr * c);
                    }
                }
                Op::MaxPoolGroups { a, group, mask } => {
                    let (r, c) = self.shape(*a);
                    let av = &self.nodes[a.0].value;
                    let groups = r / group;
                    let mut da = vec![0.0; r * c];
                    for g in 0..groups {
                        for j in 0..c {
                            // First unmasked row attaining the max wins.
                            let mut best_row = usize::MAX;
                            let mut best = f64::NEG_INFINITY;
                            for t in 0..*group {
                                let row = g * group + t;
                                if mask[row] <= 0.0 {
                                    continue;
                                }
                                let v = av[row * c + j];
                                if v > best {
                                    best = v;
                                    best_row = row;
                                }
                            }
                            da[best_row * c + j] += up[g * c + j];
                        }
                    }
                    accumulate(&mut adj, *a, &da, r * c);
                }
                Op::WriteToken {
                    base,
                    token,
                    rows,
                    col,
                } => {
                    let c = node.cols;
                    let width = self.shape(*token).1;
                    let mut dbase = up.clone();
                    let mut dtok = vec![0.0; width];
                    for &i in rows {
                        for w in 0..width {
                            dtok[w] += up[i * c + col + w];
                            dbase[i * c + col + w] = 0.0;
                        }
                    }
                    accumulate(&mut adj, *base, &dbase, self.size(*base));
                    accumulate(&mut adj, *token, &dtok, width);
                }
                Op::CrossEntropyMean { logits, labels } => {
                    let (r, c) = self.shape(*logits);
                    let lv = &self.nodes[logits.0].value;
                    let scale = up[0] / r as f64;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let row = &lv[i * c..(i + 1) * c];
                        let m = row.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
                        let sum: f64 = row.iter().map(|x| (x - m).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - m).exp() / sum;
                            let indicator = if j == labels[i] { 1.0 } else { 0.0 };
                            da[i * c + j] = scale * (p - indicator);
                        }
                    }
                    accumulate(&mut adj, *logits, &da, r * c);
                }
                Op::ChamferRows { pred, targets } => {
                    let (r, c) = self.shape(*pred);
                    let pv = &self.nodes[pred.0].value;
                    let n = c / 3;
                    let scale = up[0] / r as f64;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let row = &pv[i * c..(i + 1) * c];
                        let (_, fwd_idx, bwd_idx) = chamfer_row(row, n, &targets[i]);
                        let t = targets[i].len() as f64;
                        let drow = &mut da[i * c..(i + 1) * c];
                        // Pred→target term: each predicted point pulls
                        // toward its nearest target.
                        for (pi, &ti) in fwd_idx.iter().enumerate() {
                            let tp = targets[i][ti];
                            for ax in 0..3 {
                                drow[pi * 3 + ax] +=
                                    scale * 2.0 / n as f64 * (row[pi * 3 + ax] - tp[ax]);
                            }
                        }
                        // Target→pred term: each target pulls its nearest
                        // predicted point.
                        for (tj, &pi) in bwd_idx.iter().enumerate() {
                            let tp = targets[i][tj];
                            for ax in 0..3 {
                                drow[pi * 3 + ax] +=
                                    scale * 2.0 / t * (row[pi * 3 + ax] - tp[ax]);
                            }
                        }
                    }
                    accumulate(&mut adj, *pred, &da, r * c);
                }
            }
        }

        grads
            .into_iter()
            .enumerate()
            .map(|(p, g)| {
                g.unwrap_or_else(|| {
                    let (r, c) = param_shapes[p].unwrap_or((0, 0));
                    Tensor::zeros(r, c)
                })
            })
            .collect()
    }

    fn size(&self, id: NodeId) -> usize {
        let n = &self.nodes[id.0];
        n.rows * n.cols
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64], size: usize) {
    debug_assert_eq!(delta.len(), size);
    match &mut adj[id.0] {
        Some(buf) => {
            for (b, d) in buf.iter_mut().zip(delta) {
                *b += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c;
    (mu, 1.0 / (var + LN_EPS).sqrt())
}

/// Smooth GELU (tanh form), differentiable everywhere.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One row's set loss plus the argmin indices both directions (first
/// minimum wins ties). `row` holds `n` x,y,z triples.
fn chamfer_row(row: &[f64], n: usize, target: &[[f64; 3]]) -> (f64, Vec<usize>, Vec<usize>) {
    let sq = |pi: usize, t: &[f64; 3]| -> f64 {
        let dx = row[pi * 3] - t[0];
        let dy = row[pi * 3 + 1] - t[1];
        let dz = row[pi * 3 + 2] - t[2];
        dx * dx + dy * dy + dz * dz
    };
    let mut fwd = 0.0;
    let mut fwd_idx = Vec::with_capacity(n);
    for pi in 0..n {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, t) in target.iter().enumerate() {
            let d = sq(pi, t);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        fwd += best;
        fwd_idx.push(best_j);
    }
    let mut bwd = 0.0;
    let mut bwd_idx = Vec::with_capacity(target.len());
    for t in target {
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        for pi in 0..n {
            let d = sq(pi, t);
            if d < best {
                best = d;
                best_i = pi;
            }
        }
        bwd += best;
        bwd_idx.push(best_i);
    }
    let value = fwd / n as f64 + bwd / target.len() as f64;
    (value, fwd_idx, bwd_idx)
}
