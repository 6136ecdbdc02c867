//! Recording tape for reverse-mode differentiation.
//!
//! Every operation appends one step with its cached inputs/outputs; the
//! backward pass replays the steps in exact reverse order, accumulating
//! gradients per node. Leaves are parameter tensors or constants; querying
//! a leaf's gradient after `backward` gives dLoss/dLeaf.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

enum Step {
    Affine {
        w: NodeId,
        b: NodeId,
        x: NodeId,
        out: NodeId,
    },
    Conv {
        x: NodeId,
        filters: NodeId,
        bias: NodeId,
        width: usize,
        out: NodeId,
    },
    Relu {
        x: NodeId,
        out: NodeId,
    },
    MaxOverTime {
        x: NodeId,
        argmax: Vec<usize>,
        out: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
        out: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
        out: NodeId,
    },
    Softmax {
        out: NodeId,
        x: NodeId,
    },
    MatVec {
        m: NodeId,
        x: NodeId,
        out: NodeId,
    },
    GatherColumns {
        table: NodeId,
        indices: Vec<usize>,
        out: NodeId,
    },
    CrossEntropy {
        p: NodeId,
        label: usize,
        out: NodeId,
    },
    MeanScalars {
        parts: Vec<NodeId>,
        out: NodeId,
    },
    AddScalars {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    FrobPenalty {
        m: NodeId,
        lambda: f64,
        out: NodeId,
    },
}

#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    steps: Vec<Step>,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, n: NodeId) -> Option<&[f64]> {
        self.grads[n.0].as_deref()
    }

    /// Gradient of a leaf as a matrix of the given shape; zero if the leaf
    /// never influenced the loss.
    pub fn matrix(&self, n: NodeId, rows: usize, cols: usize) -> Matrix {
        match &self.grads[n.0] {
            Some(g) => Matrix::from_vec(rows, cols, g.clone()).expect("leaf shape"),
            None => Matrix::zeros(rows, cols),
        }
    }

    pub fn vector(&self, n: NodeId, len: usize) -> Vec<f64> {
        match &self.grads[n.0] {
            Some(g) => g.clone(),
            None => vec![0.0; len],
        }
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn push_node(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { data, rows, cols });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, n: NodeId) -> &[f64] {
        &self.nodes[n.0].data
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[n.0].data.len(), 1);
        self.nodes[n.0].data[0]
    }

    pub fn shape(&self, n: NodeId) -> (usize, usize) {
        (self.nodes[n.0].rows, self.nodes[n.0].cols)
    }

    pub fn leaf_matrix(&mut self, m: &Matrix) -> NodeId {
        self.push_node(m.as_slice().to_vec(), m.rows(), m.cols())
    }

    pub fn leaf_vector(&mut self, v: &[f64]) -> NodeId {
        self.push_node(v.to_vec(), v.len(), 1)
    }

    fn node_matrix(&self, n: NodeId) -> Matrix {
        let nd = &self.nodes[n.0];
        Matrix::from_vec(nd.rows, nd.cols, nd.data.clone()).expect("node shape")
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let wm = self.node_matrix(w);
        let y = ops::affine_forward(&wm, self.value(b), self.value(x))?;
        let rows = y.len();
        let out = self.push_node(y, rows, 1);
        self.steps.push(Step::Affine { w, b, x, out });
        Ok(out)
    }

    pub fn conv(&mut self, x: NodeId, filters: NodeId, bias: NodeId, width: usize) -> Result<NodeId> {
        let xm = self.node_matrix(x);
        let fm = self.node_matrix(filters);
        let y = ops::conv_forward(&xm, &fm, self.value(bias), width)?;
        let (r, c) = (y.rows(), y.cols());
        let out = self.push_node(y.as_slice().to_vec(), r, c);
        self.steps.push(Step::Conv {
            x,
            filters,
            bias,
            width,
            out,
        });
        Ok(out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let y = ops::relu_forward(self.value(x))?;
        let (r, c) = self.shape(x);
        let out = self.push_node(y, r, c);
        self.steps.push(Step::Relu { x, out });
        Ok(out)
    }

    pub fn max_over_time(&mut self, x: NodeId) -> Result<NodeId> {
        let xm = self.node_matrix(x);
        let (m, argmax) = ops::max_over_time(&xm)?;
        let rows = m.len();
        let out = self.push_node(m, rows, 1);
        self.steps.push(Step::MaxOverTime { x, argmax, out });
        Ok(out)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p));
        }
        let rows = data.len();
        let out = self.push_node(data, rows, 1);
        self.steps.push(Step::Concat {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Training-mode dropout records a mask step; evaluation mode is the
    /// identity and records nothing (the input node is returned as-is).
    pub fn dropout(&mut self, x: NodeId, keep: f64, train_mode: bool, rng: &mut Rng) -> Result<NodeId> {
        let (y, mask) = ops::dropout_forward(self.value(x), keep, train_mode, rng)?;
        match mask {
            None => Ok(x),
            Some(mask) => {
                let (r, c) = self.shape(x);
                let out = self.push_node(y, r, c);
                self.steps.push(Step::Dropout { x, mask, out });
                Ok(out)
            }
        }
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = ops::softmax(self.value(x))?;
        let rows = s.len();
        let out = self.push_node(s, rows, 1);
        self.steps.push(Step::Softmax { out, x });
        Ok(out)
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        let mm = self.node_matrix(m);
        let y = mm.matvec(self.value(x))?;
        let rows = y.len();
        let out = self.push_node(y, rows, 1);
        self.steps.push(Step::MatVec { m, x, out });
        Ok(out)
    }

    /// Builds a d×T matrix whose column t is row `indices[t]` of the table.
    pub fn gather_columns(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (vocab, d) = self.shape(table);
        if indices.is_empty() {
            return Err(Error::EmptyInput("gather_columns".into()));
        }
        for &ix in indices {
            if ix >= vocab {
                return Err(Error::InvalidArg(format!(
                    "token index {} outside table of {} rows",
                    ix, vocab
                )));
            }
        }
        let t_len = indices.len();
        let mut data = vec![0.0; d * t_len];
        {
            let tab = self.value(table);
            for (t, &ix) in indices.iter().enumerate() {
                for i in 0..d {
                    data[i * t_len + t] = tab[ix * d + i];
                }
            }
        }
        let out = self.push_node(data, d, t_len);
        self.steps.push(Step::GatherColumns {
            table,
            indices: indices.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn cross_entropy(&mut self, p: NodeId, label: usize) -> Result<NodeId> {
        let l = ops::cross_entropy(self.value(p), label)?;
        let out = self.push_node(vec![l], 1, 1);
        self.steps.push(Step::CrossEntropy { p, label, out });
        Ok(out)
    }

    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("mean_scalars".into()));
        }
        let sum: f64 = parts.iter().map(|p| self.scalar(*p)).sum();
        let out = self.push_node(vec![sum / parts.len() as f64], 1, 1);
        self.steps.push(Step::MeanScalars {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn add_scalars(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.scalar(a) + self.scalar(b);
        let out = self.push_node(vec![v], 1, 1);
        self.steps.push(Step::AddScalars { a, b, out });
        out
    }

    /// (λ/2)·‖M‖_F² as a scalar node; backward contributes λ·M.
    pub fn frob_penalty(&mut self, m: NodeId, lambda: f64) -> NodeId {
        let sq: f64 = self.value(m).iter().map(|v| v * v).sum();
        let out = self.push_node(vec![0.5 * lambda * sq], 1, 1);
        self.steps.push(Step::FrobPenalty { m, lambda, out });
        out
    }

    /// Reverse replay from a scalar node. Steps whose output never reached
    /// the loss are skipped.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::InvalidArg(
                "backward seed must be a scalar node".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for step in self.steps.iter().rev() {
            match step {
                Step::Affine { w, b, x, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let wm = self.node_matrix(*w);
                    let (dw, db, dx) = ops::affine_backward(&wm, self.value(*x), &g);
                    accumulate(&mut grads, *w, dw.as_slice());
                    accumulate(&mut grads, *b, &db);
                    accumulate(&mut grads, *x, &dx);
                }
                Step::Conv {
                    x,
                    filters,
                    bias,
                    width,
                    out,
                } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let (r, c) = self.shape(*out);
                    let gm = Matrix::from_vec(r, c, g).expect("grad shape");
                    let xm = self.node_matrix(*x);
                    let fm = self.node_matrix(*filters);
                    let (df, db, dx) = ops::conv_backward(&xm, &fm, *width, &gm);
                    accumulate(&mut grads, *filters, df.as_slice());
                    accumulate(&mut grads, *bias, &db);
                    accumulate(&mut grads, *x, dx.as_slice());
                }
                Step::Relu { x, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let dx = ops::relu_backward(self.value(*x), &g);
                    accumulate(&mut grads, *x, &dx);
                }
                Step::MaxOverTime { x, argmax, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let (r, c) = self.shape(*x);
                    let dx = ops::max_over_time_backward(r, c, argmax, &g);
                    accumulate(&mut grads, *x, dx.as_slice());
                }
                Step::Concat { parts, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].data.len();
                        accumulate(&mut grads, *p, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Step::Dropout { x, mask, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let dx = ops::dropout_backward(mask, &g);
                    accumulate(&mut grads, *x, &dx);
                }
                Step::Softmax { out, x } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let dx = ops::softmax_backward(self.value(*out), &g);
                    accumulate(&mut grads, *x, &dx);
                }
                Step::MatVec { m, x, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let mm = self.node_matrix(*m);
                    // dM = g xᵀ, dx = Mᵀ g.
                    let xv = self.value(*x);
                    let mut dm = vec![0.0; mm.rows() * mm.cols()];
                    for i in 0..mm.rows() {
                        for j in 0..mm.cols() {
                            dm[i * mm.cols() + j] = g[i] * xv[j];
                        }
                    }
                    let dx = mm.matvec_transposed(&g).expect("shape checked");
                    accumulate(&mut grads, *m, &dm);
                    accumulate(&mut grads, *x, &dx);
                }
                Step::GatherColumns { table, indices, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let (_, d) = self.shape(*table);
                    let t_len = indices.len();
                    let tab_len = self.nodes[table.0].data.len();
                    let entry = grads[table.0].get_or_insert_with(|| vec![0.0; tab_len]);
                    for (t, &ix) in indices.iter().enumerate() {
                        for i in 0..d {
                            entry[ix * d + i] += g[i * t_len + t];
                        }
                    }
                }
                Step::CrossEntropy { p, label, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let dp = ops::cross_entropy_backward(self.value(*p), *label, g[0]);
                    accumulate(&mut grads, *p, &dp);
                }
                Step::MeanScalars { parts, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let share = g[0] / parts.len() as f64;
                    for p in parts {
                        accumulate(&mut grads, *p, &[share]);
                    }
                }
                Step::AddScalars { a, b, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Step::FrobPenalty { m, lambda, out } => {
                    let Some(g) = grads[out.0].clone() else { continue };
                    let dm: Vec<f64> = self.value(*m).iter().map(|v| lambda * v * g[0]).collect();
                    accumulate(&mut grads, *m, &dm);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], node: NodeId, delta: &[f64]) {
    let entry = grads[node.0].get_or_insert_with(|| vec![0.0; delta.len()]);
    debug_assert_eq!(entry.len(), delta.len());
    for (e, d) in entry.iter_mut().zip(delta.iter()) {
        *e += d;
    }
}
