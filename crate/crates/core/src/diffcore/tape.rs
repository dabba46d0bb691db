use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::tensor::{GradSlot, Tensor};

pub(crate) type NodeId = usize;
pub(crate) type Data = Rc<Vec<f64>>;

/// Handle from an attached tensor back to its tape node.
#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: NodeId,
}

/// One operand of an elementwise binary op. `rows == 1` with a taller
/// output means the operand was broadcast across rows.
pub(crate) struct Operand {
    pub node: Option<NodeId>,
    pub rows: usize,
    pub cols: usize,
}

/// Backward rule for a recorded operation, with the forward-time data
/// snapshots the vector-Jacobian product needs.
pub(crate) enum Rule {
    Leaf,
    Add {
        a: Operand,
        b: Operand,
    },
    Sub {
        a: Operand,
        b: Operand,
    },
    Mul {
        a: Operand,
        b: Operand,
        a_data: Data,
        b_data: Data,
    },
    Matmul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_data: Data,
        b_data: Data,
        m: usize,
        k: usize,
        n: usize,
    },
    Exp {
        x: Option<NodeId>,
        out_data: Data,
    },
    Softplus {
        x: Option<NodeId>,
        x_data: Data,
    },
    Scale {
        x: Option<NodeId>,
        factor: f64,
    },
    Power {
        x: Option<NodeId>,
        x_data: Data,
        exponent: f64,
    },
    Negate {
        x: Option<NodeId>,
    },
    Relu {
        x: Option<NodeId>,
        x_data: Data,
    },
    Sum {
        x: Option<NodeId>,
        len: usize,
    },
    Mean {
        x: Option<NodeId>,
        len: usize,
    },
    SumRows {
        x: Option<NodeId>,
        rows: usize,
        cols: usize,
    },
    SliceRows {
        x: Option<NodeId>,
        start: usize,
        x_rows: usize,
        cols: usize,
    },
    PairwisePNorm {
        x: Option<NodeId>,
        c: Option<NodeId>,
        x_data: Data,
        c_data: Data,
        p: u32,
        out_data: Data,
        rows: usize,
        units: usize,
        dim: usize,
    },
    SoftmaxXent {
        logits: Option<NodeId>,
        probs: Data,
        labels: Rc<Vec<usize>>,
        rows: usize,
        cols: usize,
    },
}

struct Node {
    rule: Rule,
    len: usize,
    slot: GradSlot,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Dynamic Wengert tape, rebuilt per forward pass. Records operations on
/// attached tensors and replays them in reverse to accumulate gradients
/// into each tensor's grad slot.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register a tensor as a differentiable leaf of this tape.
    pub fn watch(&self, t: &Tensor) {
        let id = self.record(Rule::Leaf, t.numel(), Rc::clone(&t.grad));
        t.set_node(Some(NodeRef {
            tape: self.clone(),
            id,
        }));
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub(crate) fn record(&self, rule: Rule, len: usize, slot: GradSlot) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { rule, len, slot });
        id
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse sweep from a scalar loss. Visits each node at most once, in
    /// reverse topological order, and adds this sweep's adjoints into the
    /// persistent grad slots (repeat calls accumulate). Watched leaves the
    /// loss does not depend on receive explicit zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        let node_ref = loss.node_ref().ok_or(Error::DetachedLoss)?;
        if !self.same_tape(&node_ref.tape) {
            return Err(Error::TapeMismatch { op: "backward" });
        }
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: loss.rows(),
                cols: loss.cols(),
            });
        }

        let inner = self.inner.borrow();
        let n = inner.nodes.len();
        let mut adjoints: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adjoints[node_ref.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(up) = adjoints[id].take() else {
                continue;
            };
            propagate(&inner.nodes[id].rule, &up, &mut adjoints);
            accumulate_slot(&inner.nodes[id].slot, up);
        }

        // Watched leaves outside the loss's dependency cone still get a
        // well-defined (zero) gradient.
        for node in &inner.nodes {
            if let Rule::Leaf = node.rule {
                let mut slot = node.slot.borrow_mut();
                if slot.is_none() {
                    *slot = Some(vec![0.0; node.len]);
                }
            }
        }
        Ok(())
    }
}

fn accumulate_slot(slot: &GradSlot, adjoint: Vec<f64>) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(existing) => {
            for (e, a) in existing.iter_mut().zip(adjoint.iter()) {
                *e += a;
            }
        }
        None => *slot = Some(adjoint),
    }
}

fn add_into(adjoints: &mut [Option<Vec<f64>>], target: Option<NodeId>, contribution: Vec<f64>) {
    let Some(id) = target else { return };
    match adjoints[id].as_mut() {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution.iter()) {
                *e += c;
            }
        }
        None => adjoints[id] = Some(contribution),
    }
}

/// Reduce an output-shaped adjoint to an operand's shape: identity when the
/// shapes match, column sums when the operand was a broadcast 1xC row.
fn reduce_to(up: &[f64], out_rows: usize, cols: usize, operand_rows: usize) -> Vec<f64> {
    if operand_rows == out_rows {
        return up.to_vec();
    }
    debug_assert_eq!(operand_rows, 1);
    let mut reduced = vec![0.0; cols];
    for r in 0..out_rows {
        for c in 0..cols {
            reduced[c] += up[r * cols + c];
        }
    }
    reduced
}

/// Value of an operand at (r, c) honoring row broadcast.
fn bval(data: &[f64], rows: usize, cols: usize, r: usize, c: usize) -> f64 {
    if rows == 1 {
        data[c]
    } else {
        data[r * cols + c]
    }
}

fn propagate(rule: &Rule, up: &[f64], adjoints: &mut [Option<Vec<f64>>]) {
    match rule {
        Rule::Leaf => {}

        Rule::Add { a, b } => {
            let cols = a.cols;
            let out_rows = a.rows.max(b.rows);
            if a.node.is_some() {
                add_into(adjoints, a.node, reduce_to(up, out_rows, cols, a.rows));
            }
            if b.node.is_some() {
                add_into(adjoints, b.node, reduce_to(up, out_rows, cols, b.rows));
            }
        }

        Rule::Sub { a, b } => {
            let cols = a.cols;
            let out_rows = a.rows.max(b.rows);
            if a.node.is_some() {
                add_into(adjoints, a.node, reduce_to(up, out_rows, cols, a.rows));
            }
            if b.node.is_some() {
                let neg: Vec<f64> = up.iter().map(|v| -v).collect();
                add_into(adjoints, b.node, reduce_to(&neg, out_rows, cols, b.rows));
            }
        }

        Rule::Mul { a, b, a_data, b_data } => {
            let cols = a.cols;
            let out_rows = a.rows.max(b.rows);
            if a.node.is_some() {
                let mut full = vec![0.0; out_rows * cols];
                for r in 0..out_rows {
                    for c in 0..cols {
                        full[r * cols + c] = up[r * cols + c] * bval(b_data, b.rows, cols, r, c);
                    }
                }
                add_into(adjoints, a.node, reduce_to(&full, out_rows, cols, a.rows));
            }
            if b.node.is_some() {
                let mut full = vec![0.0; out_rows * cols];
                for r in 0..out_rows {
                    for c in 0..cols {
                        full[r * cols + c] = up[r * cols + c] * bval(a_data, a.rows, cols, r, c);
                    }
                }
                add_into(adjoints, b.node, reduce_to(&full, out_rows, cols, b.rows));
            }
        }

        Rule::Matmul {
            a,
            b,
            a_data,
            b_data,
            m,
            k,
            n,
        } => {
            let (m, k, n) = (*m, *k, *n);
            if a.is_some() {
                // dA = up . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += up[i * n + j] * b_data[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                add_into(adjoints, *a, da);
            }
            if b.is_some() {
                // dB = A^T . up
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a_data[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * up[i * n + j];
                        }
                    }
                }
                add_into(adjoints, *b, db);
            }
        }

        Rule::Exp { x, out_data } => {
            if x.is_some() {
                let d: Vec<f64> = up.iter().zip(out_data.iter()).map(|(u, o)| u * o).collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Softplus { x, x_data } => {
            if x.is_some() {
                let d: Vec<f64> = up
                    .iter()
                    .zip(x_data.iter())
                    .map(|(u, &v)| u * sigmoid(v))
                    .collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Scale { x, factor } => {
            if x.is_some() {
                let d: Vec<f64> = up.iter().map(|u| u * factor).collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Power {
            x,
            x_data,
            exponent,
        } => {
            if x.is_some() {
                let p = *exponent;
                let d: Vec<f64> = up
                    .iter()
                    .zip(x_data.iter())
                    .map(|(u, &v)| u * p * powf_mixed(v, p - 1.0))
                    .collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Negate { x } => {
            if x.is_some() {
                let d: Vec<f64> = up.iter().map(|u| -u).collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Relu { x, x_data } => {
            if x.is_some() {
                let d: Vec<f64> = up
                    .iter()
                    .zip(x_data.iter())
                    .map(|(u, &v)| if v > 0.0 { *u } else { 0.0 })
                    .collect();
                add_into(adjoints, *x, d);
            }
        }

        Rule::Sum { x, len } => {
            if x.is_some() {
                add_into(adjoints, *x, vec![up[0]; *len]);
            }
        }

        Rule::Mean { x, len } => {
            if x.is_some() {
                add_into(adjoints, *x, vec![up[0] / *len as f64; *len]);
            }
        }

        Rule::SumRows { x, rows, cols } => {
            if x.is_some() {
                let mut d = vec![0.0; rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        d[r * cols + c] = up[r];
                    }
                }
                add_into(adjoints, *x, d);
            }
        }

        Rule::SliceRows {
            x,
            start,
            x_rows,
            cols,
        } => {
            if x.is_some() {
                let mut d = vec![0.0; x_rows * cols];
                let offset = start * cols;
                d[offset..offset + up.len()].copy_from_slice(up);
                add_into(adjoints, *x, d);
            }
        }

        Rule::PairwisePNorm {
            x,
            c,
            x_data,
            c_data,
            p,
            out_data,
            rows,
            units,
            dim,
        } => {
            let (rows, units, dim) = (*rows, *units, *dim);
            let pm1 = (*p - 1) as i32;
            let mut dx = if x.is_some() {
                Some(vec![0.0; rows * dim])
            } else {
                None
            };
            let mut dc = if c.is_some() {
                Some(vec![0.0; units * dim])
            } else {
                None
            };
            for r in 0..rows {
                for u in 0..units {
                    let upv = up[r * units + u];
                    if upv == 0.0 {
                        continue;
                    }
                    let d_ru = out_data[r * units + u];
                    if d_ru == 0.0 {
                        // Zero distance: subgradient 0 by convention.
                        continue;
                    }
                    let denom = d_ru.powi(pm1);
                    for j in 0..dim {
                        let delta = x_data[r * dim + j] - c_data[u * dim + j];
                        let g = upv * delta.powi(pm1) / denom;
                        if let Some(dx) = dx.as_mut() {
                            dx[r * dim + j] += g;
                        }
                        if let Some(dc) = dc.as_mut() {
                            dc[u * dim + j] -= g;
                        }
                    }
                }
            }
            if let Some(dx) = dx {
                add_into(adjoints, *x, dx);
            }
            if let Some(dc) = dc {
                add_into(adjoints, *c, dc);
            }
        }

        Rule::SoftmaxXent {
            logits,
            probs,
            labels,
            rows,
            cols,
        } => {
            if logits.is_some() {
                let scale = up[0] / *rows as f64;
                let mut d = vec![0.0; rows * cols];
                for r in 0..*rows {
                    for c in 0..*cols {
                        let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                        d[r * cols + c] = scale * (probs[r * cols + c] - onehot);
                    }
                }
                add_into(adjoints, *logits, d);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// x^p using exact integer powers when p is integral.
pub(crate) fn powf_mixed(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}
