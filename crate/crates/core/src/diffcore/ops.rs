//! Forward operations over [`Tensor`], each recording its backward rule on
//! the active tape when an input is attached.
//!
//! Elementwise binary ops accept identical shapes or a broadcast of a 1xC
//! row against an RxC matrix on either side.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::tape::{NodeId, NodeRef, Operand, Rule, Tape};
use super::tensor::Tensor;

fn node_of(t: &Tensor) -> Option<NodeId> {
    t.node_ref().map(|nr| nr.id)
}

fn operand(t: &Tensor) -> Operand {
    Operand {
        node: node_of(t),
        rows: t.rows(),
        cols: t.cols(),
    }
}

/// Find the tape to record on: the unique tape any input is attached to.
fn recording_tape(op: &'static str, inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some(nr) = t.node_ref() {
            match &found {
                None => found = Some(nr.tape),
                Some(tape) => {
                    if !tape.same_tape(&nr.tape) {
                        return Err(Error::TapeMismatch { op });
                    }
                }
            }
        }
    }
    Ok(found)
}

fn attach(out: &Tensor, tape: Option<Tape>, rule: Rule) {
    if let Some(tape) = tape {
        let id = tape.record(rule, out.numel(), Rc::clone(&out.grad));
        out.set_node(Some(NodeRef { tape, id }));
    }
}

fn ensure_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn binary_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    };
    if a.cols() != b.cols() {
        return Err(mismatch());
    }
    if a.rows() == b.rows() {
        Ok(a.shape())
    } else if a.rows() == 1 {
        Ok(b.shape())
    } else if b.rows() == 1 {
        Ok(a.shape())
    } else {
        Err(mismatch())
    }
}

fn broadcast_val(t: &Tensor, r: usize, c: usize) -> f64 {
    if t.rows() == 1 {
        t.data()[c]
    } else {
        t.data()[r * t.cols() + c]
    }
}

fn elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(usize, usize, Vec<f64>)> {
    let (rows, cols) = binary_shape(op, a, b)?;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = f(broadcast_val(a, r, c), broadcast_val(b, r, c));
        }
    }
    ensure_finite(op, &out)?;
    Ok((rows, cols, out))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (rows, cols, data) = elementwise("add", self, other, |x, y| x + y)?;
        let out = Tensor::raw(rows, cols, data);
        let tape = recording_tape("add", &[self, other])?;
        attach(
            &out,
            tape,
            Rule::Add {
                a: operand(self),
                b: operand(other),
            },
        );
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (rows, cols, data) = elementwise("sub", self, other, |x, y| x - y)?;
        let out = Tensor::raw(rows, cols, data);
        let tape = recording_tape("sub", &[self, other])?;
        attach(
            &out,
            tape,
            Rule::Sub {
                a: operand(self),
                b: operand(other),
            },
        );
        Ok(out)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        let (rows, cols, data) = elementwise("hadamard", self, other, |x, y| x * y)?;
        let out = Tensor::raw(rows, cols, data);
        let tape = recording_tape("hadamard", &[self, other])?;
        attach(
            &out,
            tape,
            Rule::Mul {
                a: operand(self),
                b: operand(other),
                a_data: Rc::clone(&self.data),
                b_data: Rc::clone(&other.data),
            },
        );
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        ensure_finite("matmul", &out)?;
        let out = Tensor::raw(m, n, out);
        let tape = recording_tape("matmul", &[self, other])?;
        attach(
            &out,
            tape,
            Rule::Matmul {
                a: node_of(self),
                b: node_of(other),
                a_data: Rc::clone(&self.data),
                b_data: Rc::clone(&other.data),
                m,
                k,
                n,
            },
        );
        Ok(out)
    }

    /// Elementwise e^x.
    pub fn exp(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.exp()).collect();
        ensure_finite("exp", &data)?;
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("exp", &[self])?;
        attach(
            &out,
            tape,
            Rule::Exp {
                x: node_of(self),
                out_data: Rc::clone(&out.data),
            },
        );
        Ok(out)
    }

    /// Numerically stable ln(1 + e^x); keeps trained widths positive.
    pub fn softplus(&self) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    v + (-v).exp().ln_1p()
                } else {
                    v.exp().ln_1p()
                }
            })
            .collect();
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("softplus", &[self]).expect("single input");
        attach(
            &out,
            tape,
            Rule::Softplus {
                x: node_of(self),
                x_data: Rc::clone(&self.data),
            },
        );
        out
    }

    /// Multiply every entry by a constant.
    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v * factor).collect();
        ensure_finite("scale", &data)?;
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("scale", &[self])?;
        attach(
            &out,
            tape,
            Rule::Scale {
                x: node_of(self),
                factor,
            },
        );
        Ok(out)
    }

    /// Elementwise x^p. Fractional exponents require non-negative entries.
    pub fn power(&self, exponent: f64) -> Result<Tensor> {
        if exponent.fract() != 0.0 {
            for (i, &v) in self.data().iter().enumerate() {
                if v < 0.0 {
                    return Err(Error::NegativeBase {
                        exponent,
                        value: v,
                        row: i / self.cols(),
                        col: i % self.cols(),
                    });
                }
            }
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&v| super::tape::powf_mixed(v, exponent))
            .collect();
        ensure_finite("power", &data)?;
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("power", &[self])?;
        attach(
            &out,
            tape,
            Rule::Power {
                x: node_of(self),
                x_data: Rc::clone(&self.data),
                exponent,
            },
        );
        Ok(out)
    }

    pub fn negate(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| -v).collect();
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("negate", &[self]).expect("single input");
        attach(&out, tape, Rule::Negate { x: node_of(self) });
        out
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::raw(self.rows(), self.cols(), data);
        let tape = recording_tape("relu", &[self]).expect("single input");
        attach(
            &out,
            tape,
            Rule::Relu {
                x: node_of(self),
                x_data: Rc::clone(&self.data),
            },
        );
        out
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let out = Tensor::raw(1, 1, vec![s]);
        let tape = recording_tape("sum", &[self]).expect("single input");
        attach(
            &out,
            tape,
            Rule::Sum {
                x: node_of(self),
                len: self.numel(),
            },
        );
        out
    }

    /// Mean of all entries, as a 1x1 tensor.
    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let out = Tensor::raw(1, 1, vec![s / self.numel() as f64]);
        let tape = recording_tape("mean", &[self]).expect("single input");
        attach(
            &out,
            tape,
            Rule::Mean {
                x: node_of(self),
                len: self.numel(),
            },
        );
        out
    }

    /// Per-row sum, shape Rx1.
    pub fn sum_rows(&self) -> Tensor {
        let (rows, cols) = self.shape();
        let data: Vec<f64> = (0..rows)
            .map(|r| self.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let out = Tensor::raw(rows, 1, data);
        let tape = recording_tape("sum_rows", &[self]).expect("single input");
        attach(
            &out,
            tape,
            Rule::SumRows {
                x: node_of(self),
                rows,
                cols,
            },
        );
        out
    }

    /// Rows start..end as a new (end-start)xC tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if start >= end || end > self.rows() {
            return Err(Error::BadSlice {
                start,
                end,
                rows: self.rows(),
            });
        }
        let cols = self.cols();
        let data = self.data()[start * cols..end * cols].to_vec();
        let out = Tensor::raw(end - start, cols, data);
        let tape = recording_tape("slice_rows", &[self])?;
        attach(
            &out,
            tape,
            Rule::SliceRows {
                x: node_of(self),
                start,
                x_rows: self.rows(),
                cols,
            },
        );
        Ok(out)
    }

    /// Per-row p-norm (sum |x_j|^p)^(1/p), shape Rx1. Gradient at a zero
    /// row is the zero vector by convention.
    pub fn p_norm_rows(&self, p: u32) -> Result<Tensor> {
        let zero = Tensor::zeros(1, self.cols());
        pairwise_pnorm(self, &zero, p)
    }
}

/// Distance matrix D[r,u] = ||x_r - c_u||_p between every row of `x`
/// (RxD) and every row of `c` (UxD); output RxU. Only even p (2 or 4) is
/// supported. Differentiable in both arguments away from zero distances.
pub fn pairwise_pnorm(x: &Tensor, c: &Tensor, p: u32) -> Result<Tensor> {
    if p != 2 && p != 4 {
        return Err(Error::UnsupportedNormOrder { p });
    }
    if x.cols() != c.cols() {
        return Err(Error::ShapeMismatch {
            op: "pairwise_pnorm",
            lhs: x.shape(),
            rhs: c.shape(),
        });
    }
    let (rows, dim) = x.shape();
    let units = c.rows();
    let xd = x.data();
    let cd = c.data();
    let mut out = vec![0.0; rows * units];
    for r in 0..rows {
        let xrow = &xd[r * dim..(r + 1) * dim];
        for u in 0..units {
            let crow = &cd[u * dim..(u + 1) * dim];
            let mut acc = 0.0;
            for j in 0..dim {
                let delta = xrow[j] - crow[j];
                acc += delta.powi(p as i32);
            }
            // Even p keeps acc >= 0; nested sqrt stays exactly rounded.
            out[r * units + u] = match p {
                2 => acc.sqrt(),
                _ => acc.sqrt().sqrt(),
            };
        }
    }
    ensure_finite("pairwise_pnorm", &out)?;
    let out = Tensor::raw(rows, units, out);
    let tape = recording_tape("pairwise_pnorm", &[x, c])?;
    attach(
        &out,
        tape,
        Rule::PairwisePNorm {
            x: node_of(x),
            c: node_of(c),
            x_data: Rc::clone(&x.data),
            c_data: Rc::clone(&c.data),
            p,
            out_data: Rc::clone(&out.data),
            rows,
            units,
            dim,
        },
    );
    Ok(out)
}

/// Mean over the batch of -log softmax(logits)[label], with max-subtraction
/// stabilization. Gradient w.r.t. logits is (softmax - onehot) / batch.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (rows, cols) = logits.shape();
    if labels.len() != rows {
        return Err(Error::InvalidDims {
            reason: format!("{} labels for {} logit rows", labels.len(), rows),
        });
    }
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(Error::LabelOutOfRange {
                row: r,
                label,
                num_classes: cols,
            });
        }
    }
    let z = logits.data();
    let mut probs = vec![0.0; rows * cols];
    let mut total = 0.0;
    for r in 0..rows {
        let row = &z[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for c in 0..cols {
            let e = (row[c] - max).exp();
            probs[r * cols + c] = e;
            sum_exp += e;
        }
        for c in 0..cols {
            probs[r * cols + c] /= sum_exp;
        }
        total += sum_exp.ln() - (row[labels[r]] - max);
    }
    let loss = total / rows as f64;
    ensure_finite("softmax_cross_entropy", std::slice::from_ref(&loss))?;
    let out = Tensor::raw(1, 1, vec![loss]);
    let tape = recording_tape("softmax_cross_entropy", &[logits])?;
    attach(
        &out,
        tape,
        Rule::SoftmaxXent {
            logits: node_of(logits),
            probs: Rc::new(probs),
            labels: Rc::new(labels.to_vec()),
            rows,
            cols,
        },
    );
    Ok(out)
}

/// Per-column mean, shape 1xC, differentiable through a constant row of
/// 1/R weights.
pub fn mean_cols(x: &Tensor) -> Result<Tensor> {
    let weights = Tensor::full(1, x.rows(), 1.0 / x.rows() as f64);
    weights.matmul(x)
}
