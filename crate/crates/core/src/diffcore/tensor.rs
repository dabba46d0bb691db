use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::tape::NodeRef;

/// Shared gradient accumulator. `None` until a backward pass reaches the
/// tensor; afterwards it holds dLoss/dTensor in row-major order.
pub(crate) type GradSlot = Rc<RefCell<Option<Vec<f64>>>>;

/// Dense 2-D tensor of 64-bit reals, row-major.
///
/// A tensor may be attached to a [`super::Tape`]; operations on attached
/// tensors are recorded so that `Tape::backward` can fill gradient slots.
/// Clones alias the same gradient slot and attachment state; use
/// [`Tensor::detach`] for an independent constant view of the same data.
#[derive(Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) grad: GradSlot,
    pub(crate) node: Rc<RefCell<Option<NodeRef>>>,
}

impl Tensor {
    /// Build a tensor from row-major data. Rejects empty shapes, length
    /// mismatches, and non-finite entries.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDims {
                reason: format!("shape {rows}x{cols} has a zero dimension"),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidDims {
                reason: format!(
                    "shape {rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_rows" });
        }
        Ok(Self::raw(rows, cols, data))
    }

    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor {
            rows,
            cols,
            data: Rc::new(data),
            grad: Rc::new(RefCell::new(None)),
            node: Rc::new(RefCell::new(None)),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor::raw(rows, cols, vec![1.0; rows * cols])
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::raw(rows, cols, vec![value; rows * cols])
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::raw(n, n, data)
    }

    /// Single-row tensor, convenient in tests.
    pub fn row(values: &[f64]) -> Result<Self> {
        Tensor::from_rows(1, values.len(), values.to_vec())
    }

    /// 1x1 scalar tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor::raw(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index out of bounds");
        self.data[row * self.cols + col]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (1, 1),
            "item() requires a 1x1 tensor, got {}x{}",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    /// Mutable view of the data, copy-on-write against any tape snapshots.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Rc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Replace the data in place, keeping the gradient slot and shape.
    pub fn set_data(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::InvalidDims {
                reason: format!(
                    "set_data with {} values on a {}x{} tensor",
                    values.len(),
                    self.rows,
                    self.cols
                ),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "set_data" });
        }
        Rc::make_mut(&mut self.data).copy_from_slice(values);
        Ok(())
    }

    /// Constant copy: same values, no tape attachment, fresh gradient slot.
    pub fn detach(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: Rc::clone(&self.data),
            grad: Rc::new(RefCell::new(None)),
            node: Rc::new(RefCell::new(None)),
        }
    }

    pub fn is_attached(&self) -> bool {
        self.node.borrow().is_some()
    }

    /// Accumulated gradient, if a backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad.borrow().clone()
    }

    /// Gradient as a detached tensor of the same shape.
    pub fn grad_tensor(&self) -> Option<Tensor> {
        self.grad()
            .map(|g| Tensor::raw(self.rows, self.cols, g))
    }

    /// Clear the accumulated gradient. Subsequent backward passes start
    /// from zero again.
    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    pub(crate) fn node_ref(&self) -> Option<NodeRef> {
        self.node.borrow().clone()
    }

    pub(crate) fn set_node(&self, node: Option<NodeRef>) {
        *self.node.borrow_mut() = node;
    }

    /// Detach from any tape, returning the previous attachment so it can be
    /// restored later. Used by loss terms that need a sub-pass where this
    /// tensor acts as a constant.
    pub(crate) fn take_node(&self) -> Option<NodeRef> {
        self.node.borrow_mut().take()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.data)
            .field("attached", &self.is_attached())
            .finish()
    }
}
