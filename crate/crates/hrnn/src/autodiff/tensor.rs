//! Dense tensors. Values are immutable and reference-counted so that tape
//! nodes can keep what they need for backward without copying.

use std::rc::Rc;

use crate::real::Real;

/// Index of a node on the active tape.
pub type NodeId = usize;

/// A dense value, optionally attached to a tape node. Tensors with
/// `node == None` are constants: ops consume them but no gradient flows back.
#[derive(Clone)]
pub struct Tensor<F: Real> {
    shape: Vec<usize>,
    values: Rc<Vec<F>>,
    node: Option<NodeId>,
}

impl<F: Real> Tensor<F> {
    /// Constant tensor (not recorded on any tape).
    pub fn new(shape: Vec<usize>, values: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {:?} does not match {} values",
            shape,
            values.len()
        );
        Tensor {
            shape,
            values: Rc::new(values),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![F::zero(); n])
    }

    pub fn scalar(v: F) -> Self {
        Tensor::new(vec![], vec![v])
    }

    pub fn vector(values: Vec<F>) -> Self {
        Tensor::new(vec![values.len()], values)
    }

    /// Row-major (rows, cols) matrix.
    pub fn matrix(rows: usize, cols: usize, values: Vec<F>) -> Self {
        Tensor::new(vec![rows, cols], values)
    }

    pub(crate) fn with_node(shape: Vec<usize>, values: Rc<Vec<F>>, node: NodeId) -> Self {
        Tensor {
            shape,
            values,
            node: Some(node),
        }
    }

    pub(crate) fn detached(shape: Vec<usize>, values: Rc<Vec<F>>) -> Self {
        Tensor {
            shape,
            values,
            node: None,
        }
    }

    pub(crate) fn share_values(&self) -> Rc<Vec<F>> {
        Rc::clone(&self.values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// True when both tensors share one value buffer (carried, not copied).
    pub fn same_buffer(a: &Tensor<F>, b: &Tensor<F>) -> bool {
        Rc::ptr_eq(&a.values, &b.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.is_empty()
    }

    /// Extract the value of a scalar tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.values.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.values[0]
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.values.as_ref().clone()
    }

    /// Rows of a 2-D tensor; a 1-D tensor is treated as a column (len, 1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[0],
            _ => panic!("rows() on shape {:?}", self.shape),
        }
    }

    /// Columns of a 2-D tensor; a 1-D tensor is treated as a column (len, 1).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[1],
            _ => panic!("cols() on shape {:?}", self.shape),
        }
    }
}

impl<F: Real> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .field("values", &self.values)
            .finish()
    }
}
