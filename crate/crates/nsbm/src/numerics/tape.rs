use std::cell::RefCell;

use crate::numerics::{Tensor, LN_GUARD};
use crate::{Error, Result};

/// Rows with an L2 norm at or below this are treated as zero vectors by the
/// cosine operations (value 0, no gradient).
const ZERO_NORM: f64 = 1e-300;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    AddScalar(ValueId),
    Scale(ValueId, f64),
    MatMul(ValueId, ValueId),
    Transpose(ValueId),
    Reshape(ValueId),
    Ln(ValueId),
    Exp(ValueId),
    Tanh(ValueId),
    Sigmoid(ValueId),
    SoftmaxRows(ValueId),
    SumAll(ValueId),
    MeanAll(ValueId),
    SumAxis(ValueId, usize),
    L2Norm(ValueId),
    CosineRows(ValueId, ValueId),
    CosinePairwise(ValueId, ValueId),
    ClipBelow(ValueId, f64),
    NormalizeRows(ValueId),
    GatherRows(ValueId, Vec<usize>),
    GatherEntries(ValueId, Vec<usize>, Vec<usize>),
    ScaleRows(ValueId, ValueId),
    AddBiasRows(ValueId, ValueId),
    ConcatCols(ValueId, ValueId),
    SliceCols(ValueId, usize, usize),
    StackRows(Vec<ValueId>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`ValueId`].
#[derive(Debug)]
pub struct TapeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl TapeGrads {
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Eagerly-evaluated operation recorder with reverse-mode differentiation.
///
/// Each method computes its result immediately and records the operation so
/// that [`Tape::backward`] can later accumulate gradients for every value that
/// (transitively) depends on a trainable leaf. Shapes are rank 0..=2; the only
/// broadcasts supported are scalar operands of `add`/`sub`/`mul` and the
/// dedicated row-bias / row-scale operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, op: Op, needs_grad: bool) -> ValueId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            values,
            op,
            needs_grad,
        });
        ValueId(nodes.len() - 1)
    }

    /// Untracked leaf from explicit shape and values.
    pub fn constant(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "constant shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    pub fn constant_scalar(&self, v: f64) -> ValueId {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    pub fn constant_vector(&self, values: Vec<f64>) -> ValueId {
        let n = values.len();
        self.push(vec![n], values, Op::Leaf, false)
    }

    /// Leaf from a tensor; tracked when the tensor `requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> ValueId {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    pub fn shape(&self, id: ValueId) -> Vec<usize> {
        self.nodes.borrow()[id.0].shape.clone()
    }

    pub fn values(&self, id: ValueId) -> Vec<f64> {
        self.nodes.borrow()[id.0].values.clone()
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: ValueId) -> Result<f64> {
        let nodes = self.nodes.borrow();
        let n = &nodes[id.0];
        if n.values.len() != 1 {
            return Err(Error::Shape(format!(
                "expected scalar, found shape {:?}",
                n.shape
            )));
        }
        Ok(n.values[0])
    }

    fn binary_same_shape(&self, name: &str, a: ValueId, b: ValueId) -> Result<(Vec<usize>, bool)> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        let scalar_b = nb.values.len() == 1;
        let scalar_a = na.values.len() == 1;
        if na.shape != nb.shape && !scalar_a && !scalar_b {
            return Err(Error::Shape(format!(
                "{name}: shapes {:?} and {:?} differ",
                na.shape, nb.shape
            )));
        }
        let shape = if scalar_a && !scalar_b {
            nb.shape.clone()
        } else {
            na.shape.clone()
        };
        Ok((shape, na.needs_grad || nb.needs_grad))
    }

    pub fn add(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (shape, needs) = self.binary_same_shape("add", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            elementwise_broadcast(&nodes[a.0].values, &nodes[b.0].values, |x, y| x + y)
        };
        Ok(self.push(shape, out, Op::Add(a, b), needs))
    }

    pub fn sub(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (shape, needs) = self.binary_same_shape("sub", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            elementwise_broadcast(&nodes[a.0].values, &nodes[b.0].values, |x, y| x - y)
        };
        Ok(self.push(shape, out, Op::Sub(a, b), needs))
    }

    pub fn mul(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (shape, needs) = self.binary_same_shape("mul", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            elementwise_broadcast(&nodes[a.0].values, &nodes[b.0].values, |x, y| x * y)
        };
        Ok(self.push(shape, out, Op::Mul(a, b), needs))
    }

    pub fn add_scalar(&self, a: ValueId, c: f64) -> ValueId {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (
                n.shape.clone(),
                n.values.iter().map(|v| v + c).collect(),
                n.needs_grad,
            )
        };
        self.push(shape, values, Op::AddScalar(a), needs)
    }

    pub fn scale(&self, a: ValueId, c: f64) -> ValueId {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (
                n.shape.clone(),
                n.values.iter().map(|v| v * c).collect(),
                n.needs_grad,
            )
        };
        self.push(shape, values, Op::Scale(a, c), needs)
    }

    pub fn matmul(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, k, n, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape.len() != 2 || nb.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "matmul: expected two matrices, found {:?} and {:?}",
                    na.shape, nb.shape
                )));
            }
            let (m, k) = (na.shape[0], na.shape[1]);
            let (k2, n) = (nb.shape[0], nb.shape[1]);
            if k != k2 {
                return Err(Error::Shape(format!(
                    "matmul: inner dimensions of {:?} and {:?} differ",
                    na.shape, nb.shape
                )));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = na.values[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &nb.values[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
            (m, k, n, out, na.needs_grad || nb.needs_grad)
        };
        let _ = k;
        Ok(self.push(vec![m, n], values, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&self, a: ValueId) -> Result<ValueId> {
        let (m, n, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "transpose: expected a matrix, found {:?}",
                    na.shape
                )));
            }
            let (m, n) = (na.shape[0], na.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = na.values[i * n + j];
                }
            }
            (m, n, out, na.needs_grad)
        };
        Ok(self.push(vec![n, m], values, Op::Transpose(a), needs))
    }

    pub fn reshape(&self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let (values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let numel: usize = shape.iter().product();
            if numel != na.values.len() {
                return Err(Error::Shape(format!(
                    "reshape: {:?} has {} values, target {:?} needs {}",
                    na.shape,
                    na.values.len(),
                    shape,
                    numel
                )));
            }
            (na.values.clone(), na.needs_grad)
        };
        Ok(self.push(shape, values, Op::Reshape(a), needs))
    }

    pub fn ln(&self, a: ValueId) -> Result<ValueId> {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if let Some((i, v)) = na
                .values
                .iter()
                .enumerate()
                .find(|(_, v)| **v <= 0.0 || !v.is_finite())
            {
                return Err(Error::Numeric(format!(
                    "ln of non-positive value {v} at flat index {i} (tape node {}); \
                     guard the input with an epsilon",
                    a.0
                )));
            }
            (
                na.shape.clone(),
                na.values.iter().map(|v| v.ln()).collect(),
                na.needs_grad,
            )
        };
        Ok(self.push(shape, values, Op::Ln(a), needs))
    }

    /// `ln(x + 1e-12)`: the guarded logarithm every loss formula uses.
    pub fn ln_guarded(&self, a: ValueId) -> Result<ValueId> {
        let shifted = self.add_scalar(a, LN_GUARD);
        self.ln(shifted)
    }

    pub fn exp(&self, a: ValueId) -> ValueId {
        self.unary_map(a, |v| v.exp(), Op::Exp(a))
    }

    pub fn tanh(&self, a: ValueId) -> ValueId {
        self.unary_map(a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: ValueId) -> ValueId {
        self.unary_map(a, sigmoid, Op::Sigmoid(a))
    }

    fn unary_map(&self, a: ValueId, f: impl Fn(f64) -> f64, op: Op) -> ValueId {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (
                na.shape.clone(),
                na.values.iter().map(|v| f(*v)).collect(),
                na.needs_grad,
            )
        };
        self.push(shape, values, op, needs)
    }

    /// Row-wise softmax over the last axis (a vector counts as one row).
    pub fn softmax_rows(&self, a: ValueId) -> Result<ValueId> {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.is_empty() {
                return Err(Error::Shape(
                    "softmax: scalar input has no axis to normalize".into(),
                ));
            }
            let cols = *na.shape.last().unwrap();
            let rows = na.values.len() / cols.max(1);
            if cols == 0 {
                return Err(Error::Shape("softmax: zero-width rows".into()));
            }
            let mut out = vec![0.0; na.values.len()];
            for r in 0..rows {
                let row = &na.values[r * cols..(r + 1) * cols];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    out[r * cols + j] = e;
                    total += e;
                }
                for j in 0..cols {
                    out[r * cols + j] /= total;
                }
            }
            (na.shape.clone(), out, na.needs_grad)
        };
        Ok(self.push(shape, values, Op::SoftmaxRows(a), needs))
    }

    pub fn sum_all(&self, a: ValueId) -> ValueId {
        let (total, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (na.values.iter().sum(), na.needs_grad)
        };
        self.push(vec![], vec![total], Op::SumAll(a), needs)
    }

    pub fn mean_all(&self, a: ValueId) -> ValueId {
        let (mean, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            let n = na.values.len().max(1) as f64;
            (na.values.iter().sum::<f64>() / n, na.needs_grad)
        };
        self.push(vec![], vec![mean], Op::MeanAll(a), needs)
    }

    /// Sum a matrix along `axis` (0 collapses rows, producing column totals).
    pub fn sum_axis(&self, a: ValueId, axis: usize) -> Result<ValueId> {
        let (out_len, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 || axis > 1 {
                return Err(Error::Shape(format!(
                    "sum_axis: expected a matrix and axis 0|1, found {:?} axis {axis}",
                    na.shape
                )));
            }
            let (m, n) = (na.shape[0], na.shape[1]);
            if axis == 0 {
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        out[j] += na.values[i * n + j];
                    }
                }
                (n, out, na.needs_grad)
            } else {
                let mut out = vec![0.0; m];
                for i in 0..m {
                    out[i] = na.values[i * n..(i + 1) * n].iter().sum();
                }
                (m, out, na.needs_grad)
            }
        };
        Ok(self.push(vec![out_len], values, Op::SumAxis(a, axis), needs))
    }

    /// Whole-tensor Euclidean norm.
    pub fn l2_norm(&self, a: ValueId) -> ValueId {
        let (norm, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (
                na.values.iter().map(|v| v * v).sum::<f64>().sqrt(),
                na.needs_grad,
            )
        };
        self.push(vec![], vec![norm], Op::L2Norm(a), needs)
    }

    /// Per-row cosine similarity of two equally-shaped matrices.
    /// Rows with zero norm on either side yield 0 (and receive no gradient).
    pub fn cosine_rows(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (rows, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape != nb.shape || na.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "cosine_rows: expected equal matrices, found {:?} and {:?}",
                    na.shape, nb.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut out = vec![0.0; m];
            for i in 0..m {
                let ra = &na.values[i * d..(i + 1) * d];
                let rb = &nb.values[i * d..(i + 1) * d];
                out[i] = cosine(ra, rb);
            }
            (m, out, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(vec![rows], values, Op::CosineRows(a, b), needs))
    }

    /// All-pairs cosine similarity between the rows of `a` ([m,d]) and the
    /// rows of `b` ([n,d]), producing [m,n].
    pub fn cosine_pairwise(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, n, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[1] {
                return Err(Error::Shape(format!(
                    "cosine_pairwise: incompatible shapes {:?} and {:?}",
                    na.shape, nb.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let n = nb.shape[0];
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let ra = &na.values[i * d..(i + 1) * d];
                for j in 0..n {
                    let rb = &nb.values[j * d..(j + 1) * d];
                    out[i * n + j] = cosine(ra, rb);
                }
            }
            (m, n, out, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(vec![m, n], values, Op::CosinePairwise(a, b), needs))
    }

    /// Entries below `threshold` become 0; entries at or above pass through.
    pub fn clip_below(&self, a: ValueId, threshold: f64) -> ValueId {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            (
                na.shape.clone(),
                na.values
                    .iter()
                    .map(|&v| if v >= threshold { v } else { 0.0 })
                    .collect(),
                na.needs_grad,
            )
        };
        self.push(shape, values, Op::ClipBelow(a, threshold), needs)
    }

    /// Scales each row of a matrix to unit Euclidean norm; zero rows stay
    /// zero (and receive no gradient).
    pub fn normalize_rows(&self, a: ValueId) -> Result<ValueId> {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "normalize_rows: expected a matrix, found {:?}",
                    na.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut out = na.values.clone();
            for i in 0..m {
                let row = &mut out[i * d..(i + 1) * d];
                let n = norm(row);
                if n > ZERO_NORM {
                    for x in row.iter_mut() {
                        *x /= n;
                    }
                }
            }
            (na.shape.clone(), out, na.needs_grad)
        };
        Ok(self.push(shape, values, Op::NormalizeRows(a), needs))
    }

    pub fn gather_rows(&self, a: ValueId, indices: &[usize]) -> Result<ValueId> {
        let (d, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "gather_rows: expected a matrix, found {:?}",
                    na.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut values = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                if i >= m {
                    return Err(Error::Data(format!(
                        "gather_rows: index {i} out of bounds for {m} rows"
                    )));
                }
                values.extend_from_slice(&na.values[i * d..(i + 1) * d]);
            }
            (d, values, na.needs_grad)
        };
        Ok(self.push(
            vec![indices.len(), d],
            values,
            Op::GatherRows(a, indices.to_vec()),
            needs,
        ))
    }

    /// Picks individual entries `a[rows[t], cols[t]]` into a vector.
    pub fn gather_entries(&self, a: ValueId, rows: &[usize], cols: &[usize]) -> Result<ValueId> {
        if rows.len() != cols.len() {
            return Err(Error::Shape(format!(
                "gather_entries: {} row indices vs {} column indices",
                rows.len(),
                cols.len()
            )));
        }
        let (values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 {
                return Err(Error::Shape(format!(
                    "gather_entries: expected a matrix, found {:?}",
                    na.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut values = Vec::with_capacity(rows.len());
            for (&r, &c) in rows.iter().zip(cols) {
                if r >= m || c >= d {
                    return Err(Error::Data(format!(
                        "gather_entries: ({r},{c}) out of bounds for {m}x{d}"
                    )));
                }
                values.push(na.values[r * d + c]);
            }
            (values, na.needs_grad)
        };
        Ok(self.push(
            vec![rows.len()],
            values,
            Op::GatherEntries(a, rows.to_vec(), cols.to_vec()),
            needs,
        ))
    }

    /// Multiplies row `i` of the matrix by `factors[i]`.
    pub fn scale_rows(&self, a: ValueId, factors: ValueId) -> Result<ValueId> {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nf) = (&nodes[a.0], &nodes[factors.0]);
            if na.shape.len() != 2 || nf.shape.len() != 1 || nf.shape[0] != na.shape[0] {
                return Err(Error::Shape(format!(
                    "scale_rows: matrix {:?} vs factor vector {:?}",
                    na.shape, nf.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut out = vec![0.0; m * d];
            for i in 0..m {
                let f = nf.values[i];
                for j in 0..d {
                    out[i * d + j] = na.values[i * d + j] * f;
                }
            }
            (na.shape.clone(), out, na.needs_grad || nf.needs_grad)
        };
        Ok(self.push(shape, values, Op::ScaleRows(a, factors), needs))
    }

    /// Adds a bias row-vector to every row of the matrix.
    pub fn add_bias_rows(&self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let (shape, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[bias.0]);
            if na.shape.len() != 2 || nb.shape.len() != 1 || nb.shape[0] != na.shape[1] {
                return Err(Error::Shape(format!(
                    "add_bias_rows: matrix {:?} vs bias {:?}",
                    na.shape, nb.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut out = vec![0.0; m * d];
            for i in 0..m {
                for j in 0..d {
                    out[i * d + j] = na.values[i * d + j] + nb.values[j];
                }
            }
            (na.shape.clone(), out, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(shape, values, Op::AddBiasRows(a, bias), needs))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, d, values, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[0] != nb.shape[0] {
                return Err(Error::Shape(format!(
                    "concat_cols: incompatible shapes {:?} and {:?}",
                    na.shape, nb.shape
                )));
            }
            let (m, d1) = (na.shape[0], na.shape[1]);
            let d2 = nb.shape[1];
            let mut out = Vec::with_capacity(m * (d1 + d2));
            for i in 0..m {
                out.extend_from_slice(&na.values[i * d1..(i + 1) * d1]);
                out.extend_from_slice(&nb.values[i * d2..(i + 1) * d2]);
            }
            (m, d1 + d2, out, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(vec![m, d], values, Op::ConcatCols(a, b), needs))
    }

    /// Column range `start..end` of a matrix.
    pub fn slice_cols(&self, a: ValueId, start: usize, end: usize) -> Result<ValueId> {
        let (m, values, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.0];
            if na.shape.len() != 2 || end > na.shape[1] || start > end {
                return Err(Error::Shape(format!(
                    "slice_cols: range {start}..{end} invalid for {:?}",
                    na.shape
                )));
            }
            let (m, d) = (na.shape[0], na.shape[1]);
            let mut out = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                out.extend_from_slice(&na.values[i * d + start..i * d + end]);
            }
            (m, out, na.needs_grad)
        };
        Ok(self.push(
            vec![m, end - start],
            values,
            Op::SliceCols(a, start, end),
            needs,
        ))
    }

    /// Stacks vectors (or single-row matrices) of equal width into a matrix.
    pub fn stack_rows(&self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Ok(self.push(vec![0, 0], Vec::new(), Op::StackRows(Vec::new()), false));
        }
        let (d, values, needs) = {
            let nodes = self.nodes.borrow();
            let d = nodes[rows[0].0].values.len();
            let mut values = Vec::with_capacity(rows.len() * d);
            let mut needs = false;
            for &r in rows {
                let nr = &nodes[r.0];
                if nr.values.len() != d || nr.shape.len() > 2 || (nr.shape.len() == 2 && nr.shape[0] != 1)
                {
                    return Err(Error::Shape(format!(
                        "stack_rows: row shape {:?} incompatible with width {d}",
                        nr.shape
                    )));
                }
                values.extend_from_slice(&nr.values);
                needs |= nr.needs_grad;
            }
            (d, values, needs)
        };
        Ok(self.push(
            vec![rows.len(), d],
            values,
            Op::StackRows(rows.to_vec()),
            needs,
        ))
    }

    // ---- compositions -----------------------------------------------------

    /// `x · wᵀ + b` for row-major inputs: x [n,d], w [out,d], b [out].
    pub fn linear(&self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let wt = self.transpose(w)?;
        let xw = self.matmul(x, wt)?;
        self.add_bias_rows(xw, b)
    }

    /// Matrix-vector product A[m,n] · v[n] -> [m].
    pub fn matvec(&self, a: ValueId, v: ValueId) -> Result<ValueId> {
        let n = self.shape(v);
        if n.len() != 1 {
            return Err(Error::Shape(format!(
                "matvec: expected a vector, found {:?}",
                n
            )));
        }
        let col = self.reshape(v, vec![n[0], 1])?;
        let out = self.matmul(a, col)?;
        let m = self.shape(out)[0];
        self.reshape(out, vec![m])
    }

    /// Scalar dot product of two equally-shaped tensors.
    pub fn dot(&self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let prod = self.mul(a, b)?;
        Ok(self.sum_all(prod))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates gradients of the scalar `loss` with respect to every
    /// gradient-tracked value on the tape.
    pub fn backward(&self, loss: ValueId) -> Result<TapeGrads> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].values.len() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, found shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = nodes
            .iter()
            .map(|n| {
                if n.needs_grad {
                    Some(vec![0.0; n.values.len()])
                } else {
                    None
                }
            })
            .collect();
        if grads[loss.0].is_none() {
            // Loss does not depend on any trainable leaf; nothing to do.
            return Ok(TapeGrads { grads });
        }
        grads[loss.0].as_mut().unwrap()[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let g = grads[id].take().unwrap();
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate_broadcast(&mut grads, *a, &g, 1.0, None, &nodes);
                    accumulate_broadcast(&mut grads, *b, &g, 1.0, None, &nodes);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(&mut grads, *a, &g, 1.0, None, &nodes);
                    accumulate_broadcast(&mut grads, *b, &g, -1.0, None, &nodes);
                }
                Op::Mul(a, b) => {
                    let bv = nodes[b.0].values.clone();
                    let av = nodes[a.0].values.clone();
                    accumulate_broadcast(&mut grads, *a, &g, 1.0, Some(&bv), &nodes);
                    accumulate_broadcast(&mut grads, *b, &g, 1.0, Some(&av), &nodes);
                }
                Op::AddScalar(a) => add_to(&mut grads, *a, |dst| {
                    for (d, gi) in dst.iter_mut().zip(&g) {
                        *d += gi;
                    }
                }),
                Op::Scale(a, c) => {
                    let c = *c;
                    add_to(&mut grads, *a, |dst| {
                        for (d, gi) in dst.iter_mut().zip(&g) {
                            *d += c * gi;
                        }
                    })
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if grads[a.0].is_some() {
                        let bv = &nodes[b.0].values;
                        let da = grads[a.0].as_mut().unwrap();
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                    if grads[b.0].is_some() {
                        let av = &nodes[a.0].values;
                        let db = grads[b.0].as_mut().unwrap();
                        for p in 0..k {
                            for i in 0..m {
                                let aip = av[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += aip * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..m {
                            for j in 0..n {
                                dst[i * n + j] += g[j * m + i];
                            }
                        }
                    });
                }
                Op::Reshape(a) => add_to(&mut grads, *a, |dst| {
                    for (d, gi) in dst.iter_mut().zip(&g) {
                        *d += gi;
                    }
                }),
                Op::Ln(a) => {
                    let xv = &nodes[a.0].values;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g[i] / xv[i];
                        }
                    });
                }
                Op::Exp(a) => {
                    let yv = &node.values;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g[i] * yv[i];
                        }
                    });
                }
                Op::Tanh(a) => {
                    let yv = &node.values;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g[i] * (1.0 - yv[i] * yv[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let yv = &node.values;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..dst.len() {
                            dst[i] += g[i] * yv[i] * (1.0 - yv[i]);
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    let yv = &node.values;
                    let cols = *node.shape.last().unwrap();
                    let rows = yv.len() / cols;
                    add_to(&mut grads, *a, |dst| {
                        for r in 0..rows {
                            let off = r * cols;
                            let mut dot = 0.0;
                            for j in 0..cols {
                                dot += g[off + j] * yv[off + j];
                            }
                            for j in 0..cols {
                                dst[off + j] += yv[off + j] * (g[off + j] - dot);
                            }
                        }
                    });
                }
                Op::SumAll(a) => add_to(&mut grads, *a, |dst| {
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                }),
                Op::MeanAll(a) => {
                    let n = nodes[a.0].values.len().max(1) as f64;
                    add_to(&mut grads, *a, |dst| {
                        for d in dst.iter_mut() {
                            *d += g[0] / n;
                        }
                    });
                }
                Op::SumAxis(a, axis) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let axis = *axis;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..m {
                            for j in 0..n {
                                dst[i * n + j] += if axis == 0 { g[j] } else { g[i] };
                            }
                        }
                    });
                }
                Op::L2Norm(a) => {
                    let r = node.values[0];
                    let xv = &nodes[a.0].values;
                    if r > ZERO_NORM {
                        add_to(&mut grads, *a, |dst| {
                            for i in 0..dst.len() {
                                dst[i] += g[0] * xv[i] / r;
                            }
                        });
                    }
                }
                Op::CosineRows(a, b) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let av = nodes[a.0].values.clone();
                    let bv = nodes[b.0].values.clone();
                    let cv = &node.values;
                    for i in 0..m {
                        let ra = &av[i * d..(i + 1) * d];
                        let rb = &bv[i * d..(i + 1) * d];
                        let na = norm(ra);
                        let nb = norm(rb);
                        if na <= ZERO_NORM || nb <= ZERO_NORM {
                            continue;
                        }
                        let c = cv[i];
                        if let Some(da) = grads[a.0].as_mut() {
                            for t in 0..d {
                                da[i * d + t] += g[i] * (rb[t] / (na * nb) - c * ra[t] / (na * na));
                            }
                        }
                        if let Some(db) = grads[b.0].as_mut() {
                            for t in 0..d {
                                db[i * d + t] += g[i] * (ra[t] / (na * nb) - c * rb[t] / (nb * nb));
                            }
                        }
                    }
                }
                Op::CosinePairwise(a, b) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    let av = nodes[a.0].values.clone();
                    let bv = nodes[b.0].values.clone();
                    let cv = &node.values;
                    let nas: Vec<f64> = (0..m).map(|i| norm(&av[i * d..(i + 1) * d])).collect();
                    let nbs: Vec<f64> = (0..n).map(|j| norm(&bv[j * d..(j + 1) * d])).collect();
                    for i in 0..m {
                        if nas[i] <= ZERO_NORM {
                            continue;
                        }
                        let ra = &av[i * d..(i + 1) * d];
                        for j in 0..n {
                            if nbs[j] <= ZERO_NORM {
                                continue;
                            }
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let rb = &bv[j * d..(j + 1) * d];
                            let c = cv[i * n + j];
                            if let Some(da) = grads[a.0].as_mut() {
                                for t in 0..d {
                                    da[i * d + t] +=
                                        gij * (rb[t] / (nas[i] * nbs[j]) - c * ra[t] / (nas[i] * nas[i]));
                                }
                            }
                            if let Some(db) = grads[b.0].as_mut() {
                                for t in 0..d {
                                    db[j * d + t] +=
                                        gij * (ra[t] / (nas[i] * nbs[j]) - c * rb[t] / (nbs[j] * nbs[j]));
                                }
                            }
                        }
                    }
                }
                Op::NormalizeRows(a) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let xv = &nodes[a.0].values;
                    let yv = &node.values;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..m {
                            let xr = &xv[i * d..(i + 1) * d];
                            let n = norm(xr);
                            if n <= ZERO_NORM {
                                continue;
                            }
                            let yr = &yv[i * d..(i + 1) * d];
                            let gr = &g[i * d..(i + 1) * d];
                            let dot: f64 = yr.iter().zip(gr).map(|(y, gg)| y * gg).sum();
                            for t in 0..d {
                                dst[i * d + t] += (gr[t] - yr[t] * dot) / n;
                            }
                        }
                    });
                }
                Op::ClipBelow(a, threshold) => {
                    let xv = &nodes[a.0].values;
                    let th = *threshold;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..dst.len() {
                            if xv[i] >= th {
                                dst[i] += g[i];
                            }
                        }
                    });
                }
                Op::GatherRows(a, indices) => {
                    let d = nodes[a.0].shape[1];
                    add_to(&mut grads, *a, |dst| {
                        for (t, &i) in indices.iter().enumerate() {
                            for j in 0..d {
                                dst[i * d + j] += g[t * d + j];
                            }
                        }
                    });
                }
                Op::GatherEntries(a, rows, cols) => {
                    let d = nodes[a.0].shape[1];
                    add_to(&mut grads, *a, |dst| {
                        for (t, (&r, &c)) in rows.iter().zip(cols).enumerate() {
                            dst[r * d + c] += g[t];
                        }
                    });
                }
                Op::ScaleRows(a, f) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let fv = nodes[f.0].values.clone();
                    let av = nodes[a.0].values.clone();
                    if let Some(da) = grads[a.0].as_mut() {
                        for i in 0..m {
                            for j in 0..d {
                                da[i * d + j] += g[i * d + j] * fv[i];
                            }
                        }
                    }
                    if let Some(df) = grads[f.0].as_mut() {
                        for i in 0..m {
                            let mut s = 0.0;
                            for j in 0..d {
                                s += g[i * d + j] * av[i * d + j];
                            }
                            df[i] += s;
                        }
                    }
                }
                Op::AddBiasRows(a, b) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    add_to(&mut grads, *a, |dst| {
                        for (dv, gv) in dst.iter_mut().zip(&g) {
                            *dv += gv;
                        }
                    });
                    add_to(&mut grads, *b, |dst| {
                        for i in 0..m {
                            for j in 0..d {
                                dst[j] += g[i * d + j];
                            }
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let (m, d1) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let d2 = nodes[b.0].shape[1];
                    let d = d1 + d2;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..m {
                            for j in 0..d1 {
                                dst[i * d1 + j] += g[i * d + j];
                            }
                        }
                    });
                    add_to(&mut grads, *b, |dst| {
                        for i in 0..m {
                            for j in 0..d2 {
                                dst[i * d2 + j] += g[i * d + d1 + j];
                            }
                        }
                    });
                }
                Op::SliceCols(a, start, end) => {
                    let (m, d) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let (start, end) = (*start, *end);
                    let w = end - start;
                    add_to(&mut grads, *a, |dst| {
                        for i in 0..m {
                            for j in 0..w {
                                dst[i * d + start + j] += g[i * w + j];
                            }
                        }
                    });
                    let _ = (m, d);
                }
                Op::StackRows(rows) => {
                    let d = if rows.is_empty() {
                        0
                    } else {
                        nodes[rows[0].0].values.len()
                    };
                    for (t, &r) in rows.iter().enumerate() {
                        add_to(&mut grads, r, |dst| {
                            for j in 0..d {
                                dst[j] += g[t * d + j];
                            }
                        });
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(TapeGrads { grads })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

fn elementwise_broadcast(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
    } else if b.len() == 1 {
        a.iter().map(|x| f(*x, b[0])).collect()
    } else {
        b.iter().map(|y| f(a[0], *y)).collect()
    }
}

fn add_to(grads: &mut [Option<Vec<f64>>], id: ValueId, f: impl FnOnce(&mut Vec<f64>)) {
    if let Some(dst) = grads[id.0].as_mut() {
        f(dst);
    }
}

/// Accumulates `sign * g (* factor)` into the gradient of `target`, reducing
/// over the broadcast when `target` is a scalar fed into a wider operation.
fn accumulate_broadcast(
    grads: &mut [Option<Vec<f64>>],
    target: ValueId,
    g: &[f64],
    sign: f64,
    factor: Option<&[f64]>,
    nodes: &[Node],
) {
    let target_len = nodes[target.0].values.len();
    if let Some(dst) = grads[target.0].as_mut() {
        if target_len == g.len() {
            for i in 0..g.len() {
                let f = factor.map_or(1.0, |f| if f.len() == 1 { f[0] } else { f[i] });
                dst[i] += sign * g[i] * f;
            }
        } else {
            // target is the broadcast scalar
            let mut s = 0.0;
            for i in 0..g.len() {
                let f = factor.map_or(1.0, |f| if f.len() == 1 { f[0] } else { f[i] });
                s += g[i] * f;
            }
            dst[0] += sign * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn trainable(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::new(shape, values).unwrap().trainable()
    }

    #[test]
    fn square_value_and_grad() {
        // f(x) = x*x at x = 3 -> value 9, grad 6
        let tape = Tape::new();
        let x = tape.leaf(&trainable(vec![], vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.scalar_value(y).unwrap(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_uniform_and_jacobian_rows() {
        let tape = Tape::new();
        let x = tape.leaf(&trainable(vec![3], vec![0.0, 0.0, 0.0]));
        let s = tape.softmax_rows(x).unwrap();
        let v = tape.values(s);
        for vi in &v {
            assert!((vi - 1.0 / 3.0).abs() < 1e-15);
        }
        // Each Jacobian row of softmax sums to 0: probe with unit upstream rows.
        for probe in 0..3 {
            let tape = Tape::new();
            let x = tape.leaf(&trainable(vec![3], vec![0.0, 0.0, 0.0]));
            let s = tape.softmax_rows(x).unwrap();
            let mut w = vec![0.0; 3];
            w[probe] = 1.0;
            let wc = tape.constant_vector(w);
            let picked = tape.dot(s, wc).unwrap();
            let grads = tape.backward(picked).unwrap();
            let row = grads.get(x).unwrap();
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_nonnegative_and_normalized() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..12).map(|_| rng.normal(0.0, 4.0)).collect();
            let tape = Tape::new();
            let x = tape.constant(vec![3, 4], vals).unwrap();
            let s = tape.softmax_rows(x).unwrap();
            let v = tape.values(s);
            for r in 0..3 {
                let row = &v[r * 4..(r + 1) * 4];
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ln_rejects_non_positive() {
        let tape = Tape::new();
        let x = tape.constant_vector(vec![1.0, 0.0]);
        let err = tape.ln(x).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn cosine_zero_vector_convention() {
        let tape = Tape::new();
        let a = tape
            .leaf(&trainable(vec![1, 2], vec![1.0, 0.0]))
            ;
        let b = tape.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let c = tape.cosine_rows(a, b).unwrap();
        assert_eq!(tape.values(c), vec![0.0]);
        let s = tape.sum_all(c);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn stack_and_slice_roundtrip() {
        let tape = Tape::new();
        let r1 = tape.constant_vector(vec![1.0, 2.0, 3.0]);
        let r2 = tape.constant_vector(vec![4.0, 5.0, 6.0]);
        let m = tape.stack_rows(&[r1, r2]).unwrap();
        assert_eq!(tape.shape(m), vec![2, 3]);
        let s = tape.slice_cols(m, 1, 3).unwrap();
        assert_eq!(tape.values(s), vec![2.0, 3.0, 5.0, 6.0]);
    }

    /// Central-difference check of a scalar-valued tape program.
    fn check_grad(
        build: impl Fn(&Tape, &[ValueId]) -> ValueId,
        inputs: &mut [Tensor],
        tol: f64,
    ) {
        let eval = |inputs: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
            let tape = Tape::new();
            let ids: Vec<ValueId> = inputs.iter().map(|t| tape.leaf(t)).collect();
            let loss = build(&tape, &ids);
            let v = tape.scalar_value(loss).unwrap();
            let grads = tape.backward(loss).unwrap();
            let gs = ids
                .iter()
                .map(|id| grads.get(*id).map(|g| g.to_vec()).unwrap_or_default())
                .collect();
            (v, gs)
        };
        let (_, analytic) = eval(inputs);
        let h = 1e-6;
        for pi in 0..inputs.len() {
            for i in 0..inputs[pi].numel() {
                let orig = inputs[pi].values()[i];
                inputs[pi].values_mut()[i] = orig + h;
                let (lp, _) = eval(inputs);
                inputs[pi].values_mut()[i] = orig - h;
                let (lm, _) = eval(inputs);
                inputs[pi].values_mut()[i] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = analytic[pi][i];
                let denom = num.abs().max(ana.abs());
                let err = if denom < 1e-8 {
                    (num - ana).abs()
                } else {
                    (num - ana).abs() / denom
                };
                assert!(
                    err <= tol,
                    "param {pi} entry {i}: analytic {ana} vs numeric {num} (err {err})"
                );
            }
        }
    }

    fn rand_tensor(rng: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        Tensor::new(shape, values).unwrap().trainable()
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = Rng::new(42);
        let tol = 1e-5;
        for trial in 0..3 {
            let _ = trial;
            // add / sub / mul with and without scalar broadcast
            let mut io = [
                rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0),
                rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0),
            ];
            check_grad(
                |t, ids| {
                    let s = t.add(ids[0], ids[1]).unwrap();
                    let d = t.sub(s, ids[1]).unwrap();
                    let m = t.mul(d, ids[0]).unwrap();
                    t.sum_all(m)
                },
                &mut io,
                tol,
            );
            let mut io = [
                rand_tensor(&mut rng, vec![2, 2], -1.0, 1.0),
                rand_tensor(&mut rng, vec![], 0.5, 1.5),
            ];
            check_grad(
                |t, ids| {
                    let s = t.add(ids[0], ids[1]).unwrap();
                    let m = t.mul(s, ids[1]).unwrap();
                    let d = t.sub(m, ids[1]).unwrap();
                    t.mean_all(d)
                },
                &mut io,
                tol,
            );
            // matmul + transpose + reshape
            let mut io = [
                rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0),
                rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0),
            ];
            check_grad(
                |t, ids| {
                    let p = t.matmul(ids[0], ids[1]).unwrap();
                    let pt = t.transpose(p).unwrap();
                    let f = t.reshape(pt, vec![4]).unwrap();
                    let w = t.constant_vector(vec![0.3, -0.7, 1.1, 0.4]);
                    t.dot(f, w).unwrap()
                },
                &mut io,
                tol,
            );
            // ln (positive inputs), exp, tanh, sigmoid
            let mut io = [rand_tensor(&mut rng, vec![5], 0.2, 2.0)];
            check_grad(
                |t, ids| {
                    let l = t.ln(ids[0]).unwrap();
                    let e = t.exp(ids[0]);
                    let th = t.tanh(ids[0]);
                    let sg = t.sigmoid(ids[0]);
                    let s1 = t.add(l, e).unwrap();
                    let s2 = t.add(th, sg).unwrap();
                    let s = t.add(s1, s2).unwrap();
                    t.sum_all(s)
                },
                &mut io,
                tol,
            );
            // softmax with a random linear probe
            let mut io = [rand_tensor(&mut rng, vec![2, 4], -2.0, 2.0)];
            let probe: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
            check_grad(
                |t, ids| {
                    let s = t.softmax_rows(ids[0]).unwrap();
                    let w = t.constant(vec![2, 4], probe.clone()).unwrap();
                    let m = t.mul(s, w).unwrap();
                    t.sum_all(m)
                },
                &mut io,
                tol,
            );
            // reductions and norms
            let mut io = [rand_tensor(&mut rng, vec![3, 2], -1.0, 1.5)];
            check_grad(
                |t, ids| {
                    let c = t.sum_axis(ids[0], 0).unwrap();
                    let r = t.sum_axis(ids[0], 1).unwrap();
                    let n = t.l2_norm(ids[0]);
                    let wc = t.constant_vector(vec![0.5, -1.0]);
                    let wr = t.constant_vector(vec![1.0, 0.2, -0.4]);
                    let a = t.dot(c, wc).unwrap();
                    let b = t.dot(r, wr).unwrap();
                    let ab = t.add(a, b).unwrap();
                    t.add(ab, n).unwrap()
                },
                &mut io,
                tol,
            );
            // cosine (rows and pairwise), away from zero vectors
            let mut io = [
                rand_tensor(&mut rng, vec![3, 4], 0.3, 1.3),
                rand_tensor(&mut rng, vec![3, 4], -1.3, -0.3),
            ];
            check_grad(
                |t, ids| {
                    let c = t.cosine_rows(ids[0], ids[1]).unwrap();
                    let w = t.constant_vector(vec![1.0, -0.5, 0.7]);
                    t.dot(c, w).unwrap()
                },
                &mut io,
                tol,
            );
            let probe: Vec<f64> = (0..6).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut io = [
                rand_tensor(&mut rng, vec![2, 3], 0.2, 1.2),
                rand_tensor(&mut rng, vec![3, 3], 0.2, 1.2),
            ];
            check_grad(
                |t, ids| {
                    let c = t.cosine_pairwise(ids[0], ids[1]).unwrap();
                    let w = t.constant(vec![2, 3], probe.clone()).unwrap();
                    let m = t.mul(c, w).unwrap();
                    t.sum_all(m)
                },
                &mut io,
                tol,
            );
            // row normalization, away from zero rows
            let probe: Vec<f64> = (0..6).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut io = [rand_tensor(&mut rng, vec![2, 3], 0.4, 1.6)];
            check_grad(
                |t, ids| {
                    let nr = t.normalize_rows(ids[0]).unwrap();
                    let w = t.constant(vec![2, 3], probe.clone()).unwrap();
                    let m = t.mul(nr, w).unwrap();
                    t.sum_all(m)
                },
                &mut io,
                tol,
            );
            // clip-below: keep entries away from the threshold so the kink
            // does not sit inside the finite-difference stencil
            let vals: Vec<f64> = (0..6)
                .map(|_| {
                    let v = rng.normal(0.0, 1.0);
                    if v.abs() < 0.1 {
                        0.5
                    } else {
                        v
                    }
                })
                .collect();
            let mut io = [Tensor::new(vec![6], vals).unwrap().trainable()];
            check_grad(
                |t, ids| {
                    let c = t.clip_below(ids[0], 0.0);
                    t.sum_all(c)
                },
                &mut io,
                tol,
            );
            // gather / scale_rows / bias / concat / slice / stack
            let probe: Vec<f64> = (0..6).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut io = [
                rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0),
                rand_tensor(&mut rng, vec![3], 0.5, 1.5),
                rand_tensor(&mut rng, vec![3], -0.5, 0.5),
            ];
            check_grad(
                |t, ids| {
                    let gr = t.gather_rows(ids[0], &[2, 0, 2]).unwrap();
                    let sr = t.scale_rows(gr, ids[1]).unwrap();
                    let ab = t.add_bias_rows(sr, ids[2]).unwrap();
                    let ge = t.gather_entries(ids[0], &[0, 1, 3], &[2, 0, 1]).unwrap();
                    let w = t.constant(vec![3, 2], probe.clone()).unwrap();
                    let cc = t.concat_cols(ab, w).unwrap();
                    let sl = t.slice_cols(cc, 1, 4).unwrap();
                    let s1 = t.sum_all(sl);
                    let s2 = t.sum_all(ge);
                    t.add(s1, s2).unwrap()
                },
                &mut io,
                tol,
            );
            let mut io = [
                rand_tensor(&mut rng, vec![3], -1.0, 1.0),
                rand_tensor(&mut rng, vec![3], -1.0, 1.0),
            ];
            check_grad(
                |t, ids| {
                    let m = t.stack_rows(&[ids[0], ids[1], ids[0]]).unwrap();
                    let sq = t.mul(m, m).unwrap();
                    t.sum_all(sq)
                },
                &mut io,
                tol,
            );
        }
    }

    #[test]
    fn backward_without_trainable_leaves_is_empty() {
        let tape = Tape::new();
        let x = tape.constant_vector(vec![1.0, 2.0]);
        let s = tape.sum_all(x);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(x).is_none());
    }
}
