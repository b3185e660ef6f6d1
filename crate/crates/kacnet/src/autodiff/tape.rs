//! Reverse-mode automatic differentiation over a dynamically built tape.
//!
//! A [`Tape`] owns every tensor participating in one forward pass. Operations
//! append nodes in topological order and return [`TensorId`] handles;
//! [`Tape::backward`] walks the node list once in reverse, accumulating
//! gradients additively across fan-out. Tapes are rebuilt per training step
//! and are confined to a single thread.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// a[m,k] · b[k,n]
    MatMul { a: TensorId, b: TensorId },
    /// a[n,k] · b[m,k]ᵀ
    MatMulNt { a: TensorId, b: TensorId },
    /// w[m,n] · x[n]
    MatVec { w: TensorId, x: TensorId },
    /// x[n]ᵀ · m[n,c]
    VecMat { x: TensorId, m: TensorId },
    Add { a: TensorId, b: TensorId },
    /// mat[r,c] + v[c] broadcast over rows
    AddRow { m: TensorId, v: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    /// mat[r,c] ⊙ v[c] broadcast over rows
    MulRow { m: TensorId, v: TensorId },
    Scale { x: TensorId, c: f64 },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    Abs { x: TensorId },
    /// 0.5x² for |x|<1, |x|−0.5 otherwise, elementwise
    SmoothL1 { x: TensorId },
    Ln { x: TensorId },
    Softmax { x: TensorId, axis: usize },
    Sum { x: TensorId },
    Mean { x: TensorId },
    SumAxis { x: TensorId, axis: usize },
    ConcatVecs { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    /// v[d] tiled to [n,d]
    RepeatRow { v: TensorId },
    Row { m: TensorId, index: usize },
    SliceVec { x: TensorId, start: usize },
    SliceCols { m: TensorId, start: usize },
    Pick { x: TensorId, index: usize },
    Reshape { x: TensorId },
    BatchNorm {
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-batch statistics returned by the train-mode batch-norm primitive.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by tensor handle.
///
/// Every tensor that was registered with `requires_grad` has a buffer shaped
/// like its value; tensors unreachable from the loss keep all-zero buffers.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given tensor.
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf tensor. Parameters and differentiable inputs pass
    /// `requires_grad = true`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.input(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: TensorId) -> Result<f64> {
        self.nodes[id.0].value.scalar_value()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn want_rank(&self, op: &'static str, id: TensorId, rank: usize) -> Result<()> {
        if self.shape(id).len() != rank {
            return Err(Error::Dimension {
                op,
                detail: format!("expected rank-{} operand, got shape {:?}", rank, self.shape(id)),
            });
        }
        Ok(())
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_rank("matmul", a, 2)?;
        self.want_rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("inner dimensions differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul { a, b }, rg))
    }

    /// a · bᵀ for a[n,k], b[m,k]; the usual x·Wᵀ affine-layer product.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_rank("matmul_nt", a, 2)?;
        self.want_rank("matmul_nt", b, 2)?;
        let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (m, k2) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                detail: format!("inner dimensions differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data = matmul_nt_raw(self.data(a), self.data(b), n, k, m);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MatMulNt { a, b }, rg))
    }

    pub fn matvec(&mut self, w: TensorId, x: TensorId) -> Result<TensorId> {
        self.want_rank("matvec", w, 2)?;
        self.want_rank("matvec", x, 1)?;
        let (m, n) = (self.shape(w)[0], self.shape(w)[1]);
        if n != self.shape(x)[0] {
            return Err(Error::Dimension {
                op: "matvec",
                detail: format!("{:?} · {:?}", self.shape(w), self.shape(x)),
            });
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            out[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        let rg = self.any_grad(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec { w, x }, rg))
    }

    /// Row vector times matrix: x[n] · m[n,c] → [c].
    pub fn vecmat(&mut self, x: TensorId, m: TensorId) -> Result<TensorId> {
        self.want_rank("vecmat", x, 1)?;
        self.want_rank("vecmat", m, 2)?;
        let n = self.shape(x)[0];
        let (n2, c) = (self.shape(m)[0], self.shape(m)[1]);
        if n != n2 {
            return Err(Error::Dimension {
                op: "vecmat",
                detail: format!("{:?} · {:?}", self.shape(x), self.shape(m)),
            });
        }
        let xd = self.data(x);
        let md = self.data(m);
        let mut out = vec![0.0; c];
        for i in 0..n {
            let xi = xd[i];
            for j in 0..c {
                out[j] += xi * md[i * c + j];
            }
        }
        let rg = self.any_grad(&[x, m]);
        Ok(self.push(Tensor::vector(out), Op::VecMat { x, m }, rg))
    }

    // ── Elementwise arithmetic ──────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                detail: format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg))
    }

    /// mat[r,c] + v[c], broadcasting v over the rows of mat.
    pub fn add_row(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        self.broadcast_check("add_row", m, v)?;
        let c = self.shape(m)[1];
        let vd = self.data(v);
        let data: Vec<f64> = self
            .data(m)
            .iter()
            .enumerate()
            .map(|(i, x)| x + vd[i % c])
            .collect();
        let shape = self.shape(m).to_vec();
        let rg = self.any_grad(&[m, v]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow { m, v }, rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, rg))
    }

    /// mat[r,c] ⊙ v[c], broadcasting v over the rows of mat.
    pub fn mul_row(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        self.broadcast_check("mul_row", m, v)?;
        let c = self.shape(m)[1];
        let vd = self.data(v);
        let data: Vec<f64> = self
            .data(m)
            .iter()
            .enumerate()
            .map(|(i, x)| x * vd[i % c])
            .collect();
        let shape = self.shape(m).to_vec();
        let rg = self.any_grad(&[m, v]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulRow { m, v }, rg))
    }

    fn broadcast_check(&self, op: &'static str, m: TensorId, v: TensorId) -> Result<()> {
        self.want_rank(op, m, 2)?;
        self.want_rank(op, v, 1)?;
        if self.shape(m)[1] != self.shape(v)[0] {
            return Err(Error::Dimension {
                op,
                detail: format!("{:?} with row {:?}", self.shape(m), self.shape(v)),
            });
        }
        Ok(())
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            Tensor::new(shape, data).expect("scale preserves shape"),
            Op::Scale { x, c },
            rg,
        )
    }

    // ── Nonlinearities ──────────────────────────────────────────────

    fn unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Tensor::new(shape, data).expect("unary preserves shape"), op, rg)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::abs, Op::Abs { x })
    }

    pub fn smooth_l1(&mut self, x: TensorId) -> TensorId {
        self.unary(x, smooth_l1_scalar, Op::SmoothL1 { x })
    }

    pub fn ln(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::ln, Op::Ln { x })
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len().max(1) || shape.is_empty() {
            return Err(Error::Dimension {
                op: "softmax",
                detail: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        if shape[axis] == 0 {
            return Err(Error::Domain {
                op: "softmax",
                detail: format!("empty axis {} in shape {:?}", axis, shape),
            });
        }
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for_each_lane(&shape, axis, |lane| {
            let max = lane
                .iter()
                .map(|&i| xd[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &i in lane {
                let e = (xd[i] - max).exp();
                out[i] = e;
                denom += e;
            }
            for &i in lane {
                out[i] /= denom;
            }
        });
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.data(x).len();
        if n == 0 {
            return Err(Error::Domain {
                op: "mean",
                detail: "mean of empty tensor".into(),
            });
        }
        let s: f64 = self.data(x).iter().sum::<f64>() / n as f64;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Mean { x }, rg))
    }

    /// Sum a matrix along `axis` (0 → column sums, 1 → row sums).
    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.want_rank("sum_axis", x, 2)?;
        if axis > 1 {
            return Err(Error::Dimension {
                op: "sum_axis",
                detail: format!("axis {} out of range for rank-2 tensor", axis),
            });
        }
        let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
        let xd = self.data(x);
        let out = if axis == 1 {
            (0..r)
                .map(|i| xd[i * c..(i + 1) * c].iter().sum())
                .collect::<Vec<f64>>()
        } else {
            let mut acc = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    acc[j] += xd[i * c + j];
                }
            }
            acc
        };
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::vector(out), Op::SumAxis { x, axis }, rg))
    }

    // ── Shape and selection ─────────────────────────────────────────

    pub fn concat_vecs(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dimension {
                op: "concat_vecs",
                detail: "no operands".into(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            self.want_rank("concat_vecs", p, 1)?;
            data.extend_from_slice(self.data(p));
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::vector(data),
            Op::ConcatVecs {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dimension {
                op: "concat_cols",
                detail: "no operands".into(),
            });
        }
        let r = self.shape(parts[0])[0];
        let mut total_c = 0;
        for &p in parts {
            self.want_rank("concat_cols", p, 2)?;
            if self.shape(p)[0] != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    detail: format!("row counts differ: {} vs {:?}", r, self.shape(p)),
                });
            }
            total_c += self.shape(p)[1];
        }
        let mut data = vec![0.0; r * total_c];
        let mut offset = 0;
        for &p in parts {
            let c = self.shape(p)[1];
            let pd = self.data(p);
            for i in 0..r {
                data[i * total_c + offset..i * total_c + offset + c]
                    .copy_from_slice(&pd[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(vec![r, total_c], data)?,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Tile a vector into `n` identical rows.
    pub fn repeat_row(&mut self, v: TensorId, n: usize) -> Result<TensorId> {
        self.want_rank("repeat_row", v, 1)?;
        let d = self.shape(v)[0];
        let vd = self.data(v);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(vd);
        }
        let rg = self.nodes[v.0].requires_grad;
        Ok(self.push(Tensor::new(vec![n, d], data)?, Op::RepeatRow { v }, rg))
    }

    pub fn row(&mut self, m: TensorId, index: usize) -> Result<TensorId> {
        self.want_rank("row", m, 2)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        if index >= r {
            return Err(Error::Dimension {
                op: "row",
                detail: format!("row {} out of range for shape {:?}", index, self.shape(m)),
            });
        }
        let data = self.data(m)[index * c..(index + 1) * c].to_vec();
        let rg = self.nodes[m.0].requires_grad;
        Ok(self.push(Tensor::vector(data), Op::Row { m, index }, rg))
    }

    pub fn slice_vec(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        self.want_rank("slice_vec", x, 1)?;
        let d = self.shape(x)[0];
        if start + len > d {
            return Err(Error::Dimension {
                op: "slice_vec",
                detail: format!("[{}, {}) out of range for length {}", start, start + len, d),
            });
        }
        let data = self.data(x)[start..start + len].to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::vector(data), Op::SliceVec { x, start }, rg))
    }

    pub fn slice_cols(&mut self, m: TensorId, start: usize, len: usize) -> Result<TensorId> {
        self.want_rank("slice_cols", m, 2)?;
        let (r, c) = (self.shape(m)[0], self.shape(m)[1]);
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                detail: format!("cols [{}, {}) out of range for shape {:?}", start, start + len, self.shape(m)),
            });
        }
        let md = self.data(m);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&md[i * c + start..i * c + start + len]);
        }
        let rg = self.nodes[m.0].requires_grad;
        Ok(self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { m, start }, rg))
    }

    /// Select a single element by flat index, producing a scalar.
    pub fn pick(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        if index >= self.data(x).len() {
            return Err(Error::Dimension {
                op: "pick",
                detail: format!("index {} out of range for shape {:?}", index, self.shape(x)),
            });
        }
        let v = self.data(x)[index];
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }, rg))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::Dimension {
                op: "reshape",
                detail: format!("{:?} cannot reshape to {:?}", self.shape(x), shape),
            });
        }
        let data = self.data(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape { x }, rg))
    }

    // ── Batch normalization ─────────────────────────────────────────

    /// Train-mode batch norm over the rows of `x[r,c]`: normalize each column
    /// by its batch statistics, then scale and shift. Returns the normalized
    /// output and the biased batch statistics for running-average updates.
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        eps: f64,
    ) -> Result<(TensorId, BatchStats)> {
        self.bn_shape_check(x, scale, shift)?;
        let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
        let xd = self.data(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                mean[j] += xd[i * c + j];
            }
        }
        for m in &mut mean {
            *m /= r as f64;
        }
        for i in 0..r {
            for j in 0..c {
                let d = xd[i * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= r as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let id = self.bn_push(x, scale, shift, &mean, &inv_std)?;
        Ok((id, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm using fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<TensorId> {
        self.bn_shape_check(x, scale, shift)?;
        let c = self.shape(x)[1];
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dimension {
                op: "batch_norm",
                detail: format!(
                    "running statistics of length {}/{} for {} columns",
                    running_mean.len(),
                    running_var.len(),
                    c
                ),
            });
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_push(x, scale, shift, running_mean, &inv_std)
    }

    fn bn_shape_check(&self, x: TensorId, scale: TensorId, shift: TensorId) -> Result<()> {
        self.want_rank("batch_norm", x, 2)?;
        self.want_rank("batch_norm", scale, 1)?;
        self.want_rank("batch_norm", shift, 1)?;
        let c = self.shape(x)[1];
        if self.shape(scale)[0] != c || self.shape(shift)[0] != c {
            return Err(Error::Dimension {
                op: "batch_norm",
                detail: format!(
                    "scale {:?} / shift {:?} do not match {} columns",
                    self.shape(scale),
                    self.shape(shift),
                    c
                ),
            });
        }
        Ok(())
    }

    fn bn_push(
        &mut self,
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        mean: &[f64],
        inv_std: &[f64],
    ) -> Result<TensorId> {
        let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
        let xd = self.data(x);
        let mut x_hat = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                x_hat[i * c + j] = (xd[i * c + j] - mean[j]) * inv_std[j];
            }
        }
        let sd = self.data(scale);
        let bd = self.data(shift);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = x_hat[i * c + j] * sd[j] + bd[j];
            }
        }
        let rg = self.any_grad(&[x, scale, shift]);
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::BatchNorm {
                x,
                scale,
                shift,
                x_hat,
                inv_std: inv_std.to_vec(),
            },
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Each node is visited exactly once;
    /// gradients accumulate additively across fan-out.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    Some(vec![0.0; n.value.numel()])
                } else {
                    None
                }
            })
            .collect();
        if let Some(g) = grads[loss.0].as_mut() {
            g[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |id: TensorId| self.nodes[id.0].value.data();
        let shape = |id: TensorId| self.nodes[id.0].value.shape();
        macro_rules! accum {
            ($id:expr, $f:expr) => {
                if let Some(buf) = grads[$id.0].as_mut() {
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(buf);
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                accum!(a, |buf: &mut Vec<f64>| {
                    add_assign(buf, &matmul_nt_raw(g, val(*b), m, n, k))
                });
                accum!(b, |buf: &mut Vec<f64>| {
                    add_assign(buf, &matmul_tn_raw(val(*a), g, m, k, n))
                });
            }
            Op::MatMulNt { a, b } => {
                let (n, k) = (shape(*a)[0], shape(*a)[1]);
                let m = shape(*b)[0];
                accum!(a, |buf: &mut Vec<f64>| {
                    add_assign(buf, &matmul_raw(g, val(*b), n, m, k))
                });
                accum!(b, |buf: &mut Vec<f64>| {
                    add_assign(buf, &matmul_tn_raw(g, val(*a), n, m, k))
                });
            }
            Op::MatVec { w, x } => {
                let (m, n) = (shape(*w)[0], shape(*w)[1]);
                accum!(w, |buf: &mut Vec<f64>| {
                    let xd = val(*x);
                    for i in 0..m {
                        for j in 0..n {
                            buf[i * n + j] += g[i] * xd[j];
                        }
                    }
                });
                accum!(x, |buf: &mut Vec<f64>| {
                    let wd = val(*w);
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += wd[i * n + j] * g[i];
                        }
                    }
                });
            }
            Op::VecMat { x, m } => {
                let (n, c) = (shape(*m)[0], shape(*m)[1]);
                accum!(x, |buf: &mut Vec<f64>| {
                    let md = val(*m);
                    for i in 0..n {
                        buf[i] += md[i * c..(i + 1) * c]
                            .iter()
                            .zip(g)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
                accum!(m, |buf: &mut Vec<f64>| {
                    let xd = val(*x);
                    for i in 0..n {
                        for j in 0..c {
                            buf[i * c + j] += xd[i] * g[j];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                accum!(a, |buf: &mut Vec<f64>| add_assign(buf, g));
                accum!(b, |buf: &mut Vec<f64>| add_assign(buf, g));
            }
            Op::AddRow { m, v } => {
                let c = shape(*v)[0];
                accum!(m, |buf: &mut Vec<f64>| add_assign(buf, g));
                accum!(v, |buf: &mut Vec<f64>| {
                    for (i, gi) in g.iter().enumerate() {
                        buf[i % c] += gi;
                    }
                });
            }
            Op::Sub { a, b } => {
                accum!(a, |buf: &mut Vec<f64>| add_assign(buf, g));
                accum!(b, |buf: &mut Vec<f64>| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                });
            }
            Op::Mul { a, b } => {
                accum!(a, |buf: &mut Vec<f64>| {
                    for ((o, gi), bi) in buf.iter_mut().zip(g).zip(val(*b)) {
                        *o += gi * bi;
                    }
                });
                accum!(b, |buf: &mut Vec<f64>| {
                    for ((o, gi), ai) in buf.iter_mut().zip(g).zip(val(*a)) {
                        *o += gi * ai;
                    }
                });
            }
            Op::MulRow { m, v } => {
                let c = shape(*v)[0];
                accum!(m, |buf: &mut Vec<f64>| {
                    let vd = val(*v);
                    for (i, (o, gi)) in buf.iter_mut().zip(g).enumerate() {
                        *o += gi * vd[i % c];
                    }
                });
                accum!(v, |buf: &mut Vec<f64>| {
                    let md = val(*m);
                    for (i, gi) in g.iter().enumerate() {
                        buf[i % c] += gi * md[i];
                    }
                });
            }
            Op::Scale { x, c } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi * c;
                    }
                });
            }
            Op::Relu { x } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(val(*x)) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let out = node.value.data();
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), si) in buf.iter_mut().zip(g).zip(out) {
                        *o += gi * si * (1.0 - si);
                    }
                });
            }
            Op::Tanh { x } => {
                let out = node.value.data();
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), ti) in buf.iter_mut().zip(g).zip(out) {
                        *o += gi * (1.0 - ti * ti);
                    }
                });
            }
            Op::Abs { x } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(val(*x)) {
                        *o += gi * sign_zero(*xi);
                    }
                });
            }
            Op::SmoothL1 { x } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(val(*x)) {
                        let d = if xi.abs() < 1.0 { *xi } else { sign_zero(*xi) };
                        *o += gi * d;
                    }
                });
            }
            Op::Ln { x } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(val(*x)) {
                        *o += gi / xi;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let s = node.value.data();
                let shp = node.value.shape().to_vec();
                accum!(x, |buf: &mut Vec<f64>| {
                    for_each_lane(&shp, *axis, |lane| {
                        let dot: f64 = lane.iter().map(|&i| g[i] * s[i]).sum();
                        for &i in lane {
                            buf[i] += s[i] * (g[i] - dot);
                        }
                    });
                });
            }
            Op::Sum { x } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::Mean { x } => {
                let n = val(*x).len() as f64;
                accum!(x, |buf: &mut Vec<f64>| {
                    for o in buf.iter_mut() {
                        *o += g[0] / n;
                    }
                });
            }
            Op::SumAxis { x, axis } => {
                let (r, c) = (shape(*x)[0], shape(*x)[1]);
                accum!(x, |buf: &mut Vec<f64>| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += if *axis == 1 { g[i] } else { g[j] };
                        }
                    }
                });
            }
            Op::ConcatVecs { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = shape(p)[0];
                    accum!(p, |buf: &mut Vec<f64>| {
                        add_assign(buf, &g[offset..offset + len])
                    });
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let r = node.value.shape()[0];
                let total_c = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let c = shape(p)[1];
                    accum!(p, |buf: &mut Vec<f64>| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[i * total_c + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::RepeatRow { v } => {
                let d = shape(*v)[0];
                accum!(v, |buf: &mut Vec<f64>| {
                    for (i, gi) in g.iter().enumerate() {
                        buf[i % d] += gi;
                    }
                });
            }
            Op::Row { m, index } => {
                let c = shape(*m)[1];
                accum!(m, |buf: &mut Vec<f64>| {
                    add_assign(&mut buf[index * c..(index + 1) * c], g)
                });
            }
            Op::SliceVec { x, start } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    add_assign(&mut buf[*start..start + g.len()], g)
                });
            }
            Op::SliceCols { m, start } => {
                let c = shape(*m)[1];
                let len = node.value.shape()[1];
                let r = node.value.shape()[0];
                accum!(m, |buf: &mut Vec<f64>| {
                    for i in 0..r {
                        for j in 0..len {
                            buf[i * c + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::Pick { x, index } => {
                accum!(x, |buf: &mut Vec<f64>| {
                    buf[*index] += g[0];
                });
            }
            Op::Reshape { x } => {
                accum!(x, |buf: &mut Vec<f64>| add_assign(buf, g));
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                x_hat,
                inv_std,
            } => {
                let (r, c) = (shape(*x)[0], shape(*x)[1]);
                let sd = val(*scale);
                let mut col_g = vec![0.0; c];
                let mut col_gx = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        col_g[j] += g[i * c + j];
                        col_gx[j] += g[i * c + j] * x_hat[i * c + j];
                    }
                }
                accum!(x, |buf: &mut Vec<f64>| {
                    let n = r as f64;
                    for i in 0..r {
                        for j in 0..c {
                            let idx = i * c + j;
                            buf[idx] += sd[j] * inv_std[j] / n
                                * (n * g[idx] - col_g[j] - x_hat[idx] * col_gx[j]);
                        }
                    }
                });
                accum!(scale, |buf: &mut Vec<f64>| add_assign(buf, &col_gx));
                accum!(shift, |buf: &mut Vec<f64>| add_assign(buf, &col_g));
            }
        }
    }
}

/// Piecewise smooth L1: 0.5x² for |x| < 1, |x| − 0.5 otherwise.
pub fn smooth_l1_scalar(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn sign_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_assign(out: &mut [f64], delta: &[f64]) {
    for (o, d) in out.iter_mut().zip(delta) {
        *o += d;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    out
}

/// x[r1,c] · y[r2,c]ᵀ → [r1,r2]
fn matmul_nt_raw(x: &[f64], y: &[f64], r1: usize, c: usize, r2: usize) -> Vec<f64> {
    let mut out = vec![0.0; r1 * r2];
    for i in 0..r1 {
        let xi = &x[i * c..(i + 1) * c];
        for j in 0..r2 {
            let yj = &y[j * c..(j + 1) * c];
            out[i * r2 + j] = xi.iter().zip(yj).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// x[r,c1]ᵀ · y[r,c2] → [c1,c2]
fn matmul_tn_raw(x: &[f64], y: &[f64], r: usize, c1: usize, c2: usize) -> Vec<f64> {
    let mut out = vec![0.0; c1 * c2];
    for i in 0..r {
        for p in 0..c1 {
            let xip = x[i * c1 + p];
            if xip == 0.0 {
                continue;
            }
            for j in 0..c2 {
                out[p * c2 + j] += xip * y[i * c2 + j];
            }
        }
    }
    out
}

/// Visit every 1-D lane of `shape` along `axis`, passing flat indices.
/// Supports rank 1 and rank 2, which is all the model needs.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    match shape.len() {
        1 => {
            let lane: Vec<usize> = (0..shape[0]).collect();
            f(&lane);
        }
        2 => {
            let (r, c) = (shape[0], shape[1]);
            if axis == 1 {
                for i in 0..r {
                    let lane: Vec<usize> = (i * c..(i + 1) * c).collect();
                    f(&lane);
                }
            } else {
                for j in 0..c {
                    let lane: Vec<usize> = (0..r).map(|i| i * c + j).collect();
                    f(&lane);
                }
            }
        }
        n => panic!("softmax lanes only defined for rank 1 and 2, got rank {}", n),
    }
}
