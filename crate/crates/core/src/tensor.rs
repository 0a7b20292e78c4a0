//! Dense `f64` tensors and tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes and return lightweight [`TensorRef`] handles; calling
//! [`Tape::backward`] on a scalar output walks the tape once in reverse and
//! accumulates gradients additively, so values used several times receive
//! the sum of their downstream contributions.
//!
//! A tape is confined to one logical thread; independent tapes can run in
//! parallel. The tape also counts multiply-accumulate operations performed
//! by `matmul` and `conv2d` during the forward pass, which is what the cost
//! profiler reads back.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("backward requires a scalar output, found shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("tensor handle belongs to a different tape")]
    DetachedTensor,
}

/// Plain tensor value: row-major data plus shape. Used for parameters,
/// constants and anything living outside a tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape does not match data length"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Row vector of shape `[1, n]`.
    pub fn row(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    /// Uniform init in `[-limit, limit)` with `limit = sqrt(1 / fan_in)`.
    pub fn uniform_init<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
        let limit = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        Tensor { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to one value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef {
    tape_id: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    PowConst(usize, f64),
    Relu(usize),
    Log(usize),
    Matmul(usize, usize),
    Transpose(usize),
    AddBias(usize, usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    Mean(usize),
    MeanRows(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Reshape(usize),
    EmbeddingLookup {
        table: usize,
        indices: Vec<usize>,
    },
    ScatterSumRows {
        x: usize,
        dst: Vec<usize>,
    },
    Conv2d {
        input: usize,
        kernels: usize,
        stride: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Records one forward computation for later differentiation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    macs: u64,
}

/// Gradients of one scalar output with respect to every tracked node.
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `r`, if `r` required one.
    pub fn get(&self, r: TensorRef) -> Option<&[f64]> {
        if r.tape_id != self.tape_id {
            return None;
        }
        self.grads[r.index].as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            macs: 0,
        }
    }

    /// Multiply-accumulate operations executed so far by `matmul` and
    /// `conv2d` on this tape.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a constant that will not receive a gradient.
    pub fn constant(&mut self, t: &Tensor) -> TensorRef {
        self.push(t.shape.clone(), t.data.clone(), false, Op::Leaf)
    }

    /// Adds a tracked leaf; `backward` reports its gradient.
    pub fn param(&mut self, t: &Tensor) -> TensorRef {
        self.push(t.shape.clone(), t.data.clone(), true, Op::Leaf)
    }

    pub fn shape(&self, r: TensorRef) -> &[usize] {
        &self.nodes[r.index].shape
    }

    pub fn data(&self, r: TensorRef) -> &[f64] {
        &self.nodes[r.index].data
    }

    pub fn to_tensor(&self, r: TensorRef) -> Tensor {
        Tensor {
            shape: self.nodes[r.index].shape.clone(),
            data: self.nodes[r.index].data.clone(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorRef {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        TensorRef {
            tape_id: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, r: TensorRef) -> Result<usize, TensorError> {
        if r.tape_id != self.id || r.index >= self.nodes.len() {
            return Err(TensorError::DetachedTensor);
        }
        Ok(r.index)
    }

    fn needs_grad(&self, indices: &[usize]) -> bool {
        indices.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                expected: self.nodes[ia].shape.clone(),
                found: self.nodes[ib].shape.clone(),
            });
        }
        let data = self.nodes[ia]
            .data
            .iter()
            .zip(&self.nodes[ib].data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs_grad(&[ia, ib]);
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(TensorError::ShapeMismatch {
                op: "sub",
                expected: self.nodes[ia].shape.clone(),
                found: self.nodes[ib].shape.clone(),
            });
        }
        let data = self.nodes[ia]
            .data
            .iter()
            .zip(&self.nodes[ib].data)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.needs_grad(&[ia, ib]);
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Sub(ia, ib)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                expected: self.nodes[ia].shape.clone(),
                found: self.nodes[ib].shape.clone(),
            });
        }
        let data = self.nodes[ia]
            .data
            .iter()
            .zip(&self.nodes[ib].data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs_grad(&[ia, ib]);
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: TensorRef, c: f64) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let data = self.nodes[ia].data.iter().map(|x| x * c).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Scale(ia, c)))
    }

    pub fn add_scalar(&mut self, a: TensorRef, c: f64) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let data = self.nodes[ia].data.iter().map(|x| x + c).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::AddScalar(ia)))
    }

    /// Elementwise power with a constant exponent. Callers keep the base
    /// positive where the exponent is fractional.
    pub fn pow_const(&mut self, a: TensorRef, p: f64) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let data = self.nodes[ia].data.iter().map(|x| x.powf(p)).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::PowConst(ia, p)))
    }

    /// The subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let data = self.nodes[ia].data.iter().map(|x| x.max(0.0)).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Relu(ia)))
    }

    pub fn log(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let data = self.nodes[ia].data.iter().map(|x| x.ln()).collect();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(self.nodes[ia].shape.clone(), data, rg, Op::Log(ia)))
    }

    // ---- linear algebra ----

    /// `[m, k] x [k, n] -> [m, n]`. Counts `m * k * n` toward the MAC total.
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: sa.clone(),
                found: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[ia].data, &self.nodes[ib].data, &mut out, m, k, n);
        self.macs += (m * k * n) as u64;
        let rg = self.needs_grad(&[ia, ib]);
        Ok(self.push(vec![m, n], out, rg, Op::Matmul(ia, ib)))
    }

    pub fn transpose(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let s = &self.nodes[ia].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                expected: vec![0, 0],
                found: s.clone(),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = &self.nodes[ia].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(ia)))
    }

    /// Adds a length-`n` bias vector to every row of an `[m, n]` matrix; the
    /// single broadcast this engine supports.
    pub fn add_bias(&mut self, x: TensorRef, bias: TensorRef) -> Result<TensorRef, TensorError> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let sx = &self.nodes[ix].shape;
        let sb = &self.nodes[ib].shape;
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                expected: sx.clone(),
                found: sb.clone(),
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let mut out = self.nodes[ix].data.clone();
        for r in 0..m {
            for c in 0..n {
                out[r * n + c] += self.nodes[ib].data[c];
            }
        }
        let rg = self.needs_grad(&[ix, ib]);
        Ok(self.push(vec![m, n], out, rg, Op::AddBias(ix, ib)))
    }

    // ---- shape handling ----

    pub fn reshape(&mut self, a: TensorRef, shape: Vec<usize>) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        if shape.iter().product::<usize>() != self.nodes[ia].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                expected: self.nodes[ia].shape.clone(),
                found: shape,
            });
        }
        let data = self.nodes[ia].data.clone();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(shape, data, rg, Op::Reshape(ia)))
    }

    /// Concatenates 1D tensors, or 2D tensors along `axis` 0 or 1.
    pub fn concat(&mut self, parts: &[TensorRef], axis: usize) -> Result<TensorRef, TensorError> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let idx: Vec<usize> = parts
            .iter()
            .map(|&r| self.check(r))
            .collect::<Result<_, _>>()?;
        let first = self.nodes[idx[0]].shape.clone();
        let rank = first.len();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                expected: first,
                found: vec![axis],
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &i in &idx {
            let s = &self.nodes[i].shape;
            let mut expect = s.clone();
            if s.len() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: first,
                    found: s.clone(),
                });
            }
            expect[axis] = first[axis];
            let mut base = first.clone();
            base[axis] = s[axis];
            if expect != first && base != *s {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    expected: first,
                    found: s.clone(),
                });
            }
            // Non-axis dims must agree.
            for d in 0..rank {
                if d != axis && s[d] != first[d] {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        expected: first,
                        found: s.clone(),
                    });
                }
            }
            out_shape[axis] += s[axis];
        }

        let data = if rank == 1 || axis == 0 {
            let mut data = Vec::new();
            for &i in &idx {
                data.extend_from_slice(&self.nodes[i].data);
            }
            data
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * out_shape[1]);
            for r in 0..rows {
                for &i in &idx {
                    let cols = self.nodes[i].shape[1];
                    data.extend_from_slice(&self.nodes[i].data[r * cols..(r + 1) * cols]);
                }
            }
            data
        };
        let rg = self.needs_grad(&idx);
        Ok(self.push(out_shape, data, rg, Op::Concat { parts: idx, axis }))
    }

    pub fn slice_rows(
        &mut self,
        x: TensorRef,
        start: usize,
        len: usize,
    ) -> Result<TensorRef, TensorError> {
        let ix = self.check(x)?;
        let s = &self.nodes[ix].shape;
        if s.len() != 2 || start + len > s[0] {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                expected: s.clone(),
                found: vec![start, len],
            });
        }
        let n = s[1];
        let data = self.nodes[ix].data[start * n..(start + len) * n].to_vec();
        let rg = self.nodes[ix].requires_grad;
        Ok(self.push(vec![len, n], data, rg, Op::SliceRows { x: ix, start }))
    }

    pub fn slice_cols(
        &mut self,
        x: TensorRef,
        start: usize,
        len: usize,
    ) -> Result<TensorRef, TensorError> {
        let ix = self.check(x)?;
        let s = &self.nodes[ix].shape;
        if s.len() != 2 || start + len > s[1] {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                expected: s.clone(),
                found: vec![start, len],
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = &self.nodes[ix].data;
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.nodes[ix].requires_grad;
        Ok(self.push(vec![m, len], data, rg, Op::SliceCols { x: ix, start }))
    }

    // ---- reductions and normalization ----

    /// Mean over all elements, as a `[1]` scalar.
    pub fn mean(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let n = self.nodes[ia].data.len();
        if n == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mean",
                expected: vec![1],
                found: self.nodes[ia].shape.clone(),
            });
        }
        let v = self.nodes[ia].data.iter().sum::<f64>() / n as f64;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(vec![1], vec![v], rg, Op::Mean(ia)))
    }

    /// Column means of an `[m, n]` matrix, as `[1, n]`.
    pub fn mean_rows(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let s = &self.nodes[ia].shape;
        if s.len() != 2 || s[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mean_rows",
                expected: vec![1, 0],
                found: s.clone(),
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = &self.nodes[ia].data;
        let mut out = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                out[c] += src[r * n + c];
            }
        }
        for v in out.iter_mut() {
            *v /= m as f64;
        }
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(vec![1, n], out, rg, Op::MeanRows(ia)))
    }

    /// Softmax along the last axis of a 1D or 2D tensor, with max-shift for
    /// numerical stability.
    pub fn softmax(&mut self, a: TensorRef) -> Result<TensorRef, TensorError> {
        let ia = self.check(a)?;
        let s = &self.nodes[ia].shape;
        if s.is_empty() || s.len() > 2 || *s.last().unwrap() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                expected: vec![0],
                found: s.clone(),
            });
        }
        let n = *s.last().unwrap();
        let rows = self.nodes[ia].data.len() / n;
        let src = &self.nodes[ia].data;
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (x - max).exp();
                total += *o;
            }
            for o in out[r * n..(r + 1) * n].iter_mut() {
                *o /= total;
            }
        }
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(s.clone(), out, rg, Op::Softmax(ia)))
    }

    /// Normalizes the last axis to zero mean and unit variance
    /// (eps 1e-5), then applies the `gamma`/`beta` affine pair.
    pub fn layer_norm(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
    ) -> Result<TensorRef, TensorError> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let s = self.nodes[ix].shape.clone();
        if s.is_empty() || s.len() > 2 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                expected: vec![0],
                found: s,
            });
        }
        let n = *s.last().unwrap();
        for &i in &[ig, ib] {
            if self.nodes[i].shape != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    expected: vec![n],
                    found: self.nodes[i].shape.clone(),
                });
            }
        }
        let rows = self.nodes[ix].data.len() / n;
        let mut out = vec![0.0; self.nodes[ix].data.len()];
        for r in 0..rows {
            let row = &self.nodes[ix].data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..n {
                let xhat = (row[c] - mean) * inv_std;
                out[r * n + c] = self.nodes[ig].data[c] * xhat + self.nodes[ib].data[c];
            }
        }
        let rg = self.needs_grad(&[ix, ig, ib]);
        Ok(self.push(
            s,
            out,
            rg,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
            },
        ))
    }

    // ---- gather / scatter ----

    /// Gathers rows of `table` (`[v, d]`) at `indices`, giving
    /// `[indices.len(), d]`. Gradients scatter-add back into the table.
    pub fn embedding_lookup(
        &mut self,
        table: TensorRef,
        indices: &[usize],
    ) -> Result<TensorRef, TensorError> {
        let it = self.check(table)?;
        let s = &self.nodes[it].shape;
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "embedding_lookup",
                expected: vec![0, 0],
                found: s.clone(),
            });
        }
        let (v, d) = (s[0], s[1]);
        assert!(
            indices.iter().all(|&i| i < v),
            "embedding index out of range"
        );
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.nodes[it].data[i * d..(i + 1) * d]);
        }
        let rg = self.nodes[it].requires_grad;
        Ok(self.push(
            vec![indices.len(), d],
            data,
            rg,
            Op::EmbeddingLookup {
                table: it,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Sums rows of `x` (`[e, d]`) into `n_rows` destination rows:
    /// `out[dst[i]] += x[i]`. The reverse of a row gather.
    pub fn scatter_sum_rows(
        &mut self,
        x: TensorRef,
        dst: &[usize],
        n_rows: usize,
    ) -> Result<TensorRef, TensorError> {
        let ix = self.check(x)?;
        let s = &self.nodes[ix].shape;
        if s.len() != 2 || s[0] != dst.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_sum_rows",
                expected: vec![dst.len(), 0],
                found: s.clone(),
            });
        }
        let d = s[1];
        assert!(dst.iter().all(|&i| i < n_rows), "scatter row out of range");
        let mut out = vec![0.0; n_rows * d];
        for (i, &row) in dst.iter().enumerate() {
            for c in 0..d {
                out[row * d + c] += self.nodes[ix].data[i * d + c];
            }
        }
        let rg = self.nodes[ix].requires_grad;
        Ok(self.push(
            vec![n_rows, d],
            out,
            rg,
            Op::ScatterSumRows {
                x: ix,
                dst: dst.to_vec(),
            },
        ))
    }

    // ---- convolution ----

    /// Valid-padding 2D convolution of `[c_in, h, w]` with kernels
    /// `[c_out, c_in, kh, kw]` at `stride`, no bias. Counts
    /// `c_out * c_in * kh * kw * h' * w'` MACs.
    pub fn conv2d(
        &mut self,
        input: TensorRef,
        kernels: TensorRef,
        stride: usize,
    ) -> Result<TensorRef, TensorError> {
        assert!(stride > 0, "stride must be positive");
        let (ii, ik) = (self.check(input)?, self.check(kernels)?);
        let si = self.nodes[ii].shape.clone();
        let sk = self.nodes[ik].shape.clone();
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] > si[1] || sk[3] > si[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: si,
                found: sk,
            });
        }
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, _, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let x = &self.nodes[ii].data;
        let k = &self.nodes[ik].data;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            let xrow = &x[ci * h * w + iy * w + ox * stride..];
                            let krow = &k[co * c_in * kh * kw + ci * kh * kw + ky * kw..];
                            for kx in 0..kw {
                                acc += xrow[kx] * krow[kx];
                            }
                        }
                    }
                    out[co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        self.macs += (c_out * c_in * kh * kw * oh * ow) as u64;
        let rg = self.needs_grad(&[ii, ik]);
        Ok(self.push(
            vec![c_out, oh, ow],
            out,
            rg,
            Op::Conv2d {
                input: ii,
                kernels: ik,
                stride,
            },
        ))
    }

    // ---- differentiation ----

    /// Accumulates gradients of the scalar `output` into every tracked
    /// ancestor. Fan-out sums: a value consumed twice receives both
    /// contributions.
    pub fn backward(&self, output: TensorRef) -> Result<Gradients, TensorError> {
        let io = self.check(output)?;
        if self.nodes[io].data.len() != 1 {
            return Err(TensorError::NonScalarOutput(self.nodes[io].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[io] = Some(vec![1.0]);

        for i in (0..=io).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        // Only leaves keep their gradients visible; interior values are an
        // implementation detail but harmless to expose.
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, update: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let slot = grads[target].get_or_insert_with(|| vec![0.0; self.nodes[target].data.len()]);
        for (s, u) in slot.iter_mut().zip(update) {
            *s += u;
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[*b].data)
                    .map(|(gv, bv)| gv * bv)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[*a].data)
                    .map(|(gv, av)| gv * av)
                    .collect();
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::PowConst(a, p) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[*a].data)
                    .map(|(gv, x)| gv * p * x.powf(p - 1.0))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[*a].data)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[*a].data)
                    .map(|(gv, x)| gv / x)
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                if self.nodes[*a].requires_grad {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    let bd = &self.nodes[*b].data;
                    for r in 0..m {
                        for c in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[r * n + j] * bd[c * n + j];
                            }
                            da[r * k + c] = acc;
                        }
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    let ad = &self.nodes[*a].data;
                    for r in 0..m {
                        for c in 0..k {
                            let av = ad[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[c * n + j] += av * g[r * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[c * n + r] = g[r * m + c];
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g);
                if self.nodes[*b].requires_grad {
                    let n = self.nodes[*b].data.len();
                    let mut db = vec![0.0; n];
                    for (idx, gv) in g.iter().enumerate() {
                        db[idx % n] += gv;
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Softmax(a) => {
                let n = *self.nodes[i].shape.last().unwrap();
                let rows = g.len() / n;
                let s = &self.nodes[i].data;
                let mut da = vec![0.0; g.len()];
                for r in 0..rows {
                    let dot: f64 = (0..n).map(|c| g[r * n + c] * s[r * n + c]).sum();
                    for c in 0..n {
                        da[r * n + c] = s[r * n + c] * (g[r * n + c] - dot);
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let n = *self.nodes[i].shape.last().unwrap();
                let rows = g.len() / n;
                let xd = &self.nodes[*x].data;
                let gd = &self.nodes[*gamma].data;
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..rows {
                    let row = &xd[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let d: Vec<f64> = (0..n).map(|c| g[r * n + c] * gd[c]).collect();
                    let d_mean = d.iter().sum::<f64>() / n as f64;
                    let dxhat_mean = d.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        dx[r * n + c] = (d[c] - d_mean - xhat[c] * dxhat_mean) * inv_std;
                        dgamma[c] += g[r * n + c] * xhat[c];
                        dbeta[c] += g[r * n + c];
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dgamma);
                self.accumulate(grads, *beta, &dbeta);
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].data.len();
                let da = vec![g[0] / n as f64; n];
                self.accumulate(grads, *a, &da);
            }
            Op::MeanRows(a) => {
                let (m, n) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] = g[c] / m as f64;
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::Concat { parts, axis } => {
                if self.nodes[i].shape.len() == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].data.len();
                        self.accumulate(grads, p, &g[offset..offset + len]);
                        offset += len;
                    }
                } else {
                    let rows = self.nodes[i].shape[0];
                    let total_cols = self.nodes[i].shape[1];
                    let mut col_offset = 0;
                    for &p in parts {
                        let cols = self.nodes[p].shape[1];
                        if self.nodes[p].requires_grad {
                            let mut dp = vec![0.0; rows * cols];
                            for r in 0..rows {
                                dp[r * cols..(r + 1) * cols].copy_from_slice(
                                    &g[r * total_cols + col_offset
                                        ..r * total_cols + col_offset + cols],
                                );
                            }
                            self.accumulate(grads, p, &dp);
                        }
                        col_offset += cols;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (m, n) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let mut dx = vec![0.0; m * n];
                dx[start * n..start * n + g.len()].copy_from_slice(g);
                self.accumulate(grads, *x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (m, n) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let len = self.nodes[i].shape[1];
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..len {
                        dx[r * n + start + c] = g[r * len + c];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g),
            Op::EmbeddingLookup { table, indices } => {
                if self.nodes[*table].requires_grad {
                    let d = self.nodes[*table].shape[1];
                    let mut dt = vec![0.0; self.nodes[*table].data.len()];
                    for (row, &idx) in indices.iter().enumerate() {
                        for c in 0..d {
                            dt[idx * d + c] += g[row * d + c];
                        }
                    }
                    self.accumulate(grads, *table, &dt);
                }
            }
            Op::ScatterSumRows { x, dst } => {
                let d = self.nodes[*x].shape[1];
                let mut dx = vec![0.0; self.nodes[*x].data.len()];
                for (row, &target) in dst.iter().enumerate() {
                    dx[row * d..(row + 1) * d].copy_from_slice(&g[target * d..(target + 1) * d]);
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
            } => {
                let si = &self.nodes[*input].shape;
                let sk = &self.nodes[*kernels].shape;
                let (c_in, h, w) = (si[0], si[1], si[2]);
                let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
                let oh = (h - kh) / stride + 1;
                let ow = (w - kw) / stride + 1;
                let x = &self.nodes[*input].data;
                let k = &self.nodes[*kernels].data;
                let mut dx = vec![0.0; x.len()];
                let mut dk = vec![0.0; k.len()];
                for co in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[co * oh * ow + oy * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            for ci in 0..c_in {
                                for ky in 0..kh {
                                    let iy = oy * stride + ky;
                                    for kx in 0..kw {
                                        let ix = ox * stride + kx;
                                        let xi = ci * h * w + iy * w + ix;
                                        let ki = co * c_in * kh * kw + ci * kh * kw + ky * kw + kx;
                                        dx[xi] += gv * k[ki];
                                        dk[ki] += gv * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, &dx);
                self.accumulate(grads, *kernels, &dk);
            }
        }
    }
}

/// `out += a x b` for row-major matrices, cache-friendly i-k-j order.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}
