use std::sync::Arc;

use super::tape::{record, OpKind};
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
}

/// Dispatches an elementwise op; binary ops require `b`, unary ops reject it.
pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let binary = matches!(
        op,
        ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul
    );
    match (binary, b) {
        (true, Some(b)) => match op {
            ElementwiseOp::Add => a.add(b),
            ElementwiseOp::Sub => a.sub(b),
            _ => a.mul(b),
        },
        (false, None) => match op {
            ElementwiseOp::Sigmoid => a.sigmoid(),
            ElementwiseOp::Tanh => a.tanh(),
            _ => a.relu(),
        },
        (true, None) => Err(TensorError::InvalidArgument {
            op: "elementwise",
            msg: format!("{op:?} needs two operands"),
        }),
        (false, Some(_)) => Err(TensorError::InvalidArgument {
            op: "elementwise",
            msg: format!("{op:?} takes one operand"),
        }),
    }
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Broadcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Broadcast::Same, a.shape().to_vec()))
    } else if b.is_scalar() {
        Ok((Broadcast::RhsScalar, a.shape().to_vec()))
    } else if a.is_scalar() {
        Ok((Broadcast::LhsScalar, b.shape().to_vec()))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(mode: Broadcast, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match mode {
        Broadcast::Same => a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect(),
        Broadcast::RhsScalar => a.iter().map(|x| f(*x, b[0])).collect(),
        Broadcast::LhsScalar => b.iter().map(|y| f(a[0], *y)).collect(),
    }
}

/// Reduces a full-size gradient back onto a (possibly scalar) operand.
fn reduce_to(grad: Vec<f64>, scalar: bool) -> Vec<f64> {
    if scalar {
        vec![grad.iter().sum()]
    } else {
        grad
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (mode, shape) = broadcast("add", self, other)?;
        let data = zip_broadcast(mode, self.data(), other.data(), |x, y| x + y);
        let (ls, rs) = (
            self.is_scalar() && !other.is_scalar(),
            other.is_scalar() && !self.is_scalar(),
        );
        record(OpKind::Add, &[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g.to_vec(), ls)),
                needs[1].then(|| reduce_to(g.to_vec(), rs)),
            ]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (mode, shape) = broadcast("sub", self, other)?;
        let data = zip_broadcast(mode, self.data(), other.data(), |x, y| x - y);
        let (ls, rs) = (
            self.is_scalar() && !other.is_scalar(),
            other.is_scalar() && !self.is_scalar(),
        );
        record(OpKind::Sub, &[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| reduce_to(g.to_vec(), ls)),
                needs[1].then(|| reduce_to(g.iter().map(|v| -v).collect(), rs)),
            ]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (mode, shape) = broadcast("mul", self, other)?;
        let data = zip_broadcast(mode, self.data(), other.data(), |x, y| x * y);
        let (ls, rs) = (
            self.is_scalar() && !other.is_scalar(),
            other.is_scalar() && !self.is_scalar(),
        );
        let a = self.data.clone();
        let b = other.data.clone();
        record(OpKind::Mul, &[self, other], shape, data, move |g, needs| {
            let times = |other: &[f64]| -> Vec<f64> {
                if other.len() == 1 {
                    g.iter().map(|g| g * other[0]).collect()
                } else {
                    g.iter().zip(other).map(|(g, v)| g * v).collect()
                }
            };
            vec![
                needs[0].then(|| reduce_to(times(&b), ls)),
                needs[1].then(|| reduce_to(times(&a), rs)),
            ]
        })
    }

    pub fn mul_scalar(&self, k: f64) -> Result<Tensor> {
        self.mul(&Tensor::scalar(k))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let y: Vec<f64> = self.data().iter().map(|&x| sigmoid(x)).collect();
        let saved = Arc::new(y.clone());
        record(
            OpKind::Sigmoid,
            &[self],
            self.shape().to_vec(),
            y,
            move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(saved.iter())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect(),
                )]
            },
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let y: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        let saved = Arc::new(y.clone());
        record(
            OpKind::Tanh,
            &[self],
            self.shape().to_vec(),
            y,
            move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(saved.iter())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect(),
                )]
            },
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let y: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let x = self.data.clone();
        record(
            OpKind::Relu,
            &[self],
            self.shape().to_vec(),
            y,
            move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            },
        )
    }

    /// Matrix product of `M×K` and `K×N` tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        let a = self.data.clone();
        let b = other.data.clone();
        record(
            OpKind::MatMul,
            &[self, other],
            vec![m, n],
            data,
            move |g, needs| {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let ga = needs[0].then(|| {
                    let mut out = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    out
                });
                let gb = needs[1].then(|| {
                    let mut out = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = a[i * k + p];
                            let orow = &mut out[p * n..(p + 1) * n];
                            orow.iter_mut().zip(grow).for_each(|(o, g)| *o += av * g);
                        }
                    }
                    out
                });
                vec![ga, gb]
            },
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        record(
            OpKind::Sum,
            &[self],
            Vec::new(),
            vec![total],
            move |g, _| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        record(
            OpKind::Mean,
            &[self],
            Vec::new(),
            vec![total / n as f64],
            move |g, _| vec![Some(vec![g[0] / n as f64; n])],
        )
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        if self.node.is_none() {
            return Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()));
        }
        record(
            OpKind::Reshape,
            &[self],
            shape.to_vec(),
            self.to_vec(),
            |g, _| vec![Some(g.to_vec())],
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("slice", self.shape(), axis)?;
        let dim = self.shape()[axis];
        if len == 0 || start + len > dim {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!(
                    "range {start}..{} out of bounds for axis {axis} of {:?}",
                    start + len,
                    self.shape()
                ),
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let total = self.numel();
        record(OpKind::Slice, &[self], shape, data, move |g, _| {
            let mut out = vec![0.0; total];
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                out[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(out)]
        })
    }

    /// Entry `index` of the leading axis, with that axis removed.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        if self.ndim() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "select",
                msg: "cannot index a scalar".into(),
            });
        }
        let s = self.slice(0, index, 1)?;
        let rest = self.shape()[1..].to_vec();
        s.reshape(&rest)
    }

    /// Splits along `axis` into consecutive parts of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        check_axis("split", self.shape(), axis)?;
        if sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "split",
                msg: format!(
                    "sizes {sizes:?} do not sum to axis {axis} of {:?}",
                    self.shape()
                ),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.slice(axis, start, len);
                start += len;
                part
            })
            .collect()
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(tensors: &[Tensor]) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::InvalidArgument {
                op: "stack",
                msg: "no tensors".into(),
            })?;
        let mut shape = vec![1];
        shape.extend_from_slice(first.shape());
        let parts = tensors
            .iter()
            .map(|t| {
                if t.shape() != first.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "stack",
                        lhs: first.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                t.reshape(&shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&parts, 0)
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::InvalidArgument {
                op: "concat",
                msg: "no tensors".into(),
            })?;
        check_axis("concat", first.shape(), axis)?;
        for t in &tensors[1..] {
            let compatible = t.ndim() == first.ndim()
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (t, &len) in tensors.iter().zip(&lens) {
                let chunk = len * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_len;
        let refs: Vec<&Tensor> = tensors.iter().collect();
        record(OpKind::Concat, &refs, shape, data, move |g, needs| {
            let mut out: Vec<Option<Vec<f64>>> = needs
                .iter()
                .zip(&lens)
                .map(|(&need, &len)| need.then(|| Vec::with_capacity(outer * len * inner)))
                .collect();
            let row = total_len * inner;
            for o in 0..outer {
                let mut offset = o * row;
                for (slot, &len) in out.iter_mut().zip(&lens) {
                    let chunk = len * inner;
                    if let Some(buf) = slot {
                        buf.extend_from_slice(&g[offset..offset + chunk]);
                    }
                    offset += chunk;
                }
            }
            out
        })
    }

    /// Spatial mean of an `H×W×C` map, giving a `C` vector.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        if self.ndim() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "global_avg_pool",
                msg: format!("expected H×W×C, got {:?}", self.shape()),
            });
        }
        let (h, w, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let n = (h * w) as f64;
        let mut sums = vec![0.0; c];
        for px in self.data().chunks_exact(c) {
            sums.iter_mut().zip(px).for_each(|(s, v)| *s += v);
        }
        let data = sums.into_iter().map(|s| s / n).collect();
        record(
            OpKind::GlobalAvgPool,
            &[self],
            vec![c],
            data,
            move |g, _| {
                let scaled: Vec<f64> = g.iter().map(|v| v / n).collect();
                let mut out = Vec::with_capacity(h * w * c);
                for _ in 0..h * w {
                    out.extend_from_slice(&scaled);
                }
                vec![Some(out)]
            },
        )
    }

    /// Tiles a `C` vector over an `h×w` grid.
    pub fn replicate_spatial(&self, h: usize, w: usize) -> Result<Tensor> {
        if self.ndim() != 1 || h == 0 || w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "replicate_spatial",
                msg: format!(
                    "expected a vector and positive grid, got {:?} over {h}×{w}",
                    self.shape()
                ),
            });
        }
        let c = self.numel();
        let mut data = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            data.extend_from_slice(self.data());
        }
        record(
            OpKind::ReplicateSpatial,
            &[self],
            vec![h, w, c],
            data,
            move |g, _| {
                let mut out = vec![0.0; c];
                for px in g.chunks_exact(c) {
                    out.iter_mut().zip(px).for_each(|(o, v)| *o += v);
                }
                vec![Some(out)]
            },
        )
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

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, b)| *o += av * b);
        }
    }
    out
}
