use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::{record, OpKind};
use super::{fault, Result, Tensor, TensorError};

/// Work (multiply-adds) below which convolution loops stay on one thread.
const PARALLEL_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding; output is `ceil(H / stride)`.
    Same,
    /// No padding; output is `(H - k) / stride + 1`.
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn new(
        x: &[usize],
        wt: &[usize],
        bias: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let err = |msg: String| TensorError::InvalidArgument { op: "conv2d", msg };
        if x.len() != 3 {
            return Err(err(format!("input must be H×W×Cin, got {x:?}")));
        }
        if wt.len() != 4 || wt[0] != wt[1] {
            return Err(err(format!("kernel must be k×k×Cin×Cout, got {wt:?}")));
        }
        let k = wt[0];
        if k.is_multiple_of(2) {
            return Err(err(format!("kernel size must be odd, got {k}")));
        }
        if !matches!(stride, 1 | 2 | 4) {
            return Err(err(format!(
                "unsupported stride {stride}; expected 1, 2 or 4"
            )));
        }
        let (h, w, cin) = (x[0], x[1], x[2]);
        if wt[2] != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: x.to_vec(),
                rhs: wt.to_vec(),
            });
        }
        let cout = wt[3];
        if bias != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: wt.to_vec(),
                rhs: bias.to_vec(),
            });
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + k).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + k).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if h < k || w < k {
                    return Err(err(format!("valid padding needs H,W >= {k}, got {h}×{w}")));
                }
                ((h - k) / stride + 1, (w - k) / stride + 1, 0, 0)
            }
        };
        Ok(Geometry {
            h,
            w,
            cin,
            cout,
            k,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate for output index `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + t).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    fn work(&self) -> usize {
        self.oh * self.ow * self.k * self.k * self.cin * self.cout
    }
}

fn forward(g: &Geometry, x: &[f64], wt: &[f64], bias: &[f64]) -> Vec<f64> {
    let row_len = g.ow * g.cout;
    let mut out = vec![0.0; g.oh * row_len];
    let compute_row = |oy: usize, row: &mut [f64]| {
        for ox in 0..g.ow {
            let acc = &mut row[ox * g.cout..(ox + 1) * g.cout];
            acc.copy_from_slice(bias);
            for ky in 0..g.k {
                let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_top, g.h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = Geometry::src(ox, kx, g.stride, g.pad_left, g.w) else {
                        continue;
                    };
                    let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let wbase = (ky * g.k + kx) * g.cin * g.cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        let wrow = &wt[wbase + ci * g.cout..][..g.cout];
                        acc.iter_mut().zip(wrow).for_each(|(a, w)| *a += xv * w);
                    }
                }
            }
        }
    };
    if g.work() >= PARALLEL_WORK {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(oy, row)| compute_row(oy, row));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(oy, row)| compute_row(oy, row));
    }
    out
}

fn grad_input(g: &Geometry, dout: &[f64], wt: &[f64]) -> Vec<f64> {
    let row_len = g.w * g.cin;
    let mut dx = vec![0.0; g.h * row_len];
    let compute_row = |iy: usize, row: &mut [f64]| {
        for oy in 0..g.oh {
            let Some(ky) = (iy + g.pad_top)
                .checked_sub(oy * g.stride)
                .filter(|&ky| ky < g.k)
            else {
                continue;
            };
            for ox in 0..g.ow {
                let d = &dout[(oy * g.ow + ox) * g.cout..][..g.cout];
                for kx in 0..g.k {
                    let Some(ix) = Geometry::src(ox, kx, g.stride, g.pad_left, g.w) else {
                        continue;
                    };
                    let wbase = (ky * g.k + kx) * g.cin * g.cout;
                    let dxp = &mut row[ix * g.cin..(ix + 1) * g.cin];
                    for (ci, v) in dxp.iter_mut().enumerate() {
                        let wrow = &wt[wbase + ci * g.cout..][..g.cout];
                        *v += wrow.iter().zip(d).map(|(w, d)| w * d).sum::<f64>();
                    }
                }
            }
        }
    };
    if g.work() >= PARALLEL_WORK {
        dx.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(iy, row)| compute_row(iy, row));
    } else {
        dx.chunks_mut(row_len)
            .enumerate()
            .for_each(|(iy, row)| compute_row(iy, row));
    }
    dx
}

fn grad_weight(g: &Geometry, dout: &[f64], x: &[f64]) -> Vec<f64> {
    let tap_len = g.cin * g.cout;
    let mut dw = vec![0.0; g.k * g.k * tap_len];
    let compute_tap = |tap: usize, block: &mut [f64]| {
        let (ky, kx) = (tap / g.k, tap % g.k);
        for oy in 0..g.oh {
            let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_top, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let Some(ix) = Geometry::src(ox, kx, g.stride, g.pad_left, g.w) else {
                    continue;
                };
                let d = &dout[(oy * g.ow + ox) * g.cout..][..g.cout];
                let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                for (ci, &xv) in xin.iter().enumerate() {
                    let brow = &mut block[ci * g.cout..(ci + 1) * g.cout];
                    brow.iter_mut().zip(d).for_each(|(b, d)| *b += xv * d);
                }
            }
        }
    };
    if g.work() >= PARALLEL_WORK {
        dw.par_chunks_mut(tap_len)
            .enumerate()
            .for_each(|(tap, block)| compute_tap(tap, block));
    } else {
        dw.chunks_mut(tap_len)
            .enumerate()
            .for_each(|(tap, block)| compute_tap(tap, block));
    }
    dw
}

impl Tensor {
    /// 2-D cross-correlation of an `H×W×Cin` map with a `k×k×Cin×Cout` kernel.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor> {
        let g = Geometry::new(self.shape(), weight.shape(), bias.shape(), stride, padding)?;
        let data = forward(&g, self.data(), weight.data(), bias.data());
        let x = self.data.clone();
        let wt = weight.data.clone();
        let flip = fault::conv_sign_flip();
        record(
            OpKind::Conv2d,
            &[self, weight, bias],
            vec![g.oh, g.ow, g.cout],
            data,
            move |dout, needs| {
                let dx = needs[0].then(|| grad_input(&g, dout, &wt));
                let dw = needs[1].then(|| {
                    let mut dw = grad_weight(&g, dout, &x);
                    if flip {
                        dw.iter_mut().for_each(|v| *v = -*v);
                    }
                    dw
                });
                let db = needs[2].then(|| {
                    let mut db = vec![0.0; g.cout];
                    for px in dout.chunks_exact(g.cout) {
                        db.iter_mut().zip(px).for_each(|(b, d)| *b += d);
                    }
                    db
                });
                vec![dx, dw, db]
            },
        )
    }

    /// Nearest-neighbour 2× upsampling of an `H×W×C` map.
    pub fn upsample_nearest2x(&self) -> Result<Tensor> {
        if self.ndim() != 3 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_nearest2x",
                msg: format!("expected H×W×C, got {:?}", self.shape()),
            });
        }
        let (h, w, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![0.0; oh * ow * c];
        for y in 0..oh {
            for xo in 0..ow {
                let src = ((y / 2) * w + xo / 2) * c;
                data[(y * ow + xo) * c..][..c].copy_from_slice(&self.data()[src..src + c]);
            }
        }
        record(
            OpKind::Upsample2x,
            &[self],
            vec![oh, ow, c],
            data,
            move |g, _| {
                let mut dx = vec![0.0; h * w * c];
                for y in 0..oh {
                    for xo in 0..ow {
                        let dst = ((y / 2) * w + xo / 2) * c;
                        let src = &g[(y * ow + xo) * c..][..c];
                        dx[dst..dst + c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
                vec![Some(dx)]
            },
        )
    }
}
