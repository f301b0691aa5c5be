//! Convolution, transposed convolution and fully-connected layers, lowered to
//! GEMM through im2col.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{Graph, Op, Var};
use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geom {
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

#[derive(Debug)]
pub(crate) struct ConvSaved {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: Geom,
}

/// Output length of a convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel + output_padding;
    full.checked_sub(2 * pad).filter(|&v| v > 0)
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: Geom, oh: usize, ow: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * g.kh * g.kw * oh * ow];
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: Geom, oh: usize, ow: usize, out: &mut [f64]) {
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a · b + beta · c` where `a`/`b` may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let av = ArrayView2::from_shape((a_rows, a_cols), a).expect("gemm a");
    let bv = ArrayView2::from_shape((b_rows, b_cols), b).expect("gemm b");
    let av = if trans_a { av.reversed_axes() } else { av };
    let bv = if trans_b { bv.reversed_axes() } else { bv };
    let mut cv = ArrayViewMut2::from_shape((av.nrows(), bv.ncols()), c).expect("gemm c");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

/// Sum per-sample partial gradients in sample order.
fn ordered_sum(parts: impl Iterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v;
        }
    }
    acc
}

impl Graph {
    /// 2-D cross-correlation. `x: [N, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`,
    /// optional `b: [Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, ci, kh, kw) = self.value(w).dims4()?;
        if ci != c {
            return shape_err(format!("conv2d input has {c} channels, weight expects {ci}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return shape_err(format!("conv2d bias {:?}, expected [{o}]", self.shape(b)));
            }
        }
        let geom = Geom { kh, kw, stride, pad };
        let (Some(oh), Some(ow)) = (
            conv_output_len(h, kh, stride.0, pad.0),
            conv_output_len(wd, kw, stride.1, pad.1),
        ) else {
            return shape_err(format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"));
        };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let plane = oh * ow;
        let mut out = vec![0.0; n * o * plane];
        par::for_each_chunk_mut(&mut out, o * plane, |i, dst| {
            let cols = im2col(&xs[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, geom, oh, ow);
            gemm(ws, o, c * kh * kw, false, &cols, c * kh * kw, plane, false, dst, 0.0);
            if let Some(bs) = bs {
                for (oc, row) in dst.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += bs[oc]);
                }
            }
        });
        let v = Tensor::from_vec(&[n, o, oh, ow], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(v, Op::Conv2d(ConvSaved { x, w, b, geom }), &parents))
    }

    /// Transposed convolution (the input-gradient map of [`Graph::conv2d`]).
    /// `x: [N, Cin, H, W]`, `w: [Cin, Cout, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        pad: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (ci, co, kh, kw) = self.value(w).dims4()?;
        if ci != c {
            return shape_err(format!("conv_transpose2d input has {c} channels, weight expects {ci}"));
        }
        if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
            return shape_err(format!("output_padding {output_padding:?} must be below stride {stride:?}"));
        }
        let (Some(oh), Some(ow)) = (
            conv_transpose_output_len(h, kh, stride.0, pad.0, output_padding.0),
            conv_transpose_output_len(wd, kw, stride.1, pad.1, output_padding.1),
        ) else {
            return shape_err("transposed convolution output would be empty");
        };
        let geom = Geom { kh, kw, stride, pad };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let ckk = co * kh * kw;
        let mut out = vec![0.0; n * co * oh * ow];
        par::for_each_chunk_mut(&mut out, co * oh * ow, |i, dst| {
            let mut cols = vec![0.0; ckk * h * wd];
            gemm(ws, c, ckk, true, &xs[i * c * h * wd..(i + 1) * c * h * wd], c, h * wd, false, &mut cols, 0.0);
            col2im(&cols, co, oh, ow, geom, h, wd, dst);
        });
        let v = Tensor::from_vec(&[n, co, oh, ow], out)?;
        Ok(self.push_op(
            v,
            Op::ConvTranspose2d(ConvSaved { x, w, b: None, geom }),
            &[x, w],
        ))
    }

    /// `y = x · wᵀ + b` with `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let ([n, i], [o, wi]) = (xs.as_slice(), ws.as_slice()) else {
            return shape_err(format!("linear expects 2-D operands, got {xs:?} and {ws:?}"));
        };
        let (n, i, o) = (*n, *i, *o);
        if i != *wi {
            return shape_err(format!("linear input width {i} vs weight {ws:?}"));
        }
        let mut out = vec![0.0; n * o];
        gemm(self.value(x).data(), n, i, false, self.value(w).data(), o, i, true, &mut out, 0.0);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return shape_err(format!("linear bias {:?}, expected [{o}]", self.shape(b)));
            }
            let bd = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
            }
        }
        let v = Tensor::from_vec(&[n, o], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(v, Op::Linear { x, w, b }, &parents))
    }
}

pub(crate) fn conv2d_backward<'a>(
    s: &ConvSaved,
    g: &Tensor,
    val: &dyn Fn(Var) -> &'a Tensor,
    needs: &dyn Fn(Var) -> bool,
) -> Vec<(Var, Tensor)> {
    let xt = val(s.x);
    let wt = val(s.w);
    let (n, c, h, wd) = xt.dims4().expect("4-D");
    let (o, _, kh, kw) = wt.dims4().expect("4-D");
    let (_, _, oh, ow) = g.dims4().expect("4-D");
    let (plane, ckk) = (oh * ow, c * kh * kw);
    let (xs, ws, gs) = (xt.data(), wt.data(), g.data());
    let need_x = needs(s.x);
    let need_w = needs(s.w);
    let parts = par::map_range(n, |i| {
        let gi = &gs[i * o * plane..(i + 1) * o * plane];
        let cols = im2col(&xs[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, s.geom, oh, ow);
        let mut dw = Vec::new();
        if need_w {
            dw = vec![0.0; o * ckk];
            gemm(gi, o, plane, false, &cols, ckk, plane, true, &mut dw, 0.0);
        }
        let mut dx = Vec::new();
        if need_x {
            let mut dcols = vec![0.0; ckk * plane];
            gemm(ws, o, ckk, true, gi, o, plane, false, &mut dcols, 0.0);
            dx = vec![0.0; c * h * wd];
            col2im(&dcols, c, h, wd, s.geom, oh, ow, &mut dx);
        }
        (dx, dw)
    });
    let mut res = Vec::new();
    if need_w {
        let dw = ordered_sum(parts.iter().map(|p| p.1.clone()), o * ckk);
        res.push((s.w, Tensor::from_vec(wt.shape(), dw).expect("shape")));
    }
    if need_x {
        let dx: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
        res.push((s.x, Tensor::from_vec(xt.shape(), dx).expect("shape")));
    }
    if let Some(b) = s.b {
        let mut db = vec![0.0; o];
        for i in 0..n {
            for (oc, d) in db.iter_mut().enumerate() {
                *d += gs[(i * o + oc) * plane..(i * o + oc + 1) * plane].iter().sum::<f64>();
            }
        }
        res.push((b, Tensor::from_vec(&[o], db).expect("shape")));
    }
    res
}

pub(crate) fn conv_transpose2d_backward<'a>(
    s: &ConvSaved,
    g: &Tensor,
    val: &dyn Fn(Var) -> &'a Tensor,
    needs: &dyn Fn(Var) -> bool,
) -> Vec<(Var, Tensor)> {
    let xt = val(s.x);
    let wt = val(s.w);
    let (n, c, h, wd) = xt.dims4().expect("4-D");
    let (_, co, kh, kw) = wt.dims4().expect("4-D");
    let (_, _, oh, ow) = g.dims4().expect("4-D");
    let ckk = co * kh * kw;
    let (xs, ws, gs) = (xt.data(), wt.data(), g.data());
    let need_x = needs(s.x);
    let need_w = needs(s.w);
    let parts = par::map_range(n, |i| {
        // im2col of the output gradient lands on the input grid
        let gcols = im2col(&gs[i * co * oh * ow..(i + 1) * co * oh * ow], co, oh, ow, s.geom, h, wd);
        let xi = &xs[i * c * h * wd..(i + 1) * c * h * wd];
        let mut dw = Vec::new();
        if need_w {
            dw = vec![0.0; c * ckk];
            gemm(xi, c, h * wd, false, &gcols, ckk, h * wd, true, &mut dw, 0.0);
        }
        let mut dx = Vec::new();
        if need_x {
            dx = vec![0.0; c * h * wd];
            gemm(ws, c, ckk, false, &gcols, ckk, h * wd, false, &mut dx, 0.0);
        }
        (dx, dw)
    });
    let mut res = Vec::new();
    if need_w {
        let dw = ordered_sum(parts.iter().map(|p| p.1.clone()), c * ckk);
        res.push((s.w, Tensor::from_vec(wt.shape(), dw).expect("shape")));
    }
    if need_x {
        let dx: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
        res.push((s.x, Tensor::from_vec(xt.shape(), dx).expect("shape")));
    }
    res
}

pub(crate) fn linear_backward<'a>(
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &Tensor,
    val: &dyn Fn(Var) -> &'a Tensor,
) -> Vec<(Var, Tensor)> {
    let (xt, wt) = (val(x), val(w));
    let (n, i) = (xt.shape()[0], xt.shape()[1]);
    let o = wt.shape()[0];
    let mut dx = vec![0.0; n * i];
    gemm(g.data(), n, o, false, wt.data(), o, i, false, &mut dx, 0.0);
    let mut dw = vec![0.0; o * i];
    gemm(g.data(), n, o, true, xt.data(), n, i, false, &mut dw, 0.0);
    let mut res = vec![
        (x, Tensor::from_vec(xt.shape(), dx).expect("shape")),
        (w, Tensor::from_vec(wt.shape(), dw).expect("shape")),
    ];
    if let Some(b) = b {
        let mut db = vec![0.0; o];
        for row in g.data().chunks(o) {
            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
        }
        res.push((b, Tensor::from_vec(&[o], db).expect("shape")));
    }
    res
}
