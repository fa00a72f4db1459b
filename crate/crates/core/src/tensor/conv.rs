//! 2-D convolution family.
//!
//! Three mutually adjoint primitives share one lowering (im2col + gemm):
//! `conv2d(x, k)`, its adjoint in `x` (`conv_transpose2d`) and its adjoint in
//! `k` (`conv2d_kernel_grad`). The backward rule of each is written with the
//! other two, which keeps the set closed under repeated differentiation.

use rayon::prelude::*;

use super::{gemm, MatRef, Op, Scalar, Tensor};
use crate::error::{Error, Result};

/// `floor((input + 2·pad − kernel) / stride) + 1`, or `None` if non-positive.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// `(input − 1)·stride + kernel − 2·pad + output_pad`, or `None` if non-positive.
pub fn conv_transpose_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel + output_pad;
    full.checked_sub(2 * pad).filter(|&e| e > 0)
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    batch: usize,
    cx: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.cx * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

/// Patch matrix `[cx·kh·kw, batch·oh·ow]`.
fn im2col<T: Scalar>(x: &[T], g: &Geom) -> Vec<T> {
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.rows() * ncols];
    cols.par_chunks_mut(ncols).enumerate().for_each(|(r, row)| {
        let ci = r / (g.kh * g.kw);
        let ky = (r / g.kw) % g.kh;
        let kx = r % g.kw;
        for n in 0..g.batch {
            let plane = &x[(n * g.cx + ci) * g.h * g.w..][..g.h * g.w];
            for oy in 0..g.oh {
                let dst = &mut row[(n * g.oh + oy) * g.ow..][..g.ow];
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let src = &plane[iy as usize * g.w..][..g.w];
                for (ox, d) in dst.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < g.w as isize {
                        *d = src[ix as usize];
                    }
                }
            }
        }
    });
    cols
}

/// Scatter-adds a patch matrix back into `[batch, cx, h, w]`.
fn col2im<T: Scalar>(cols: &[T], g: &Geom) -> Vec<T> {
    let ncols = g.cols();
    let mut x = vec![T::zero(); g.batch * g.cx * g.h * g.w];
    x.par_chunks_mut(g.h * g.w)
        .enumerate()
        .for_each(|(p, plane)| {
            let n = p / g.cx;
            let ci = p % g.cx;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let r = (ci * g.kh + ky) * g.kw + kx;
                    let row = &cols[r * ncols..][..ncols];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &row[(n * g.oh + oy) * g.ow..][..g.ow];
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        });
    x
}

/// `[a, b, inner] → [b, a, inner]`.
fn swap_outer<T: Scalar>(src: &[T], a: usize, b: usize, inner: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    dst.par_chunks_mut(a * inner)
        .enumerate()
        .for_each(|(j, block)| {
            for i in 0..a {
                block[i * inner..(i + 1) * inner]
                    .copy_from_slice(&src[(i * b + j) * inner..][..inner]);
            }
        });
    dst
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::geometry(op, "stride must be at least 1"));
    }
    Ok(())
}

/// Cross-correlation of `x: [b, cin, h, w]` with `k: [cout, cin, kh, kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_stride("conv2d", stride)?;
    let (batch, cx, h, w) = x.dims4("conv2d")?;
    let (cy, kcx, kh, kw) = k.dims4("conv2d")?;
    if kcx != cx {
        return Err(Error::shape("conv2d", x.shape(), k.shape()));
    }
    let (Some(oh), Some(ow)) = (
        conv_output_extent(h, kh, stride, pad),
        conv_output_extent(w, kw, stride, pad),
    ) else {
        return Err(Error::geometry(
            "conv2d",
            format!("input {h}x{w} with pad {pad}, stride {stride} gives a non-positive output"),
        ));
    };
    let g = Geom {
        batch,
        cx,
        h,
        w,
        oh,
        ow,
        kh,
        kw,
        stride,
        pad,
    };
    let cols = im2col(x.data(), &g);
    let mut ymat = vec![T::zero(); cy * g.cols()];
    gemm(
        cy,
        g.rows(),
        g.cols(),
        MatRef::row_major(k.data(), g.rows()),
        MatRef::row_major(&cols, g.cols()),
        &mut ymat,
    );
    let y = swap_outer(&ymat, cy, batch, oh * ow);
    Ok(Tensor::from_op(
        y,
        vec![batch, cy, oh, ow],
        Op::Conv2d { stride, pad },
        &[x, k],
    ))
}

/// Transposed convolution of `x: [b, cin, h, w]` with `k: [cin, cout, kh, kw]`,
/// output extent `(h − 1)·stride + kh − 2·pad + output_pad`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<Tensor<T>> {
    check_stride("conv_transpose2d", stride)?;
    if output_pad >= stride {
        return Err(Error::geometry(
            "conv_transpose2d",
            format!("output_pad {output_pad} must be smaller than stride {stride}"),
        ));
    }
    let (_, _, h, w) = x.dims4("conv_transpose2d")?;
    let (_, _, kh, kw) = k.dims4("conv_transpose2d")?;
    let out = |len, kern| {
        conv_transpose_output_extent(len, kern, stride, pad, output_pad)
            .ok_or_else(|| Error::geometry("conv_transpose2d", "non-positive output extent"))
    };
    conv_transpose2d_to(x, k, stride, pad, (out(h, kh)?, out(w, kw)?))
}

/// Adjoint of `conv2d(·, k)` producing an explicit output extent.
pub fn conv_transpose2d_to<T: Scalar>(
    y: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Result<Tensor<T>> {
    check_stride("conv_transpose2d", stride)?;
    let (batch, cy, oh, ow) = y.dims4("conv_transpose2d")?;
    let (kcy, cx, kh, kw) = k.dims4("conv_transpose2d")?;
    if kcy != cy {
        return Err(Error::shape("conv_transpose2d", y.shape(), k.shape()));
    }
    let (h, w) = out_hw;
    if conv_output_extent(h, kh, stride, pad) != Some(oh)
        || conv_output_extent(w, kw, stride, pad) != Some(ow)
    {
        return Err(Error::geometry(
            "conv_transpose2d",
            format!("{oh}x{ow} input cannot produce {h}x{w} with stride {stride}, pad {pad}"),
        ));
    }
    let g = Geom {
        batch,
        cx,
        h,
        w,
        oh,
        ow,
        kh,
        kw,
        stride,
        pad,
    };
    let gmat = swap_outer(y.data(), batch, cy, oh * ow);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    gemm(
        g.rows(),
        cy,
        g.cols(),
        MatRef::transposed(k.data(), g.rows()),
        MatRef::row_major(&gmat, g.cols()),
        &mut cols,
    );
    let x = col2im(&cols, &g);
    Ok(Tensor::from_op(
        x,
        vec![batch, cx, h, w],
        Op::ConvTranspose2d { stride, pad },
        &[y, k],
    ))
}

/// Gradient of `<conv2d(x, k), gy>` with respect to `k`.
pub fn conv2d_kernel_grad<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel_hw: (usize, usize),
) -> Result<Tensor<T>> {
    check_stride("conv2d_kernel_grad", stride)?;
    let (batch, cx, h, w) = x.dims4("conv2d_kernel_grad")?;
    let (gb, cy, oh, ow) = gy.dims4("conv2d_kernel_grad")?;
    let (kh, kw) = kernel_hw;
    if gb != batch
        || conv_output_extent(h, kh, stride, pad) != Some(oh)
        || conv_output_extent(w, kw, stride, pad) != Some(ow)
    {
        return Err(Error::shape("conv2d_kernel_grad", x.shape(), gy.shape()));
    }
    let g = Geom {
        batch,
        cx,
        h,
        w,
        oh,
        ow,
        kh,
        kw,
        stride,
        pad,
    };
    let cols = im2col(x.data(), &g);
    let gmat = swap_outer(gy.data(), batch, cy, oh * ow);
    let mut kmat = vec![T::zero(); cy * g.rows()];
    gemm(
        cy,
        g.cols(),
        g.rows(),
        MatRef::row_major(&gmat, g.cols()),
        MatRef::transposed(&cols, g.cols()),
        &mut kmat,
    );
    Ok(Tensor::from_op(
        kmat,
        vec![cy, cx, kh, kw],
        Op::ConvKernelGrad { stride, pad },
        &[x, gy],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_ones() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap().data(), &[9.0]);
    }

    #[test]
    fn output_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), &[1, 1, 3, 3]);
        assert_eq!(conv_transpose_output_extent(2, 3, 2, 1, 1), Some(4));
        assert_eq!(conv_transpose_output_extent(25, 3, 2, 1, 1), Some(50));
        let y = Tensor::<f64>::zeros(&[1, 1, 25, 25]);
        assert_eq!(
            conv_transpose2d(&y, &k, 2, 1, 1).unwrap().shape(),
            &[1, 1, 50, 50]
        );
    }

    #[test]
    fn geometry_errors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Geometry { .. })));
        assert!(matches!(
            conv_transpose2d(&x, &k, 2, 1, 2),
            Err(Error::Geometry { .. })
        ));
        let k2 = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &k2, 1, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
