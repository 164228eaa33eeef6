//! 2-d convolution via im2col + dense products, and nearest upsampling.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{Array2, Array4, ArrayD, ArrayView3, Ix4};

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfolds one image `[c, h, w]` into `[c*kh*kw, oh*ow]` with zero padding.
pub fn im2col<F: Scalar>(
    x: &ArrayView3<'_, F>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut col = Array2::<F>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds `[c*kh*kw, oh*ow]` back into `[c, h, w]`,
/// accumulating overlaps.
pub fn col2im<F: Scalar>(
    col: &Array2<F>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<F> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut x = ndarray::Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += col[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

/// Convolution of `[b, c, h, w]` with weights `[o, c, kh, kw]`.
///
/// The im2col buffers are recomputed in the backward pass instead of being
/// cached; memory stays flat across deep stacks.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, weight: &Tensor<F>, stride: usize, pad: usize) -> Tensor<F> {
    let xv = x.data().clone().into_dimensionality::<Ix4>().unwrap();
    let wv = weight.data().clone().into_dimensionality::<Ix4>().unwrap();
    let (b, c, h, w) = xv.dim();
    let (o, wc, kh, kw) = wv.dim();
    assert_eq!(c, wc, "conv2d: channel mismatch");
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let wmat = wv
        .view()
        .into_shape_with_order((o, c * kh * kw))
        .unwrap()
        .to_owned();
    let mut y = Array4::<F>::zeros((b, o, oh, ow));
    for bi in 0..b {
        let col = im2col(&xv.index_axis(ndarray::Axis(0), bi), kh, kw, stride, pad);
        let yi = wmat.dot(&col);
        y.index_axis_mut(ndarray::Axis(0), bi)
            .assign(&yi.into_shape_with_order((o, oh, ow)).unwrap());
    }
    Tensor::from_op(
        y.into_dyn(),
        vec![x.clone(), weight.clone()],
        Box::new(move |node| {
            let g = node.out_grad().into_dimensionality::<Ix4>().unwrap();
            let xv = node
                .parent(0)
                .data()
                .clone()
                .into_dimensionality::<Ix4>()
                .unwrap();
            let wv = node
                .parent(1)
                .data()
                .clone()
                .into_dimensionality::<Ix4>()
                .unwrap();
            let (b, c, h, w) = xv.dim();
            let (o, _, kh, kw) = wv.dim();
            let (_, _, oh, ow) = g.dim();
            let wmat = wv
                .view()
                .into_shape_with_order((o, c * kh * kw))
                .unwrap()
                .to_owned();
            let mut dw = Array2::<F>::zeros((o, c * kh * kw));
            let mut dx = Array4::<F>::zeros((b, c, h, w));
            for bi in 0..b {
                let col = im2col(&xv.index_axis(ndarray::Axis(0), bi), kh, kw, stride, pad);
                let gi = g
                    .index_axis(ndarray::Axis(0), bi)
                    .into_shape_with_order((o, oh * ow))
                    .unwrap()
                    .to_owned();
                dw = dw + gi.dot(&col.t());
                let dcol = wmat.t().dot(&gi);
                dx.index_axis_mut(ndarray::Axis(0), bi)
                    .assign(&col2im(&dcol, c, h, w, kh, kw, stride, pad));
            }
            node.parent(0).accum_grad(&dx.into_dyn());
            let dw4: ArrayD<F> = dw
                .into_shape_with_order((o, c, kh, kw))
                .unwrap()
                .into_dyn();
            node.parent(1).accum_grad(&dw4);
        }),
    )
}

/// Nearest-neighbour 2x upsampling of `[b, c, h, w]`.
pub fn upsample_nearest2<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let xv = x.data().clone().into_dimensionality::<Ix4>().unwrap();
    let (b, c, h, w) = xv.dim();
    let mut y = Array4::<F>::zeros((b, c, 2 * h, 2 * w));
    for bi in 0..b {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let v = xv[[bi, ci, iy, ix]];
                    y[[bi, ci, 2 * iy, 2 * ix]] = v;
                    y[[bi, ci, 2 * iy, 2 * ix + 1]] = v;
                    y[[bi, ci, 2 * iy + 1, 2 * ix]] = v;
                    y[[bi, ci, 2 * iy + 1, 2 * ix + 1]] = v;
                }
            }
        }
    }
    Tensor::from_op(
        y.into_dyn(),
        vec![x.clone()],
        Box::new(move |node| {
            let g = node.out_grad().into_dimensionality::<Ix4>().unwrap();
            let mut dx = Array4::<F>::zeros((b, c, h, w));
            for bi in 0..b {
                for ci in 0..c {
                    for iy in 0..h {
                        for ix in 0..w {
                            dx[[bi, ci, iy, ix]] = g[[bi, ci, 2 * iy, 2 * ix]]
                                + g[[bi, ci, 2 * iy, 2 * ix + 1]]
                                + g[[bi, ci, 2 * iy + 1, 2 * ix]]
                                + g[[bi, ci, 2 * iy + 1, 2 * ix + 1]];
                        }
                    }
                }
            }
            node.parent(0).accum_grad(&dx.into_dyn());
        }),
    )
}
