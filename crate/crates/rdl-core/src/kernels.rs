//! Numeric kernels behind the differentiable ops: grouped convolution via
//! patch matrices (im2col) and blocked matrix products, plus the linear map.
//!
//! Determinism contract: every output element is produced by exactly one
//! task, reductions accumulate in a fixed order, and the matrix kernel is
//! single-threaded, so results are bitwise identical regardless of the
//! thread count.

use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;

/// Output spatial side for a square input of side `h`.
pub fn conv_out_side(h: usize, k: usize, stride: usize, padding: usize) -> usize {
    (h + 2 * padding - k) / stride + 1
}

/// Fills `col` (rows = mg*k*k, cols = ho*wo) with the patches of sample `s`,
/// channels `[c0, c0+mg)`.
#[allow(clippy::too_many_arguments)]
fn im2col_group<E: Scalar>(
    x: &Tensor<E>,
    s: usize,
    c0: usize,
    mg: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let xd = x.data();
    let mut r = 0;
    for cl in 0..mg {
        let base = ((s * x.shape()[1]) + c0 + cl) * h * w;
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut col[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                for oh in 0..ho {
                    let ih = (oh * stride + kh) as isize - padding as isize;
                    let out_row = &mut row[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        for v in out_row.iter_mut() {
                            *v = E::zero();
                        }
                        continue;
                    }
                    let in_base = base + ih as usize * w;
                    for (ow, v) in out_row.iter_mut().enumerate() {
                        let iw = (ow * stride + kw) as isize - padding as isize;
                        *v = if iw < 0 || iw >= w as isize {
                            E::zero()
                        } else {
                            xd[in_base + iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto sample `s` of `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im_group<E: Scalar>(
    dx: &mut [E],
    shape: &[usize],
    s: usize,
    c0: usize,
    mg: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    col: &[E],
) {
    let (ch, h, w) = (shape[1], shape[2], shape[3]);
    let mut r = 0;
    for cl in 0..mg {
        let base = ((s * ch) + c0 + cl) * h * w;
        for kh in 0..k {
            for kw in 0..k {
                let row = &col[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                for oh in 0..ho {
                    let ih = (oh * stride + kh) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let in_base = base + ih as usize * w;
                    for ow in 0..wo {
                        let iw = (ow * stride + kw) as isize - padding as isize;
                        if iw >= 0 && iw < w as isize {
                            dx[in_base + iw as usize] += row[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2-D convolution. `x` is [N, m, H, W], `weight` is [n, m/t, k, k];
/// returns [N, n, Ho, Wo]. Group b of the output channels reads only group b
/// of the input channels.
pub fn conv2d_forward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<E> {
    let (batch, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (n, mg, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    debug_assert_eq!(weight.shape()[3], k);
    debug_assert_eq!(m, mg * groups);
    debug_assert_eq!(n % groups, 0);
    let ng = n / groups;
    let ho = conv_out_side(h, k, stride, padding);
    let wo = conv_out_side(w, k, stride, padding);
    let mut y = Tensor::zeros(&[batch, n, ho, wo]);
    let pointwise = k == 1 && stride == 1 && padding == 0;
    let ys = y.data_mut();
    let wd = weight.data();
    let xd = x.data();

    // Each task owns one sample's output slice; writes are disjoint.
    ys.par_chunks_mut(n * ho * wo).enumerate().for_each(|(s, yslice)| {
        if pointwise {
            for g in 0..groups {
                let xg = &xd[(s * m + g * mg) * h * w..(s * m + (g + 1) * mg) * h * w];
                let wg = &wd[g * ng * mg..(g + 1) * ng * mg];
                let cg = &mut yslice[g * ng * ho * wo..(g + 1) * ng * ho * wo];
                E::gemm(ng, mg, ho * wo, 1.0, wg, false, xg, false, 0.0, cg);
            }
        } else {
            let mut col = vec![E::zero(); mg * k * k * ho * wo];
            for g in 0..groups {
                im2col_group(x, s, g * mg, mg, k, stride, padding, ho, wo, &mut col);
                let wg = &wd[g * ng * mg * k * k..(g + 1) * ng * mg * k * k];
                let cg = &mut yslice[g * ng * ho * wo..(g + 1) * ng * ho * wo];
                E::gemm(ng, mg * k * k, ho * wo, 1.0, wg, false, &col, false, 0.0, cg);
            }
        }
    });
    y
}

/// Gradients of a grouped convolution w.r.t. its input and weight.
pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    dy: &Tensor<E>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> (Tensor<E>, Tensor<E>) {
    let (batch, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (n, mg, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let ng = n / groups;
    let (ho, wo) = (dy.shape()[2], dy.shape()[3]);
    let pointwise = k == 1 && stride == 1 && padding == 0;
    let wd = weight.data();
    let dyd = dy.data();
    let xd = x.data();

    let mut dx = Tensor::zeros(x.shape());
    {
        let dxs = dx.data_mut();
        dxs.par_chunks_mut(m * h * w).enumerate().for_each(|(s, dxslice)| {
            if pointwise {
                for g in 0..groups {
                    let wg = &wd[g * ng * mg..(g + 1) * ng * mg];
                    let dyg = &dyd[(s * n + g * ng) * ho * wo..(s * n + (g + 1) * ng) * ho * wo];
                    let dxg = &mut dxslice[g * mg * h * w..(g + 1) * mg * h * w];
                    E::gemm(mg, ng, ho * wo, 1.0, wg, true, dyg, false, 0.0, dxg);
                }
            } else {
                let mut dcol = vec![E::zero(); mg * k * k * ho * wo];
                for g in 0..groups {
                    let wg = &wd[g * ng * mg * k * k..(g + 1) * ng * mg * k * k];
                    let dyg = &dyd[(s * n + g * ng) * ho * wo..(s * n + (g + 1) * ng) * ho * wo];
                    E::gemm(mg * k * k, ng, ho * wo, 1.0, wg, true, dyg, false, 0.0, &mut dcol);
                    col2im_group(
                        dxslice,
                        &[1, m, h, w],
                        0,
                        g * mg,
                        mg,
                        k,
                        stride,
                        padding,
                        ho,
                        wo,
                        &dcol,
                    );
                }
            }
        });
    }

    let mut dw = Tensor::zeros(weight.shape());
    {
        let dws = dw.data_mut();
        // Each task owns one group's weight gradient; samples accumulate in
        // index order within the task.
        dws.par_chunks_mut(ng * mg * k * k).enumerate().for_each(|(g, dwg)| {
            if pointwise {
                for s in 0..batch {
                    let xg = &xd[(s * m + g * mg) * h * w..(s * m + (g + 1) * mg) * h * w];
                    let dyg = &dyd[(s * n + g * ng) * ho * wo..(s * n + (g + 1) * ng) * ho * wo];
                    E::gemm(ng, ho * wo, mg, 1.0, dyg, false, xg, true, 1.0, dwg);
                }
            } else {
                let mut col = vec![E::zero(); mg * k * k * ho * wo];
                for s in 0..batch {
                    im2col_group(x, s, g * mg, mg, k, stride, padding, ho, wo, &mut col);
                    let dyg = &dyd[(s * n + g * ng) * ho * wo..(s * n + (g + 1) * ng) * ho * wo];
                    E::gemm(ng, ho * wo, mg * k * k, 1.0, dyg, false, &col, true, 1.0, dwg);
                }
            }
        });
    }
    (dx, dw)
}

/// y = x W^T + bias. `x` is [N, in], `weight` is [out, in], `bias` [out].
pub fn linear_forward<E: Scalar>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Tensor<E> {
    let (batch, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    debug_assert_eq!(weight.shape()[1], fin);
    let mut y = Tensor::zeros(&[batch, fout]);
    E::gemm(batch, fin, fout, 1.0, x.data(), false, weight.data(), true, 0.0, y.data_mut());
    let yd = y.data_mut();
    let bd = bias.data();
    for r in 0..batch {
        for c in 0..fout {
            yd[r * fout + c] += bd[c];
        }
    }
    y
}

/// Gradients of the linear map w.r.t. input, weight, and bias.
pub fn linear_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    dy: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let (batch, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    let mut dx = Tensor::zeros(&[batch, fin]);
    E::gemm(batch, fout, fin, 1.0, dy.data(), false, weight.data(), false, 0.0, dx.data_mut());
    let mut dw = Tensor::zeros(&[fout, fin]);
    E::gemm(fout, batch, fin, 1.0, dy.data(), true, x.data(), false, 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[fout]);
    let dbd = db.data_mut();
    let dyd = dy.data();
    for r in 0..batch {
        for c in 0..fout {
            dbd[c] += dyd[r * fout + c];
        }
    }
    (dx, dw, db)
}
