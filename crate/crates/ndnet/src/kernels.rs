//! Dense loops behind the convolution ops. Layout is `[C, H, W]` for images and
//! `[C_out, C_in, K, K]` for kernels.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `o` with `0 <= o*stride + k - pad < len`, clipped to `out`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    if len + pad <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut y = vec![T::zero(); g.c_out * g.out_h * g.out_w];
    let kk = g.kernel * g.kernel;
    for co in 0..g.c_out {
        let yc = &mut y[co * g.out_h * g.out_w..(co + 1) * g.out_h * g.out_w];
        for ci in 0..g.c_in {
            let xc = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
            let wk = &w[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for ky in 0..g.kernel {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kernel {
                    let wv = wk[ky * g.kernel + kx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xc[iy * g.in_w..(iy + 1) * g.in_w];
                        let yrow = &mut yc[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in ox0..ox1 {
                            yrow[ox] += wv * xrow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv2d_forward`] with respect to its input.
pub fn conv2d_grad_input<T: Real>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dx = vec![T::zero(); g.c_in * g.in_h * g.in_w];
    let kk = g.kernel * g.kernel;
    for co in 0..g.c_out {
        let dyc = &dy[co * g.out_h * g.out_w..(co + 1) * g.out_h * g.out_w];
        for ci in 0..g.c_in {
            let dxc = &mut dx[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
            let wk = &w[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for ky in 0..g.kernel {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kernel {
                    let wv = wk[ky * g.kernel + kx];
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let dyrow = &dyc[oy * g.out_w..(oy + 1) * g.out_w];
                        let dxrow = &mut dxc[iy * g.in_w..(iy + 1) * g.in_w];
                        for ox in ox0..ox1 {
                            dxrow[ox * g.stride + kx - g.pad] += wv * dyrow[ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn conv2d_grad_weight<T: Real>(dy: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let kk = g.kernel * g.kernel;
    let mut dw = vec![T::zero(); g.c_out * g.c_in * kk];
    for co in 0..g.c_out {
        let dyc = &dy[co * g.out_h * g.out_w..(co + 1) * g.out_h * g.out_w];
        for ci in 0..g.c_in {
            let xc = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
            let dwk = &mut dw[(co * g.c_in + ci) * kk..(co * g.c_in + ci + 1) * kk];
            for ky in 0..g.kernel {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.in_h, g.out_h);
                for kx in 0..g.kernel {
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.in_w, g.out_w);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xc[iy * g.in_w..(iy + 1) * g.in_w];
                        let dyrow = &dyc[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in ox0..ox1 {
                            acc += dyrow[ox] * xrow[ox * g.stride + kx - g.pad];
                        }
                    }
                    dwk[ky * g.kernel + kx] += acc;
                }
            }
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
        let mut y = vec![T::zero(); g.c_out * g.out_h * g.out_w];
        for co in 0..g.c_out {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = T::zero();
                    for ci in 0..g.c_in {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.in_h as isize
                                    || ix >= g.in_w as isize
                                {
                                    continue;
                                }
                                let xv = x[(ci * g.in_h + iy as usize) * g.in_w + ix as usize];
                                let wv = w[((co * g.c_in + ci) * g.kernel + ky) * g.kernel + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[(co * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn forward_matches_naive_with_padding_and_stride() {
        for &(h, k, s, p) in &[
            (5, 3, 1, 0),
            (8, 3, 2, 1),
            (7, 4, 2, 1),
            (1, 3, 2, 1),
            (6, 2, 3, 0),
        ] {
            let out = conv_out_len(h, k, s, p).unwrap();
            let g = ConvGeom {
                c_in: 2,
                c_out: 3,
                in_h: h,
                in_w: h,
                out_h: out,
                out_w: out,
                kernel: k,
                stride: s,
                pad: p,
            };
            let x: Vec<f64> = (0..2 * h * h)
                .map(|i| ((i * 7 % 11) as f64) - 5.0)
                .collect();
            let w: Vec<f64> = (0..3 * 2 * k * k)
                .map(|i| ((i * 5 % 13) as f64) * 0.1 - 0.6)
                .collect();
            assert_eq!(
                conv2d_forward(&x, &w, &g),
                naive(&x, &w, &g),
                "h={h} k={k} s={s} p={p}"
            );
        }
    }

    #[test]
    fn grad_input_is_adjoint() {
        // <conv(x), dy> == <x, conv^T(dy)>
        let g = ConvGeom {
            c_in: 2,
            c_out: 3,
            in_h: 8,
            in_w: 8,
            out_h: 4,
            out_w: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..128).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..54).map(|i| (i as f64 * 0.91).cos()).collect();
        let dy: Vec<f64> = (0..48).map(|i| (i as f64 * 0.13).sin()).collect();
        let y = conv2d_forward(&x, &w, &g);
        let dx = conv2d_grad_input(&dy, &w, &g);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let dw = conv2d_grad_weight(&dy, &x, &g);
        let rhs_w: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
