//! Dense kernels behind the tape primitives.
//!
//! Every output element is produced by one sequential loop, and reductions that
//! are split across workers are combined in worker-index order, so results are
//! bit-reproducible for a fixed worker count.

use rayon::prelude::*;

use crate::scalar::Scalar;

const PAR_MIN_ROWS: usize = 256;

/// Number of partial-sum workers for a reduction over `n` items.
pub(crate) fn reduction_workers(n: usize) -> usize {
    rayon::current_num_threads().min(n / 1024).max(1)
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `c[m,n] = a[m,k] · b[k,n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let row = |(i, ci): (usize, &mut [T])| {
        let ai = &a[i * k..(i + 1) * k];
        for (kk, &av) in ai.iter().enumerate() {
            if av != T::zero() {
                axpy(av, &b[kk * n..(kk + 1) * n], ci);
            }
        }
    };
    if m >= PAR_MIN_ROWS {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// `da[m,k] = g[m,n] · b[k,n]ᵀ`
pub(crate) fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::zero(); m * k];
    let row = |(i, dai): (usize, &mut [T])| {
        let gi = &g[i * n..(i + 1) * n];
        for (kk, d) in dai.iter_mut().enumerate() {
            *d = dot(gi, &b[kk * n..(kk + 1) * n]);
        }
    };
    if m >= PAR_MIN_ROWS {
        da.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        da.chunks_mut(k).enumerate().for_each(row);
    }
    da
}

/// `db[k,n] = a[m,k]ᵀ · g[m,n]`, reduced over `m` in fixed worker order.
pub(crate) fn matmul_grad_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let partial = |rows: std::ops::Range<usize>| {
        let mut db = vec![T::zero(); k * n];
        for i in rows {
            let gi = &g[i * n..(i + 1) * n];
            for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                if av != T::zero() {
                    axpy(av, gi, &mut db[kk * n..(kk + 1) * n]);
                }
            }
        }
        db
    };
    let workers = reduction_workers(m);
    if workers == 1 {
        return partial(0..m);
    }
    let parts: Vec<Vec<T>> = (0..workers)
        .into_par_iter()
        .map(|w| partial(w * m / workers..(w + 1) * m / workers))
        .collect();
    sum_partials(parts)
}

pub(crate) fn sum_partials<T: Scalar>(mut parts: Vec<Vec<T>>) -> Vec<T> {
    let mut acc = parts.remove(0);
    for p in parts {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    acc
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `off`
/// (input index = output index + off).
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Stride-1, zero-padded ("same") 2D convolution over a single `[cin,h,w]` image.
pub(crate) fn conv2d<T: Scalar>(x: &[T], wt: &[T], d: ConvDims) -> Vec<T> {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad());
    let plane = h * w;
    let mut out = vec![T::zero(); d.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, op)| {
        for ci in 0..d.cin {
            let xp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let oy = ky as isize - p;
                let (y0, y1) = valid_range(h, oy);
                for kx in 0..k {
                    let wv = wt[((co * d.cin + ci) * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let ox = kx as isize - p;
                    let (x0, x1) = valid_range(w, ox);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = (y as isize + oy) as usize;
                        let src = &xp[iy * w + (x0 as isize + ox) as usize..iy * w + (x1 as isize + ox) as usize];
                        axpy(wv, src, &mut op[y * w + x0..y * w + x1]);
                    }
                }
            }
        }
    });
    out
}

/// Gradient of [`conv2d`] with respect to its input.
pub(crate) fn conv2d_grad_input<T: Scalar>(g: &[T], wt: &[T], d: ConvDims) -> Vec<T> {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad());
    let plane = h * w;
    let mut dx = vec![T::zero(); d.cin * plane];
    dx.par_chunks_mut(plane).enumerate().for_each(|(ci, dxp)| {
        for co in 0..d.cout {
            let gp = &g[co * plane..(co + 1) * plane];
            for ky in 0..k {
                let oy = ky as isize - p;
                let (y0, y1) = valid_range(h, oy);
                for kx in 0..k {
                    let wv = wt[((co * d.cin + ci) * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let ox = kx as isize - p;
                    let (x0, x1) = valid_range(w, ox);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = (y as isize + oy) as usize;
                        let dst = &mut dxp[iy * w + (x0 as isize + ox) as usize..iy * w + (x1 as isize + ox) as usize];
                        axpy(wv, &gp[y * w + x0..y * w + x1], dst);
                    }
                }
            }
        }
    });
    dx
}

/// Gradient of [`conv2d`] with respect to its weights.
pub(crate) fn conv2d_grad_weight<T: Scalar>(g: &[T], x: &[T], d: ConvDims) -> Vec<T> {
    let (h, w, k, p) = (d.h, d.w, d.k, d.pad());
    let plane = h * w;
    let per_out = d.cin * k * k;
    let mut dw = vec![T::zero(); d.cout * per_out];
    dw.par_chunks_mut(per_out).enumerate().for_each(|(co, dwc)| {
        let gp = &g[co * plane..(co + 1) * plane];
        for ci in 0..d.cin {
            let xp = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let oy = ky as isize - p;
                let (y0, y1) = valid_range(h, oy);
                for kx in 0..k {
                    let ox = kx as isize - p;
                    let (x0, x1) = valid_range(w, ox);
                    let mut acc = T::zero();
                    if x0 < x1 {
                        for y in y0..y1 {
                            let iy = (y as isize + oy) as usize;
                            acc += dot(
                                &gp[y * w + x0..y * w + x1],
                                &xp[iy * w + (x0 as isize + ox) as usize..iy * w + (x1 as isize + ox) as usize],
                            );
                        }
                    }
                    dwc[(ci * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    dw
}

/// 2× average pooling of a `[c,h,w]` image (h, w even).
pub(crate) fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let xp = &x[ch * h * w..];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                out[(ch * ho + y) * wo + xx] = (xp[i] + xp[i + 1] + xp[i + w] + xp[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_grad<T: Scalar>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                dx[(ch * h + y) * w + xx] = g[(ch * ho + y / 2) * wo + xx / 2] * quarter;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling of a `[c,h,w]` image.
pub(crate) fn upsample2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                out[(ch * ho + y) * wo + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_grad<T: Scalar>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * ho + y) * wo + xx];
            }
        }
    }
    dx
}

/// Weighted gather: `out[p,c] = Σ_j wts[p,j] · src[idx[p,j], c]`.
pub(crate) fn interp<T: Scalar>(src: &[T], idx: &[u32], wts: &[T], taps: usize, channels: usize) -> Vec<T> {
    let n = idx.len() / taps;
    let mut out = vec![T::zero(); n * channels];
    let point = |(p, op): (usize, &mut [T])| {
        for j in 0..taps {
            let wv = wts[p * taps + j];
            if wv == T::zero() {
                continue;
            }
            let base = idx[p * taps + j] as usize * channels;
            axpy(wv, &src[base..base + channels], op);
        }
    };
    if n >= 4 * PAR_MIN_ROWS {
        out.par_chunks_mut(channels).enumerate().for_each(point);
    } else {
        out.chunks_mut(channels).enumerate().for_each(point);
    }
    out
}

/// Adjoint of [`interp`]: scatter-add into a buffer of `src_len` values.
pub(crate) fn interp_grad<T: Scalar>(
    g: &[T],
    idx: &[u32],
    wts: &[T],
    taps: usize,
    channels: usize,
    src_len: usize,
) -> Vec<T> {
    let n = idx.len() / taps;
    let partial = |points: std::ops::Range<usize>| {
        let mut acc = vec![T::zero(); src_len];
        for p in points {
            let gp = &g[p * channels..(p + 1) * channels];
            for j in 0..taps {
                let wv = wts[p * taps + j];
                if wv == T::zero() {
                    continue;
                }
                let base = idx[p * taps + j] as usize * channels;
                axpy(wv, gp, &mut acc[base..base + channels]);
            }
        }
        acc
    };
    let workers = reduction_workers(n);
    if workers == 1 {
        return partial(0..n);
    }
    let parts: Vec<Vec<T>> = (0..workers)
        .into_par_iter()
        .map(|w| partial(w * n / workers..(w + 1) * n / workers))
        .collect();
    sum_partials(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], d: ConvDims) -> Vec<f64> {
        let p = (d.k / 2) as isize;
        let mut out = vec![0.0; d.cout * d.h * d.w];
        for co in 0..d.cout {
            for y in 0..d.h as isize {
                for xx in 0..d.w as isize {
                    let mut acc = 0.0;
                    for ci in 0..d.cin {
                        for ky in 0..d.k as isize {
                            for kx in 0..d.k as isize {
                                let (iy, ix) = (y + ky - p, xx + kx - p);
                                if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                    continue;
                                }
                                acc += wt[((co * d.cin + ci) * d.k + ky as usize) * d.k + kx as usize]
                                    * x[(ci * d.h + iy as usize) * d.w + ix as usize];
                            }
                        }
                    }
                    out[(co * d.h + y as usize) * d.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let d = ConvDims { cin: 2, cout: 3, h: 5, w: 4, k: 3 };
        let x: Vec<f64> = (0..d.cin * d.h * d.w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..d.cout * d.cin * 9).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let fast = conv2d(&x, &wt, d);
        let slow = naive_conv(&x, &wt, d);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_adjoints_are_consistent() {
        // <conv(x), g> = <x, conv_grad_input(g)> = <w, conv_grad_weight(g, x)>
        let d = ConvDims { cin: 3, cout: 2, h: 6, w: 5, k: 3 };
        let x: Vec<f64> = (0..d.cin * d.h * d.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let wt: Vec<f64> = (0..d.cout * d.cin * 9).map(|i| (i as f64 * 0.91).cos()).collect();
        let g: Vec<f64> = (0..d.cout * d.h * d.w).map(|i| (i as f64 * 0.13).sin()).collect();
        let y = conv2d(&x, &wt, d);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let dx = conv2d_grad_input(&g, &wt, d);
        let rhs_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let dw = conv2d_grad_weight(&g, &x, d);
        let rhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_x).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![4.0, 5.0, 10.0, 11.0]);
    }
}
