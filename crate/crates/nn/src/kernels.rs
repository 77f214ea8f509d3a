//! Raw convolution kernels: im2col lowering onto a dense GEMM.

/// `c = alpha * op(a) * op(b) + beta * c`, row-major, where `op(a)` is `m x k`
/// and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are checked above and the strides describe
    // exactly those row-major (or transposed) layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Lower one `[c, h, w]` sample into `[c * k * k, h * w]` columns for a
/// stride-1 convolution with zero padding `pad`.
pub fn im2col(src: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [f64]) {
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[c, h, w]` sample.
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, dst: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    for x in 0..w {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Forward same-size convolution of a whole batch.
///
/// `x` is `[n, cin, h, w]`, `weight` is `[cout, cin, k, k]`, output `[n, cout, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    let hw = h * w;
    let kk = cin * k * k;
    let pad = k / 2;
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for b in 0..n {
        let xs = &x[b * cin * hw..(b + 1) * cin * hw];
        let ys = &mut out[b * cout * hw..(b + 1) * cout * hw];
        for (co, plane) in ys.chunks_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        if k == 1 {
            gemm(cout, kk, hw, weight, false, xs, false, ys, 1.0);
        } else {
            im2col(xs, cin, h, w, k, pad, &mut cols);
            gemm(cout, kk, hw, weight, false, &cols, false, ys, 1.0);
        }
    }
}

/// Backward pass of [`conv2d_forward`]. Accumulates into `dweight`/`dbias`
/// and, when given, writes (overwrites) the input gradient `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    dy: &[f64],
    dweight: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let hw = h * w;
    let kk = cin * k * k;
    let pad = k / 2;
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    let mut dcols = vec![0.0; kk * hw];
    let mut dweight = dweight;
    let mut dbias = dbias;
    let mut dx = dx;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }
    for b in 0..n {
        let xs = &x[b * cin * hw..(b + 1) * cin * hw];
        let dys = &dy[b * cout * hw..(b + 1) * cout * hw];
        if let Some(db) = dbias.as_deref_mut() {
            for (co, plane) in dys.chunks(hw).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dweight.as_deref_mut() {
            if k == 1 {
                gemm(cout, hw, kk, dys, false, xs, true, dw, 1.0);
            } else {
                im2col(xs, cin, h, w, k, pad, &mut cols);
                gemm(cout, hw, kk, dys, false, &cols, true, dw, 1.0);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[b * cin * hw..(b + 1) * cin * hw];
            if k == 1 {
                gemm(kk, cout, hw, weight, true, dys, false, dxs, 0.0);
            } else {
                gemm(kk, cout, hw, weight, true, dys, false, &mut dcols, 0.0);
                col2im(&dcols, cin, h, w, k, pad, dxs);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        cout: usize,
        k: usize,
    ) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += x[(ci * h + sy as usize) * w + sx as usize]
                                        * wt[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        for k in [1, 3] {
            let x: Vec<f64> = (0..cin * h * w)
                .map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5)
                .collect();
            let wt: Vec<f64> = (0..cout * cin * k * k)
                .map(|i| ((i * 5) % 7) as f64 * 0.2 - 0.6)
                .collect();
            let bias = vec![0.0; cout];
            let mut out = vec![0.0; cout * h * w];
            conv2d_forward(&x, 1, cin, h, w, &wt, &bias, cout, k, &mut out);
            let expect = naive_conv(&x, cin, h, w, &wt, cout, k);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (2, 4, 3, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64).sin()).collect();
        let ycols: Vec<f64> = (0..c * k * k * h * w)
            .map(|i| (i as f64 * 0.37).cos())
            .collect();
        let mut cols = vec![0.0; c * k * k * h * w];
        im2col(&x, c, h, w, k, 1, &mut cols);
        let lhs: f64 = cols.iter().zip(&ycols).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im(&ycols, c, h, w, k, 1, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
