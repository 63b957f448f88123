//! Hot numeric loops shared by the autodiff graph and the inference path.
//!
//! Convolution is lowered to im2col followed by a small matrix multiply; the
//! multiply kernels keep the innermost loop over contiguous slices so the
//! compiler can vectorize them.

/// `out[m x n] += a[m x k] * b[k x n]`.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m x n] = a[m x k] * b[k x n]` (overwrites `out`).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    matmul_acc(a, b, m, k, n, out);
}

/// `out[m x n] += a[m x k] * b[n x k]^T`, i.e. rows of `a` dotted with rows
/// of `b`. Both operands are walked contiguously.
pub fn matmul_abt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`: accumulates scaled rows of `b`.
pub fn matmul_atb_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Unfolds one `C x H x W` sample into columns of shape
/// `(C*kh*kw) x (H_out*W_out)`, zero-padding out-of-range taps.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    cols: &mut [f64],
) {
    let h_out = conv_out_len(h, kh, stride, padding);
    let w_out = conv_out_len(w, kw, stride, padding);
    let spatial = h_out * w_out;
    debug_assert_eq!(input.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * spatial);
    cols.fill(0.0);
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * spatial;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * w_out + ox] = plane[iy * w + ix as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back onto the input.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    input_grad: &mut [f64],
) {
    let h_out = conv_out_len(h, kh, stride, padding);
    let w_out = conv_out_len(w, kw, stride, padding);
    let spatial = h_out * w_out;
    debug_assert_eq!(input_grad.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * spatial);
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * spatial;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        input_grad[base + ix as usize] += cols[row + oy * w_out + ox];
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2 over one `H x W` plane. Trailing odd rows
/// and columns are dropped. Records the flat input index of each maximum in
/// `switches` for the backward scatter.
pub fn maxpool2_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    out: &mut [f64],
    switches: &mut [u32],
) {
    let h_out = h / 2;
    let w_out = w / 2;
    debug_assert_eq!(plane.len(), h * w);
    debug_assert_eq!(out.len(), h_out * w_out);
    debug_assert_eq!(switches.len(), h_out * w_out);
    for oy in 0..h_out {
        for ox in 0..w_out {
            let i00 = (2 * oy) * w + 2 * ox;
            let i01 = i00 + 1;
            let i10 = i00 + w;
            let i11 = i10 + 1;
            let mut best = i00;
            if plane[i01] > plane[best] {
                best = i01;
            }
            if plane[i10] > plane[best] {
                best = i10;
            }
            if plane[i11] > plane[best] {
                best = i11;
            }
            out[oy * w_out + ox] = plane[best];
            switches[oy * w_out + ox] = best as u32;
        }
    }
}

/// Numerically stable row-wise softmax of an `rows x cols` matrix.
pub fn softmax_rows(input: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(input.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let row = &input[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(input: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(input.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let row = &input[r * cols..(r + 1) * cols];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_z = max + sum.ln();
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = v - log_z;
        }
    }
}
