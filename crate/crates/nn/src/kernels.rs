//! Raw compute kernels over component-major buffers.
//!
//! Every buffer here is laid out `[K, ...]` with `K` the algebra's component
//! count. Weights are stored once per submatrix. Dense layers run one
//! accumulating GEMM per [`Term`](crate::algebra::Term); convolutions build
//! the signed block matrix transiently so the large unfolded activations
//! are multiplied in a single GEMM.

use qgan_quat::{gemm, MatRef, Scalar};

use crate::algebra::Algebra;

/// Geometry of a 2-D cross-correlation from an `h x w` grid to `oh x ow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// `None` when the kernel does not fit the padded input.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        batch: usize,
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if kernel == 0 || stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
            return None;
        }
        Some(ConvGeom {
            batch,
            cin,
            cout,
            h,
            w,
            kernel,
            stride,
            padding,
            oh: (h + 2 * padding - kernel) / stride + 1,
            ow: (w + 2 * padding - kernel) / stride + 1,
        })
    }

    /// Geometry of the convolution whose input gradient is the transposed
    /// convolution taking `cin_t` channels on an `h x w` grid to `cout_t`
    /// channels on `(h-1)*stride - 2*padding + kernel` per side.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        batch: usize,
        cin_t: usize,
        cout_t: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if h == 0 || w == 0 || kernel == 0 || stride == 0 {
            return None;
        }
        let grow = |n: usize| ((n - 1) * stride + kernel).checked_sub(2 * padding).filter(|&v| v > 0);
        let (th, tw) = (grow(h)?, grow(w)?);
        let g = ConvGeom::conv(batch, cout_t, cin_t, th, tw, kernel, stride, padding)?;
        (g.oh == h && g.ow == w).then_some(g)
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn ncols(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    pub fn in_len(&self) -> usize {
        self.batch * self.cin * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.cout * self.oh * self.ow
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.col_rows()
    }
}

/// Unfold one component `[B, Cin, H, W]` into `[Cin*k*k, B*oh*ow]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.ncols();
    let plane = g.h * g.w;
    for ci in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for b in 0..g.batch {
                    let src = &x[(b * g.cin + ci) * plane..][..plane];
                    for oy in 0..g.oh {
                        let dst = &mut row[(b * g.oh + oy) * g.ow..][..g.ow];
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: fold columns back, accumulating into `dx`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.ncols();
    let plane = g.h * g.w;
    for ci in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for b in 0..g.batch {
                    let dst = &mut dx[(b * g.cin + ci) * plane..][..plane];
                    for oy in 0..g.oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &row[(b * g.oh + oy) * g.ow..][..g.ow];
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[B, C, P]` -> `[C, B*P]`.
fn gather<T: Scalar>(x: &[T], batch: usize, ch: usize, plane: usize) -> Vec<T> {
    let mut m = vec![T::zero(); x.len()];
    let n = batch * plane;
    for b in 0..batch {
        for c in 0..ch {
            m[c * n + b * plane..][..plane].copy_from_slice(&x[(b * ch + c) * plane..][..plane]);
        }
    }
    m
}

/// `[C, B*P]` -> `[B, C, P]`, adding a per-channel bias.
fn scatter<T: Scalar>(m: &[T], batch: usize, ch: usize, plane: usize, out: &mut [T], bias: Option<&[T]>) {
    let n = batch * plane;
    for b in 0..batch {
        for c in 0..ch {
            let dst = &mut out[(b * ch + c) * plane..][..plane];
            dst.copy_from_slice(&m[c * n + b * plane..][..plane]);
            if let Some(bias) = bias {
                for v in dst.iter_mut() {
                    *v += bias[c];
                }
            }
        }
    }
}

fn sign<T: Scalar>(s: f64) -> T {
    T::from_f64(s)
}

/// Gradients of a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub bias: Vec<T>,
}

/// Signed block matrix `[k*m, k*c]` of `k` row-major `m x c` submatrices,
/// built per call so one GEMM covers every term; storage stays shared.
fn assemble<T: Scalar>(alg: Algebra, w: &[T], m: usize, c: usize) -> Vec<T> {
    let k = alg.components();
    let ld = k * c;
    let mut big = vec![T::zero(); k * m * ld];
    for t in alg.terms() {
        let s: T = sign(t.sign);
        for r in 0..m {
            let src = &w[t.weight * m * c + r * c..][..c];
            let dst = &mut big[(t.out * m + r) * ld + t.input * c..][..c];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = s * v;
            }
        }
    }
    big
}

/// Adjoint of [`assemble`]: accumulates a `[k*m, k*c]` gradient into the
/// shared submatrices.
fn disassemble<T: Scalar>(alg: Algebra, big: &[T], m: usize, c: usize, gw: &mut [T]) {
    let ld = alg.components() * c;
    for t in alg.terms() {
        let s: T = sign(t.sign);
        for r in 0..m {
            let src = &big[(t.out * m + r) * ld + t.input * c..][..c];
            let dst = &mut gw[t.weight * m * c + r * c..][..c];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }
}

/// `im2col` of every component, stacked into `[K*rows, ncols]`.
fn stacked_cols<T: Scalar>(k: usize, x: &[T], g: &ConvGeom) -> Vec<T> {
    let (rows, n, il) = (g.col_rows(), g.ncols(), g.in_len());
    let mut cols = vec![T::zero(); k * rows * n];
    for (c, chunk) in cols.chunks_mut(rows * n).enumerate() {
        im2col(&x[c * il..][..il], g, chunk);
    }
    cols
}

/// `gather` of every component, stacked into `[K*C, B*P]`.
fn stacked_gather<T: Scalar>(k: usize, x: &[T], g: &ConvGeom) -> Vec<T> {
    let ol = g.out_len();
    (0..k)
        .flat_map(|a| gather(&x[a * ol..][..ol], g.batch, g.cout, g.oh * g.ow))
        .collect()
}

/// Block-structured convolution forward: `[K,B,Cin,H,W]` -> `[K,B,Cout,oh,ow]`.
pub fn conv_forward<T: Scalar>(alg: Algebra, g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let k = alg.components();
    let (rows, n, ol) = (g.col_rows(), g.ncols(), g.out_len());
    let cols = stacked_cols(k, x, g);
    let big = assemble(alg, w, g.cout, rows);
    let mut acc = vec![T::zero(); k * g.cout * n];
    gemm(
        T::one(),
        MatRef::new(&big, k * g.cout, k * rows),
        MatRef::new(&cols, k * rows, n),
        T::zero(),
        &mut acc,
    );
    let mut out = vec![T::zero(); k * ol];
    for a in 0..k {
        let b = bias.map(|b| &b[a * g.cout..][..g.cout]);
        scatter(
            &acc[a * g.cout * n..][..g.cout * n],
            g.batch,
            g.cout,
            g.oh * g.ow,
            &mut out[a * ol..][..ol],
            b,
        );
    }
    out
}

pub fn conv_backward<T: Scalar>(alg: Algebra, g: &ConvGeom, x: &[T], w: &[T], gout: &[T]) -> LinearGrads<T> {
    let k = alg.components();
    let (rows, n, il) = (g.col_rows(), g.ncols(), g.in_len());
    let gm = stacked_gather(k, gout, g);
    let bias = gm.chunks(n).map(|r| r.iter().copied().sum()).collect();
    let cols = stacked_cols(k, x, g);
    let gmat = MatRef::new(&gm, k * g.cout, n);
    let mut gbig = vec![T::zero(); k * g.cout * k * rows];
    gemm(
        T::one(),
        gmat,
        MatRef::new(&cols, k * rows, n).t(),
        T::zero(),
        &mut gbig,
    );
    let mut gw = vec![T::zero(); k * g.weight_len()];
    disassemble(alg, &gbig, g.cout, rows, &mut gw);
    let big = assemble(alg, w, g.cout, rows);
    let mut gcols = cols;
    gemm(
        T::one(),
        MatRef::new(&big, k * g.cout, k * rows).t(),
        gmat,
        T::zero(),
        &mut gcols,
    );
    let mut gx = vec![T::zero(); k * il];
    for (b, chunk) in gcols.chunks(rows * n).enumerate() {
        col2im(chunk, g, &mut gx[b * il..][..il]);
    }
    LinearGrads { x: gx, w: gw, bias }
}

/// Transposed convolution: the input gradient of the convolution described
/// by `g`, with `x: [K,B,g.cout,g.oh,g.ow]`, `w: [K,g.cout,g.cin,k,k]`,
/// producing `[K,B,g.cin,g.h,g.w]`.
pub fn conv_transpose_forward<T: Scalar>(alg: Algebra, g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let k = alg.components();
    let (rows, n, il) = (g.col_rows(), g.ncols(), g.in_len());
    let xm = stacked_gather(k, x, g);
    let big = assemble(alg, w, g.cout, rows);
    let mut cols = vec![T::zero(); k * rows * n];
    gemm(
        T::one(),
        MatRef::new(&big, k * g.cout, k * rows).t(),
        MatRef::new(&xm, k * g.cout, n),
        T::zero(),
        &mut cols,
    );
    let mut y = vec![T::zero(); k * il];
    let plane = g.h * g.w;
    for (b, chunk) in cols.chunks(rows * n).enumerate() {
        let yb = &mut y[b * il..][..il];
        col2im(chunk, g, yb);
        if let Some(bias) = bias {
            for (i, v) in yb.iter_mut().enumerate() {
                *v += bias[b * g.cin + (i / plane) % g.cin];
            }
        }
    }
    y
}

pub fn conv_transpose_backward<T: Scalar>(alg: Algebra, g: &ConvGeom, x: &[T], w: &[T], gy: &[T]) -> LinearGrads<T> {
    let k = alg.components();
    let (rows, n, ol, il) = (g.col_rows(), g.ncols(), g.out_len(), g.in_len());
    let plane = g.oh * g.ow;
    let cols = stacked_cols(k, gy, g);
    let colm = MatRef::new(&cols, k * rows, n);
    let big = assemble(alg, w, g.cout, rows);
    let mut acc = vec![T::zero(); k * g.cout * n];
    gemm(
        T::one(),
        MatRef::new(&big, k * g.cout, k * rows),
        colm,
        T::zero(),
        &mut acc,
    );
    let mut gx = vec![T::zero(); k * ol];
    for a in 0..k {
        scatter(
            &acc[a * g.cout * n..][..g.cout * n],
            g.batch,
            g.cout,
            plane,
            &mut gx[a * ol..][..ol],
            None,
        );
    }
    let xm = stacked_gather(k, x, g);
    let mut gbig = vec![T::zero(); k * g.cout * k * rows];
    gemm(
        T::one(),
        MatRef::new(&xm, k * g.cout, n),
        colm.t(),
        T::zero(),
        &mut gbig,
    );
    let mut gw = vec![T::zero(); k * g.weight_len()];
    disassemble(alg, &gbig, g.cout, rows, &mut gw);
    let mut bias = vec![T::zero(); k * g.cin];
    let pl = g.h * g.w;
    for b in 0..k {
        for (i, &v) in gy[b * il..][..il].iter().enumerate() {
            bias[b * g.cin + (i / pl) % g.cin] += v;
        }
    }
    LinearGrads { x: gx, w: gw, bias }
}

/// Block-structured dense layer: `[K,B,Cin]` x `[K,Cout,Cin]` -> `[K,B,Cout]`.
pub fn dense_forward<T: Scalar>(
    alg: Algebra,
    batch: usize,
    cin: usize,
    cout: usize,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let k = alg.components();
    let (xl, wl, yl) = (batch * cin, cout * cin, batch * cout);
    let mut y = vec![T::zero(); k * yl];
    for t in alg.terms() {
        let xm = MatRef::new(&x[t.input * xl..][..xl], batch, cin);
        let wm = MatRef::new(&w[t.weight * wl..][..wl], cout, cin).t();
        gemm(sign(t.sign), xm, wm, T::one(), &mut y[t.out * yl..][..yl]);
    }
    if let Some(bias) = bias {
        for a in 0..k {
            for row in y[a * yl..][..yl].chunks_mut(cout) {
                for (v, &b) in row.iter_mut().zip(&bias[a * cout..][..cout]) {
                    *v += b;
                }
            }
        }
    }
    y
}

pub fn dense_backward<T: Scalar>(
    alg: Algebra,
    batch: usize,
    cin: usize,
    cout: usize,
    x: &[T],
    w: &[T],
    gy: &[T],
) -> LinearGrads<T> {
    let k = alg.components();
    let (xl, wl, yl) = (batch * cin, cout * cin, batch * cout);
    let mut gx = vec![T::zero(); k * xl];
    let mut gw = vec![T::zero(); k * wl];
    for t in alg.terms() {
        let gm = MatRef::new(&gy[t.out * yl..][..yl], batch, cout);
        let wm = MatRef::new(&w[t.weight * wl..][..wl], cout, cin);
        gemm(sign(t.sign), gm, wm, T::one(), &mut gx[t.input * xl..][..xl]);
        let xm = MatRef::new(&x[t.input * xl..][..xl], batch, cin);
        gemm(sign(t.sign), gm.t(), xm, T::one(), &mut gw[t.weight * wl..][..wl]);
    }
    let mut bias = vec![T::zero(); k * cout];
    for a in 0..k {
        for row in gy[a * yl..][..yl].chunks(cout) {
            for (b, &v) in bias[a * cout..][..cout].iter_mut().zip(row) {
                *b += v;
            }
        }
    }
    LinearGrads { x: gx, w: gw, bias }
}

/// Window pooling over `maps` independent `h x w` planes.
pub fn pool_forward<T: Scalar>(x: &[T], maps: usize, h: usize, w: usize, win: usize, average: bool) -> Vec<T> {
    let (oh, ow) = (h / win, w / win);
    let scale = if average {
        T::one() / T::from_f64((win * win) as f64)
    } else {
        T::one()
    };
    let mut out = vec![T::zero(); maps * oh * ow];
    for m in 0..maps {
        let src = &x[m * h * w..][..h * w];
        let dst = &mut out[m * oh * ow..][..oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / win) * ow + xx / win] += src[y * w + xx];
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    out
}

pub fn pool_backward<T: Scalar>(gy: &[T], maps: usize, h: usize, w: usize, win: usize, average: bool) -> Vec<T> {
    let (oh, ow) = (h / win, w / win);
    let scale = if average {
        T::one() / T::from_f64((win * win) as f64)
    } else {
        T::one()
    };
    let mut gx = vec![T::zero(); maps * h * w];
    for m in 0..maps {
        let src = &gy[m * oh * ow..][..oh * ow];
        let dst = &mut gx[m * h * w..][..h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / win) * ow + xx / win] * scale;
            }
        }
    }
    gx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_forward<T: Scalar>(x: &[T], maps: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::zero(); maps * oh * ow];
    for m in 0..maps {
        let src = &x[m * h * w..][..h * w];
        let dst = &mut out[m * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / f) * w + xx / f];
            }
        }
    }
    out
}

pub fn upsample_backward<T: Scalar>(gy: &[T], maps: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut gx = vec![T::zero(); maps * h * w];
    for m in 0..maps {
        let src = &gy[m * oh * ow..][..oh * ow];
        let dst = &mut gx[m * h * w..][..h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / f) * w + xx / f] += src[y * ow + xx];
            }
        }
    }
    gx
}

/// Amplitude-guided max pooling over quaternion planes `[4, maps, h, w]`.
///
/// Returns the pooled buffer, the winning flat in-plane index for every
/// output position, and the smallest gap between the winning amplitude and
/// the runner-up (how close the selection is to switching).
pub fn guided_max_pool<T: Scalar>(x: &[T], maps: usize, h: usize, w: usize, win: usize) -> (Vec<T>, Vec<usize>, f64) {
    let (oh, ow) = (h / win, w / win);
    let n_in = maps * h * w;
    let n_out = maps * oh * ow;
    let mut out = vec![T::zero(); 4 * n_out];
    let mut arg = vec![0usize; n_out];
    let mut gap = f64::INFINITY;
    let amp = |i: usize| -> f64 { (0..4).map(|c| x[c * n_in + i].to_f64().powi(2)).sum::<f64>().sqrt() };
    for m in 0..maps {
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut best, mut best_a, mut second) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for dy in 0..win {
                    for dx in 0..win {
                        let idx = (oy * win + dy) * w + ox * win + dx;
                        let a = amp(m * h * w + idx);
                        if a > best_a {
                            second = best_a;
                            best_a = a;
                            best = idx;
                        } else if a > second {
                            second = a;
                        }
                    }
                }
                if win > 1 {
                    gap = gap.min(best_a - second);
                }
                let o = m * oh * ow + oy * ow + ox;
                arg[o] = best;
                for c in 0..4 {
                    out[c * n_out + o] = x[c * n_in + m * h * w + best];
                }
            }
        }
    }
    (out, arg, gap)
}

pub fn guided_max_pool_backward<T: Scalar>(
    gy: &[T],
    arg: &[usize],
    maps: usize,
    h: usize,
    w: usize,
    win: usize,
) -> Vec<T> {
    let (oh, ow) = (h / win, w / win);
    let n_in = maps * h * w;
    let n_out = maps * oh * ow;
    let mut gx = vec![T::zero(); 4 * n_in];
    for o in 0..n_out {
        let m = o / (oh * ow);
        for c in 0..4 {
            gx[c * n_in + m * h * w + arg[o]] += gy[c * n_out + o];
        }
    }
    gx
}

/// Batch statistics saved by the training-mode normalization forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnSaved<T> {
    pub xhat: Vec<T>,
    /// `1/sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
    /// Per-component channel means, `[K, C]`.
    pub mean: Vec<T>,
    /// Summed per-component variances per channel, `[C]`.
    pub var: Vec<T>,
}

/// Batch dimensions of a normalization input `[K, B, C, S]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnDims {
    pub k: usize,
    pub batch: usize,
    pub ch: usize,
    pub spatial: usize,
}

impl BnDims {
    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        ((a * self.batch + b) * self.ch + c) * self.spatial
    }

    fn count(&self) -> usize {
        self.batch * self.spatial
    }
}

/// Per-channel mean per component and the variance summed over components
/// (for quaternions this is the `4σ²` of the proper model).
pub fn channel_stats<T: Scalar>(d: &BnDims, x: &[T]) -> (Vec<T>, Vec<T>) {
    let nf = T::from_f64(d.count() as f64);
    let mut mean = vec![T::zero(); d.k * d.ch];
    let mut var = vec![T::zero(); d.ch];
    for a in 0..d.k {
        for c in 0..d.ch {
            let mut s = T::zero();
            for b in 0..d.batch {
                s += x[d.idx(a, b, c)..][..d.spatial].iter().copied().sum();
            }
            let mu = s / nf;
            mean[a * d.ch + c] = mu;
            let mut v = T::zero();
            for b in 0..d.batch {
                v += x[d.idx(a, b, c)..][..d.spatial]
                    .iter()
                    .map(|&t| (t - mu) * (t - mu))
                    .sum();
            }
            var[c] += v / nf;
        }
    }
    (mean, var)
}

pub fn bn_train_forward<T: Scalar>(d: &BnDims, x: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, BnSaved<T>) {
    let (mean, var) = channel_stats(d, x);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for a in 0..d.k {
        for b in 0..d.batch {
            for c in 0..d.ch {
                let i0 = d.idx(a, b, c);
                let (mu, is) = (mean[a * d.ch + c], inv_std[c]);
                for i in i0..i0 + d.spatial {
                    let xh = (x[i] - mu) * is;
                    xhat[i] = xh;
                    y[i] = gamma[c] * xh + beta[a * d.ch + c];
                }
            }
        }
    }
    (
        y,
        BnSaved {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_train_backward<T: Scalar>(d: &BnDims, saved: &BnSaved<T>, gamma: &[T], gy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let nf = T::from_f64(d.count() as f64);
    let mut dgamma = vec![T::zero(); d.ch];
    let mut dbeta = vec![T::zero(); d.k * d.ch];
    for a in 0..d.k {
        for b in 0..d.batch {
            for c in 0..d.ch {
                let i0 = d.idx(a, b, c);
                for i in i0..i0 + d.spatial {
                    dgamma[c] += gy[i] * saved.xhat[i];
                    dbeta[a * d.ch + c] += gy[i];
                }
            }
        }
    }
    let mut dx = vec![T::zero(); gy.len()];
    for a in 0..d.k {
        for b in 0..d.batch {
            for c in 0..d.ch {
                let i0 = d.idx(a, b, c);
                let mean_g = dbeta[a * d.ch + c] / nf;
                let proj = dgamma[c] / nf;
                let scale = gamma[c] * saved.inv_std[c];
                for i in i0..i0 + d.spatial {
                    dx[i] = scale * (gy[i] - mean_g - saved.xhat[i] * proj);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn bn_eval_forward<T: Scalar>(
    d: &BnDims,
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for a in 0..d.k {
        for b in 0..d.batch {
            for c in 0..d.ch {
                let i0 = d.idx(a, b, c);
                let is = T::one() / (var[c] + eps).sqrt();
                for i in i0..i0 + d.spatial {
                    y[i] = gamma[c] * (x[i] - mean[a * d.ch + c]) * is + beta[a * d.ch + c];
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 6-loop cross-correlation on one component.
    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.out_len()];
        for b in 0..g.batch {
            for o in 0..g.cout {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut s = 0.0;
                        for c in 0..g.cin {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    s += x[((b * g.cin + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((o * g.cin + c) * g.kernel + ky) * g.kernel + kx];
                                }
                            }
                        }
                        y[((b * g.cout + o) * g.oh + oy) * g.ow + ox] = s;
                    }
                }
            }
        }
        y
    }

    fn seq(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 0.7311).sin()).collect()
    }

    #[test]
    fn real_conv_matches_naive_loops() {
        for (k, s, p) in [(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 0)] {
            let g = ConvGeom::conv(2, 3, 5, 7, 6, k, s, p).unwrap();
            let x = seq(g.in_len(), 0.3);
            let w = seq(g.weight_len(), 1.9);
            let y = conv_forward(Algebra::Real, &g, &x, &w, None);
            let want = naive_conv(&x, &w, &g);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::conv(2, 2, 1, 5, 5, 3, 2, 1).unwrap();
        let x = seq(g.in_len(), 0.1);
        let c = seq(g.col_rows() * g.ncols(), 4.2);
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_geometry() {
        let g = ConvGeom::transposed(1, 8, 4, 8, 8, 4, 2, 1).unwrap();
        assert_eq!((g.h, g.w, g.oh, g.ow, g.cin, g.cout), (16, 16, 8, 8, 4, 8));
        assert!(ConvGeom::conv(1, 1, 1, 2, 2, 5, 1, 1).is_none());
    }

    #[test]
    fn pooling_and_upsampling() {
        let ones = vec![1.0; 16];
        assert_eq!(pool_forward(&ones, 1, 4, 4, 2, false), vec![4.0; 4]);
        assert_eq!(pool_forward(&ones, 1, 4, 4, 2, true), vec![1.0; 4]);
        let up = upsample_forward(&[1.0, 2.0, 3.0, 4.0], 1, 2, 2, 2);
        assert_eq!(&up[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample_backward(&up, 1, 2, 2, 2), vec![4.0, 8.0, 12.0, 16.0]);
    }
}
