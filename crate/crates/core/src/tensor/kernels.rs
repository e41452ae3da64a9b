//! Dense loops behind the differentiable ops. Inner loops run over contiguous
//! memory so they vectorize.

use crate::scalar::Scalar;

/// `[m×k]·[k×n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut out, n as isize, 1);
    out
}

/// `g[m×n]·bᵀ` where `b` is `[k×n]`.
pub(crate) fn matmul_bt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    T::gemm(m, n, k, g, n as isize, 1, b, 1, n as isize, &mut out, k as isize, 1);
    out
}

/// `aᵀ·g` where `a` is `[m×k]` and `g` is `[m×n]`.
pub(crate) fn matmul_at<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    T::gemm(k, m, n, a, 1, k as isize, g, n as isize, 1, &mut out, n as isize, 1);
    out
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += x * y;
    }
    let pairs = [
        lanes[0] + lanes[4],
        lanes[1] + lanes[5],
        lanes[2] + lanes[6],
        lanes[3] + lanes[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + acc
}

/// Sum that does not depend on the order of `values` (sorts in place first).
pub(crate) fn sorted_sum<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = T::zero();
    for &v in values.iter() {
        acc += v;
    }
    acc
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one image `[C×H×W]` into `[(C·kh·kw)×(out_h·out_w)]`.
fn im2col<T: Scalar>(image: &[T], d: ConvDims, cols: &mut [T]) {
    let pixels = d.pixels();
    for c in 0..d.channels {
        let plane = &image[c * d.height * d.width..][..d.height * d.width];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut cols[((c * d.kh + ky) * d.kw + kx) * pixels..][..pixels];
                for oy in 0..d.out_h {
                    let src = &plane[(oy * d.stride + ky) * d.width + kx..];
                    let dst = &mut row[oy * d.out_w..(oy + 1) * d.out_w];
                    if d.stride == 1 {
                        dst.copy_from_slice(&src[..d.out_w]);
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            *v = src[ox * d.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Scalar>(cols: &[T], d: ConvDims, image: &mut [T]) {
    let pixels = d.pixels();
    for c in 0..d.channels {
        let plane = &mut image[c * d.height * d.width..][..d.height * d.width];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &cols[((c * d.kh + ky) * d.kw + kx) * pixels..][..pixels];
                for oy in 0..d.out_h {
                    let base = (oy * d.stride + ky) * d.width + kx;
                    let src = &row[oy * d.out_w..(oy + 1) * d.out_w];
                    if d.stride == 1 {
                        for (dst, &v) in plane[base..base + d.out_w].iter_mut().zip(src) {
                            *dst += v;
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate() {
                            plane[base + ox * d.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(input: &[T], kernel: &[T], d: ConvDims) -> Vec<T> {
    let in_size = d.channels * d.height * d.width;
    let out_size = d.filters * d.pixels();
    let mut cols = vec![T::zero(); d.patch() * d.pixels()];
    let mut out = Vec::with_capacity(d.batch * out_size);
    for b in 0..d.batch {
        im2col(&input[b * in_size..][..in_size], d, &mut cols);
        out.extend(matmul(kernel, &cols, d.filters, d.patch(), d.pixels()));
    }
    out
}

/// Gradient of the kernel given upstream gradient `g` of the output.
pub(crate) fn conv2d_grad_kernel<T: Scalar>(input: &[T], g: &[T], d: ConvDims) -> Vec<T> {
    let in_size = d.channels * d.height * d.width;
    let out_size = d.filters * d.pixels();
    let mut cols = vec![T::zero(); d.patch() * d.pixels()];
    let mut gk = vec![T::zero(); d.filters * d.patch()];
    for b in 0..d.batch {
        im2col(&input[b * in_size..][..in_size], d, &mut cols);
        let part = matmul_bt(&g[b * out_size..][..out_size], &cols, d.filters, d.pixels(), d.patch());
        for (acc, v) in gk.iter_mut().zip(part) {
            *acc += v;
        }
    }
    gk
}

/// Gradient of the input: transposed correlation of `g` with the kernel.
pub(crate) fn conv2d_grad_input<T: Scalar>(kernel: &[T], g: &[T], d: ConvDims) -> Vec<T> {
    let in_size = d.channels * d.height * d.width;
    let out_size = d.filters * d.pixels();
    let mut gi = vec![T::zero(); d.batch * in_size];
    for b in 0..d.batch {
        let cols = matmul_at(kernel, &g[b * out_size..][..out_size], d.filters, d.patch(), d.pixels());
        col2im(&cols, d, &mut gi[b * in_size..][..in_size]);
    }
    gi
}
