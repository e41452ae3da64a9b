use std::rc::Rc;

use super::array::Tensor;
use super::kernels::{self, ConvDims};
use super::tape::{BinaryKind, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_same_tape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "vars from different tapes cannot be combined"
    );
}

fn check_segments(op: &'static str, rows: usize, segments: &[usize], num: usize) -> Result<Vec<usize>> {
    if segments.len() != rows {
        return Err(Error::Dimension {
            op,
            msg: format!("{} segment ids for {rows} rows", segments.len()),
        });
    }
    let mut counts = vec![0usize; num];
    for &s in segments {
        if s >= num {
            return Err(Error::Dimension {
                op,
                msg: format!("segment id {s} out of range for {num} segments"),
            });
        }
        counts[s] += 1;
    }
    if let Some(segment) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptySegment { op, segment });
    }
    Ok(counts)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = kernels::matmul(a.data(), b.data(), m, k, n);
        Ok(self
            .tape
            .push(Tensor::from_parts(vec![m, n], out), Op::MatMul(self.id, other.id)))
    }

    fn binary(self, other: Var<'t, T>, kind: BinaryKind, op: &'static str) -> Result<Var<'t, T>> {
        check_same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let broadcast_b = a.shape() != b.shape();
        if broadcast_b && !b.is_scalar() {
            return Err(Error::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let data = if broadcast_b {
            let y = b.data()[0];
            a.data().iter().map(|&x| f(x, y)).collect()
        } else {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), data),
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
                broadcast_b,
            },
        ))
    }

    /// Pointwise sum; `other` may also be a one-element tensor.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * factor);
        self.tape.push(out, Op::Scale(self.id, factor))
    }

    pub fn relu(self) -> Var<'t, T> {
        let out = self
            .value()
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape.push(out, Op::Relu(self.id))
    }

    /// Adds a length-`cols` vector to every row of a matrix.
    pub fn add_row(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(bias, false)
    }

    /// Multiplies every row of a matrix elementwise by a length-`cols` vector.
    pub fn mul_row(self, scale: Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast(scale, true)
    }

    fn row_broadcast(self, vector: Var<'t, T>, multiply: bool) -> Result<Var<'t, T>> {
        check_same_tape(&self, &vector);
        let op = if multiply { "mul_row" } else { "add_row" };
        let (a, v) = (self.value(), vector.value());
        let (rows, cols) = a.dims2(op)?;
        if v.numel() != cols {
            return Err(Error::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        for r in 0..rows {
            for (x, &y) in data[r * cols..(r + 1) * cols].iter_mut().zip(v.data()) {
                if multiply {
                    *x *= y;
                } else {
                    *x += y;
                }
            }
        }
        let value = Tensor::from_parts(vec![rows, cols], data);
        let node = if multiply {
            Op::MulRow(self.id, vector.id)
        } else {
            Op::AddRow(self.id, vector.id)
        };
        Ok(self.tape.push(value, node))
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn concat(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let (m, p) = a.dims2("concat")?;
        let (m2, q) = b.dims2("concat")?;
        if m != m2 {
            return Err(Error::Shape {
                op: "concat",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, p + q], data),
            Op::Concat(self.id, other.id),
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let (m, cols) = a.dims2("slice_cols")?;
        if start >= end || end > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                msg: format!("range {start}..{end} invalid for {cols} columns"),
            });
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, end - start], data),
            Op::SliceCols { a: self.id, start },
        ))
    }

    /// Row `i` of the output is row `index[i]` of `self`.
    pub fn gather_rows(self, index: Rc<[usize]>) -> Result<Var<'t, T>> {
        let a = self.value();
        let (m, cols) = a.dims2("gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Dimension {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {m} rows"),
            });
        }
        if index.is_empty() {
            return Err(Error::Dimension {
                op: "gather_rows",
                msg: "empty index".into(),
            });
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(a.row(i));
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![index.len(), cols], data),
            Op::GatherRows { a: self.id, index },
        ))
    }

    /// Per-segment, per-column maximum. Gradient goes to the first maximal row.
    pub fn segment_max(self, segments: &[usize], num_segments: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let (rows, cols) = a.dims2("segment_max")?;
        check_segments("segment_max", rows, segments, num_segments)?;
        let mut best: Vec<Option<usize>> = vec![None; num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let slot = &mut best[s * cols + c];
                match *slot {
                    Some(prev) if a.data()[prev * cols + c] >= a.data()[r * cols + c] => {}
                    _ => *slot = Some(r),
                }
            }
        }
        let argmax: Vec<usize> = best.into_iter().map(|b| b.expect("segments non-empty")).collect();
        let data = argmax
            .iter()
            .enumerate()
            .map(|(i, &r)| a.data()[r * cols + i % cols])
            .collect();
        Ok(self.tape.push(
            Tensor::from_parts(vec![num_segments, cols], data),
            Op::SegmentMax { a: self.id, argmax },
        ))
    }

    /// Per-segment column means. The sum is order independent, so permuting
    /// rows within a segment leaves the result bit-identical.
    pub fn segment_mean(self, segments: &[usize], num_segments: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        let (rows, cols) = a.dims2("segment_mean")?;
        let counts = check_segments("segment_mean", rows, segments, num_segments)?;
        let members = segment_members(segments, num_segments);
        let mut data = vec![T::zero(); num_segments * cols];
        let mut scratch = Vec::new();
        for (s, rows_in) in members.iter().enumerate() {
            let n = T::of(rows_in.len() as f64);
            for c in 0..cols {
                scratch.clear();
                scratch.extend(rows_in.iter().map(|&r| a.data()[r * cols + c]));
                data[s * cols + c] = kernels::sorted_sum(&mut scratch) / n;
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![num_segments, cols], data),
            Op::SegmentMean {
                a: self.id,
                segments: segments.into(),
                counts,
            },
        ))
    }

    /// `(x − μ) / (σ + eps)` per segment and column, with population σ.
    pub fn segment_standardize(
        self,
        segments: &[usize],
        num_segments: usize,
        eps: T,
    ) -> Result<Var<'t, T>> {
        let a = self.value();
        let (rows, cols) = a.dims2("segment_standardize")?;
        let counts = check_segments("segment_standardize", rows, segments, num_segments)?;
        let members = segment_members(segments, num_segments);
        let mut mean = vec![T::zero(); num_segments * cols];
        let mut std = vec![T::zero(); num_segments * cols];
        let mut scratch = Vec::new();
        for (s, rows_in) in members.iter().enumerate() {
            let n = T::of(rows_in.len() as f64);
            for c in 0..cols {
                scratch.clear();
                scratch.extend(rows_in.iter().map(|&r| a.data()[r * cols + c]));
                let mu = kernels::sorted_sum(&mut scratch) / n;
                for v in scratch.iter_mut() {
                    *v = (*v - mu) * (*v - mu);
                }
                let var = kernels::sorted_sum(&mut scratch) / n;
                mean[s * cols + c] = mu;
                std[s * cols + c] = var.sqrt();
            }
        }
        let mut data = a.data().to_vec();
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let j = s * cols + c;
                data[r * cols + c] = (data[r * cols + c] - mean[j]) / (std[j] + eps);
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::SegmentStandardize {
                a: self.id,
                segments: segments.into(),
                counts,
                mean,
                std,
                eps,
            },
        ))
    }

    /// Valid (unpadded) cross-correlation of `[B×C×H×W]` with `[F×C×kh×kw]`.
    pub fn conv2d(self, kernel: Var<'t, T>, stride: usize) -> Result<Var<'t, T>> {
        check_same_tape(&self, &kernel);
        let (x, k) = (self.value(), kernel.value());
        let [batch, channels, height, width] = x.dims4("conv2d")?;
        let [filters, kc, kh, kw] = k.dims4("conv2d")?;
        if kc != channels || kh > height || kw > width || stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        let dims = ConvDims {
            batch,
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            out_h: (height - kh) / stride + 1,
            out_w: (width - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(x.data(), k.data(), dims);
        Ok(self.tape.push(
            Tensor::from_parts(vec![batch, filters, dims.out_h, dims.out_w], out),
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                dims,
            },
        ))
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn add_channel_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &bias);
        let (x, b) = (self.value(), bias.value());
        let [batch, ch, h, w] = x.dims4("add_channel_bias")?;
        if b.numel() != ch {
            return Err(Error::Shape {
                op: "add_channel_bias",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for bi in 0..batch {
            for c in 0..ch {
                let start = (bi * ch + c) * h * w;
                for v in &mut data[start..start + h * w] {
                    *v += b.data()[c];
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::AddChannelBias(self.id, bias.id),
        ))
    }

    /// Non-overlapping `window×window` max pooling.
    pub fn maxpool2d(self, window: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let [batch, ch, h, w] = x.dims4("maxpool2d")?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::Dimension {
                op: "maxpool2d",
                msg: format!("window {window} does not divide {h}×{w}"),
            });
        }
        let (oh, ow) = (h / window, w / window);
        let mut data = Vec::with_capacity(batch * ch * oh * ow);
        let mut argmax = Vec::with_capacity(batch * ch * oh * ow);
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * window * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = base + (oy * window + dy) * w + ox * window + dx;
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                    }
                    argmax.push(best);
                    data.push(x.data()[best]);
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![batch, ch, oh, ow], data),
            Op::MaxPool2d { a: self.id, argmax },
        ))
    }

    /// `[B×C×H×W] → [B×C]` spatial mean.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let [batch, ch, h, w] = x.dims4("global_avg_pool")?;
        let n = T::of((h * w) as f64);
        let data = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / n)
            .collect();
        Ok(self.tape.push(
            Tensor::from_parts(vec![batch, ch], data),
            Op::GlobalAvgPool(self.id),
        ))
    }

    pub fn sum(self) -> Var<'t, T> {
        let s: T = self.value().data().iter().copied().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let x = self.value();
        let s: T = x.data().iter().copied().sum();
        let m = s / T::of(x.numel() as f64);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Mean over rows of `−log softmax(logits)[label]`, evaluated with log-sum-exp.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let (batch, classes) = x.dims2("softmax_cross_entropy")?;
        if labels.len() != batch {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                msg: format!("{} labels for {batch} rows", labels.len()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += (max - row[label]) + sum_exp.ln();
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = total / T::of(batch as f64);
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `S[i][j] = aᵢ·bⱼ / ((‖aᵢ‖+ε)(‖bⱼ‖+ε))` with ε = 1e-12; zero rows give 0.
    pub fn cosine_similarity_matrix(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        check_same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let (n, d) = a.dims2("cosine_similarity_matrix")?;
        let (m, d2) = b.dims2("cosine_similarity_matrix")?;
        if d != d2 {
            return Err(Error::Shape {
                op: "cosine_similarity_matrix",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let eps = T::of(1e-12);
        let norms = |x: &Tensor<T>, rows: usize| -> Vec<T> {
            (0..rows).map(|r| kernels::dot(x.row(r), x.row(r)).sqrt()).collect()
        };
        let norms_a = norms(&a, n);
        let norms_b = norms(&b, m);
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let s = kernels::dot(a.row(i), b.row(j)) / ((norms_a[i] + eps) * (norms_b[j] + eps));
                data.push(s);
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![n, m], data),
            Op::CosineSimilarity {
                a: self.id,
                b: other.id,
                norms_a,
                norms_b,
                eps,
            },
        ))
    }
}

fn segment_members(segments: &[usize], num: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); num];
    for (r, &s) in segments.iter().enumerate() {
        members[s].push(r);
    }
    members
}
