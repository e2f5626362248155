//! Forward kernels over 2-D tensors.
//!
//! Every kernel validates its input shapes and reports the kernel name and
//! both offending shapes on mismatch. Kernels are pure and deterministic.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

fn mismatch(kernel: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        kernel,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_2d(kernel: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::Shape {
        kernel,
        lhs: t.shape().to_vec(),
        rhs: vec![],
    })
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0f32;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d("matmul", a)?;
    let (k2, n) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

fn zip_map(kernel: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(kernel, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_map("mul", a, b, |x, y| x * y)
}

/// Add a `1×n` row to every row of an `m×n` matrix.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (_, n) = require_2d("add_row", a)?;
    if row.dims2() != Some((1, n)) {
        return Err(mismatch("add_row", a, row));
    }
    let r = row.data();
    let data = a
        .data()
        .chunks(n)
        .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn scale(a: &Tensor, c: f32) -> Tensor {
    map(a, |x| x * c)
}

pub fn map(a: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f32::tanh)
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(a: &Tensor) -> Tensor {
    map(a, gelu_scalar)
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
        return Err(Error::NonFinite(format!("log of {bad}")));
    }
    Ok(map(a, f32::ln))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(a: &Tensor) -> Result<Tensor> {
    let (_, n) = require_2d("softmax", a)?;
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn sum(a: &Tensor) -> Tensor {
    let s: f64 = a.data().iter().map(|&v| f64::from(v)).sum();
    Tensor::scalar(s as f32)
}

/// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let (r0, c0) = require_2d("concat", first)?;
    for p in parts {
        let (r, c) = require_2d("concat", p)?;
        let ok = match axis {
            0 => c == c0,
            1 => r == r0,
            _ => return Err(Error::invalid(format!("concat axis {axis} out of range"))),
        };
        if !ok {
            return Err(mismatch("concat", first, p));
        }
    }
    if axis == 0 {
        let rows: usize = parts.iter().map(|p| p.shape()[0]).sum();
        let mut data = Vec::with_capacity(rows * c0);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Ok(Tensor::from_parts(vec![rows, c0], data))
    } else {
        let cols: usize = parts.iter().map(|p| p.shape()[1]).sum();
        let mut data = Vec::with_capacity(r0 * cols);
        for r in 0..r0 {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor::from_parts(vec![r0, cols], data))
    }
}

/// Rows `start..end` (axis 0) or columns `start..end` (axis 1).
pub fn slice(a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let (r, c) = require_2d("slice", a)?;
    let limit = match axis {
        0 => r,
        1 => c,
        _ => return Err(Error::invalid(format!("slice axis {axis} out of range"))),
    };
    if start >= end || end > limit {
        return Err(Error::Shape {
            kernel: "slice",
            lhs: a.shape().to_vec(),
            rhs: vec![axis, start, end],
        });
    }
    if axis == 0 {
        Ok(Tensor::from_parts(
            vec![end - start, c],
            a.data()[start * c..end * c].to_vec(),
        ))
    } else {
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in 0..r {
            data.extend_from_slice(&a.row(row)[start..end]);
        }
        Ok(Tensor::from_parts(vec![r, w], data))
    }
}

/// Embedding lookup: one output row per id.
pub fn gather_rows(table: &Tensor, ids: &[u32]) -> Result<Tensor> {
    let (rows, cols) = require_2d("gather_rows", table)?;
    if ids.is_empty() {
        return Err(Error::invalid("gather_rows: empty id list"));
    }
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        let id = id as usize;
        if id >= rows {
            return Err(Error::Shape {
                kernel: "gather_rows",
                lhs: table.shape().to_vec(),
                rhs: vec![id],
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), cols], data))
}

/// Column-wise maximum over rows; returns the `1×n` maxima and the arg-max
/// row of each column (first occurrence on ties).
pub fn max_axis0(a: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (r, c) = require_2d("max_axis0", a)?;
    let mut best = a.row(0).to_vec();
    let mut arg = vec![0usize; c];
    for row in 1..r {
        for (j, &v) in a.row(row).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = row;
            }
        }
    }
    Ok((Tensor::from_parts(vec![1, c], best), arg))
}

/// Row-wise layer normalization. Returns the output together with the
/// normalized input and per-row inverse std (needed for the gradient).
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let (r, c) = require_2d("layer_norm", x)?;
    if gain.dims2() != Some((1, c)) {
        return Err(mismatch("layer_norm", x, gain));
    }
    if bias.dims2() != Some((1, c)) {
        return Err(mismatch("layer_norm", x, bias));
    }
    let mut out = Vec::with_capacity(r * c);
    let mut xhat = Vec::with_capacity(r * c);
    let mut inv_std = Vec::with_capacity(r);
    for row in 0..r {
        let xs = x.row(row);
        let mean = xs.iter().sum::<f32>() / c as f32;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for (j, &v) in xs.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.push(h);
            out.push(h * gain.data()[j] + bias.data()[j]);
        }
    }
    Ok((Tensor::from_parts(vec![r, c], out), xhat, inv_std))
}

/// Multi-head scaled dot-product attention over `S×d` projections.
///
/// `key_valid[j] == false` removes key position `j` from every softmax.
/// Returns the `S×d` output and the attention weights laid out as
/// `heads × S × S`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, key_valid: &[bool]) -> Result<(Tensor, Vec<f32>)> {
    let (s, d) = require_2d("attention", q)?;
    if k.shape() != q.shape() {
        return Err(mismatch("attention", q, k));
    }
    if v.shape() != q.shape() {
        return Err(mismatch("attention", q, v));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!(
            "attention: {heads} heads do not divide width {d}"
        )));
    }
    if key_valid.len() != s {
        return Err(Error::invalid(format!(
            "attention: mask length {} != sequence length {s}",
            key_valid.len()
        )));
    }
    if !key_valid.iter().any(|&m| m) {
        return Err(Error::invalid("attention: every key position is masked"));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; s * d];
    let mut probs = vec![0.0f32; heads * s * s];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    for h in 0..heads {
        let off = h * dh;
        for i in 0..s {
            let qi = &qd[i * d + off..i * d + off + dh];
            let p = &mut probs[(h * s + i) * s..(h * s + i + 1) * s];
            let mut max = f32::NEG_INFINITY;
            for j in 0..s {
                if !key_valid[j] {
                    continue;
                }
                let kj = &kd[j * d + off..j * d + off + dh];
                let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                p[j] = dot * scale;
                max = max.max(p[j]);
            }
            let mut total = 0.0f32;
            for j in 0..s {
                if key_valid[j] {
                    p[j] = (p[j] - max).exp();
                    total += p[j];
                }
            }
            let o = &mut out[i * d + off..i * d + off + dh];
            for j in 0..s {
                if !key_valid[j] {
                    continue;
                }
                p[j] /= total;
                let vj = &vd[j * d + off..j * d + off + dh];
                for (acc, &x) in o.iter_mut().zip(vj) {
                    *acc += p[j] * x;
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![s, d], out), probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let c = matmul(&t(&[&[1.0, 2.0], &[3.0, 4.0]]), &t(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_mismatch_names_kernel_and_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_and_sigmoid_identities() {
        let s = softmax(&t(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        // large magnitudes stay finite
        let s = softmax(&t(&[&[1000.0, -1000.0, 0.0]])).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6);
        assert!(sigmoid_scalar(-200.0).is_finite() && sigmoid_scalar(200.0) == 1.0);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[5.0], &[6.0]]);
        let ab = concat(&[&a, &b], 1).unwrap();
        assert_eq!(ab.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(slice(&ab, 1, 0, 2).unwrap(), a);
        assert_eq!(slice(&ab, 1, 2, 3).unwrap(), b);
        let rows = concat(&[&a, &a], 0).unwrap();
        assert_eq!(slice(&rows, 0, 2, 4).unwrap(), a);
        assert!(concat(&[&a, &t(&[&[1.0, 2.0, 3.0]])], 0).is_err());
        assert!(slice(&a, 0, 1, 3).is_err());
    }

    #[test]
    fn gather_rejects_out_of_range_ids() {
        let table = Tensor::zeros(&[3, 2]);
        assert!(gather_rows(&table, &[0, 2]).is_ok());
        assert!(gather_rows(&table, &[3]).is_err());
    }

    #[test]
    fn max_axis0_reports_argmax() {
        let (m, arg) = max_axis0(&t(&[&[1.0, 5.0], &[3.0, 2.0]])).unwrap();
        assert_eq!(m.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = t(&[&[1.0, 2.0, 3.0, 4.0]]);
        let (y, _, _) = layer_norm(&x, &Tensor::filled(&[1, 4], 1.0), &Tensor::zeros(&[1, 4])).unwrap();
        let mean: f32 = y.data().iter().sum::<f32>() / 4.0;
        let var: f32 = y.data().iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let q = t(&[&[1.0, 0.0], &[0.0, 1.0], &[9.0, 9.0]]);
        let (full, _) = attention(&q, &q, &q, 1, &[true, true, false]).unwrap();
        let q2 = slice(&q, 0, 0, 2).unwrap();
        let (short, _) = attention(&q2, &q2, &q2, 1, &[true, true]).unwrap();
        assert_eq!(slice(&full, 0, 0, 2).unwrap(), short);
        assert!(attention(&q, &q, &q, 1, &[false; 3]).is_err());
        assert!(attention(&q, &q, &q, 3, &[true; 3]).is_err());
    }

    #[test]
    fn gemm_variants_agree_with_matmul() {
        let a = t(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = t(&[&[1.0, 0.5], &[-1.0, 2.0], &[0.0, 1.0]]);
        let ab = matmul(&a, &b).unwrap();
        // a · (bᵀ)ᵀ via gemm_nt with bᵀ stored row-major
        let bt = t(&[&[1.0, -1.0, 0.0], &[0.5, 2.0, 1.0]]);
        let mut out = vec![0.0; 4];
        gemm_nt(a.data(), bt.data(), &mut out, 2, 3, 2);
        assert_eq!(out, ab.data());
        // (aᵀ)ᵀ · b via gemm_tn with aᵀ stored row-major
        let at = t(&[&[1.0, 4.0], &[2.0, 5.0], &[3.0, 6.0]]);
        let mut out = vec![0.0; 4];
        gemm_tn(at.data(), b.data(), &mut out, 3, 2, 2);
        assert_eq!(out, ab.data());
    }
}
