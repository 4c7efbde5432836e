//! Forward primitives and their backward rules.
//!
//! Every primitive works on rank-2 tensors (vectors are treated as a single
//! row). Backward functions take the upstream gradient and whatever the
//! forward pass cached and return gradients for each differentiable input.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;

use super::{NumericsError, Tensor};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), NumericsError> {
    if t.shape().len() != 2 {
        return Err(NumericsError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// `a · b` for `a: [n × k]`, `b: [k × m]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(NumericsError::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

/// `a · bᵀ` for `a: [n × k]`, `b: [m × k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul_nt", a)?;
    require_matrix("matmul_nt", b)?;
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    if b.cols() != k {
        return Err(NumericsError::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..m {
            out[i * m + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(vec![n, m], out)
}

/// `aᵀ · b` for `a: [k × n]`, `b: [k × m]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul_tn", a)?;
    require_matrix("matmul_tn", b)?;
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(NumericsError::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Gradients of `c = a · b` with respect to `a` and `b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor), NumericsError> {
    Ok((matmul_nt(grad_out, b)?, matmul_tn(a, grad_out)?))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let mut out = a.clone();
    out.add_assign(b)
        .map_err(|_| NumericsError::shape("add", a.shape(), b.shape()))?;
    Ok(out)
}

/// Adds a length-`m` bias to every row of an `[n × m]` matrix.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    if bias.len() != x.cols() {
        return Err(NumericsError::shape("add_row_bias", x.shape(), bias.shape()));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Bias gradient of [`add_row_bias`]: column sums of the upstream gradient.
pub fn add_row_bias_backward(grad_out: &Tensor) -> Tensor {
    let mut out = vec![0.0; grad_out.cols()];
    for i in 0..grad_out.rows() {
        for (o, g) in out.iter_mut().zip(grad_out.row(i)) {
            *o += g;
        }
    }
    Tensor::vector(out)
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::shape("mul", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
///
/// Entries equal to `-inf` receive probability zero, which is how key
/// masking is expressed.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            let n = row.len() as f64;
            row.iter_mut().for_each(|v| *v = 1.0 / n);
            continue;
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Backward rule for [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumericsError> {
    if y.shape() != grad_out.shape() {
        return Err(NumericsError::shape(
            "softmax_rows_backward",
            y.shape(),
            grad_out.shape(),
        ));
    }
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), grad_out.row(i));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Ok(out)
}

/// `log(sum(exp(values)))` without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Backward rule for [`log_softmax_rows`] given its output `y`.
pub fn log_softmax_rows_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumericsError> {
    if y.shape() != grad_out.shape() {
        return Err(NumericsError::shape(
            "log_softmax_rows_backward",
            y.shape(),
            grad_out.shape(),
        ));
    }
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), grad_out.row(i));
        let total: f64 = gr.iter().sum();
        for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = gv - yv.exp() * total;
        }
    }
    Ok(out)
}

/// Values cached by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalizes each row to zero mean and unit variance, then applies
/// `gamma * x_hat + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache), NumericsError> {
    let h = x.cols();
    if gamma.len() != h || beta.len() != h {
        return Err(NumericsError::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = normalized.row_mut(i);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    let mut out = normalized.clone();
    for i in 0..out.rows() {
        for ((o, g), b) in out.row_mut(i).iter_mut().zip(gamma.data()).zip(beta.data()) {
            *o = *o * g + b;
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericsError> {
    let xh = &cache.normalized;
    if xh.shape() != grad_out.shape() {
        return Err(NumericsError::shape(
            "layer_norm_backward",
            xh.shape(),
            grad_out.shape(),
        ));
    }
    let h = xh.cols();
    let mut dgamma = vec![0.0; h];
    let mut dbeta = vec![0.0; h];
    let mut dx = Tensor::zeros(xh.shape());
    let mut dxhat = vec![0.0; h];
    for i in 0..xh.rows() {
        let (xr, gr) = (xh.row(i), grad_out.row(i));
        for j in 0..h {
            dgamma[j] += gr[j] * xr[j];
            dbeta[j] += gr[j];
            dxhat[j] = gr[j] * gamma.data()[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / h as f64;
        let inv = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_d - xr[j] * mean_dx);
        }
    }
    Ok((dx, Tensor::vector(dgamma), Tensor::vector(dbeta)))
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(|v| 0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

pub fn gelu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumericsError> {
    if x.shape() != grad_out.shape() {
        return Err(NumericsError::shape("gelu_backward", x.shape(), grad_out.shape()));
    }
    let norm = 1.0 / (2.0 * PI).sqrt();
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| {
            let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
            let pdf = norm * (-0.5 * v * v).exp();
            g * (cdf + v * pdf)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Inverted-dropout mask: each entry is `0` with probability `p` and
/// `1 / (1 - p)` otherwise. Apply with [`mul`]; the backward rule is the
/// same multiplication.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, rng: &mut R) -> Tensor {
    let mut mask = Tensor::filled(shape, 1.0);
    if p <= 0.0 {
        return mask;
    }
    let keep = 1.0 / (1.0 - p);
    for v in mask.data_mut() {
        *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
    }
    mask
}

/// Gathers rows of `table` for each id.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, NumericsError> {
    let h = table.cols();
    let mut out = Vec::with_capacity(ids.len() * h);
    for &id in ids {
        if id >= table.rows() {
            return Err(NumericsError::IndexOutOfRange {
                index: id,
                len: table.rows(),
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), h], out)
}

/// Scatter-adds the upstream rows into a gradient for the lookup table.
pub fn embedding_backward(table_shape: &[usize], ids: &[usize], grad_out: &Tensor) -> Result<Tensor, NumericsError> {
    let mut grad = Tensor::zeros(table_shape);
    if grad_out.rows() != ids.len() || grad_out.cols() != grad.cols() {
        return Err(NumericsError::shape(
            "embedding_backward",
            table_shape,
            grad_out.shape(),
        ));
    }
    for (i, &id) in ids.iter().enumerate() {
        for (g, u) in grad.row_mut(id).iter_mut().zip(grad_out.row(i)) {
            *g += u;
        }
    }
    Ok(grad)
}
