//! Forward and backward kernels for the fused primitives.

use crate::Real;

pub(crate) struct LayerNormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub(crate) fn layer_norm_forward<F: Real>(
    x: &[F],
    rows: usize,
    cols: usize,
    gain: Option<&[F]>,
    bias: Option<&[F]>,
    eps: F,
) -> (Vec<F>, LayerNormCache<F>) {
    let n = F::of(cols as f64);
    let mut xhat = vec![F::zero(); rows * cols];
    let mut rstd = vec![F::zero(); rows];
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (row[c] - mean) * rs;
            xhat[r * cols + c] = h;
            let g = gain.map_or(F::one(), |g| g[c]);
            let b = bias.map_or(F::zero(), |b| b[c]);
            out[r * cols + c] = h * g + b;
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward<F: Real>(
    dy: &[F],
    cache: &LayerNormCache<F>,
    rows: usize,
    cols: usize,
    gain: Option<&[F]>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = F::of(cols as f64);
    let mut dx = vec![F::zero(); rows * cols];
    let mut dgain = vec![F::zero(); cols];
    let mut dbias = vec![F::zero(); cols];
    let mut dxhat = vec![F::zero(); cols];
    for r in 0..rows {
        let off = r * cols;
        let mut mean_d = F::zero();
        let mut mean_dx = F::zero();
        for c in 0..cols {
            let g = gain.map_or(F::one(), |g| g[c]);
            let d = dy[off + c] * g;
            dxhat[c] = d;
            mean_d = mean_d + d;
            mean_dx = mean_dx + d * cache.xhat[off + c];
            dgain[c] = dgain[c] + dy[off + c] * cache.xhat[off + c];
            dbias[c] = dbias[c] + dy[off + c];
        }
        mean_d = mean_d / n;
        mean_dx = mean_dx / n;
        let rs = cache.rstd[r];
        for c in 0..cols {
            dx[off + c] = rs * (dxhat[c] - mean_d - cache.xhat[off + c] * mean_dx);
        }
    }
    (dx, dgain, dbias)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu<F: Real>(x: F) -> F {
    let k = F::of(GELU_K);
    let c = F::of(GELU_C);
    let half = F::of(0.5);
    half * x * (F::one() + (k * (x + c * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let k = F::of(GELU_K);
    let c = F::of(GELU_C);
    let half = F::of(0.5);
    let inner = k * (x + c * x * x * x);
    let th = inner.tanh();
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * k * (F::one() + F::of(3.0) * c * x * x)
}

pub(crate) struct AttentionDims {
    pub tq: usize,
    pub tk: usize,
    pub dim: usize,
    pub heads: usize,
}

impl AttentionDims {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale<F: Real>(&self) -> F {
        F::one() / F::of(self.head_dim() as f64).sqrt()
    }
}

/// Multi-head scaled dot-product attention. Returns the output and the
/// softmax probabilities laid out as `heads × tq × tk`.
pub(crate) fn attention_forward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    dims: &AttentionDims,
) -> (Vec<F>, Vec<F>) {
    let AttentionDims { tq, tk, dim, heads } = *dims;
    let dh = dims.head_dim();
    let scale: F = dims.scale();
    let mut out = vec![F::zero(); tq * dim];
    let mut probs = vec![F::zero(); heads * tq * tk];
    let d = dim as isize;
    for h in 0..heads {
        let off = h * dh;
        let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        F::gemm(
            tq,
            dh,
            tk,
            &q[off..],
            d,
            1,
            &k[off..],
            1,
            d,
            F::zero(),
            p,
            tk as isize,
            1,
        );
        for row in p.chunks_mut(tk) {
            let mut max = F::neg_infinity();
            for s in row.iter_mut() {
                *s = *s * scale;
                max = max.max(*s);
            }
            let mut total = F::zero();
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total = total + *s;
            }
            for s in row.iter_mut() {
                *s = *s / total;
            }
        }
        F::gemm(
            tq,
            tk,
            dh,
            p,
            tk as isize,
            1,
            &v[off..],
            d,
            1,
            F::zero(),
            &mut out[off..],
            d,
            1,
        );
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub(crate) fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    dims: &AttentionDims,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let AttentionDims { tq, tk, dim, heads } = *dims;
    let dh = dims.head_dim();
    let scale: F = dims.scale();
    let d = dim as isize;
    let mut dq = vec![F::zero(); tq * dim];
    let mut dk = vec![F::zero(); tk * dim];
    let mut dv = vec![F::zero(); tk * dim];
    let mut ds = vec![F::zero(); tq * tk];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * tq * tk..(h + 1) * tq * tk];
        // dP = dO · Vᵀ
        F::gemm(
            tq,
            dh,
            tk,
            &dout[off..],
            d,
            1,
            &v[off..],
            1,
            d,
            F::zero(),
            &mut ds,
            tk as isize,
            1,
        );
        // dV = Pᵀ · dO
        F::gemm(
            tk,
            tq,
            dh,
            p,
            1,
            tk as isize,
            &dout[off..],
            d,
            1,
            F::zero(),
            &mut dv[off..],
            d,
            1,
        );
        for (drow, prow) in ds.chunks_mut(tk).zip(p.chunks(tk)) {
            let dot: F = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for (dv, &pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot) * scale;
            }
        }
        // dQ = dS · K
        F::gemm(
            tq,
            tk,
            dh,
            &ds,
            tk as isize,
            1,
            &k[off..],
            d,
            1,
            F::zero(),
            &mut dq[off..],
            d,
            1,
        );
        // dK = dSᵀ · Q
        F::gemm(
            tk,
            tq,
            dh,
            &ds,
            1,
            tk as isize,
            &q[off..],
            d,
            1,
            F::zero(),
            &mut dk[off..],
            d,
            1,
        );
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let q: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..20).map(|i| (i as f64 * 0.11).cos()).collect();
        let v = k.clone();
        let dims = AttentionDims {
            tq: 3,
            tk: 5,
            dim: 4,
            heads: 2,
        };
        let (_, probs) = attention_forward(&q, &k, &v, &dims);
        for row in probs.chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
