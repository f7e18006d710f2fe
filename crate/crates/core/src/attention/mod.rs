//! Contextualized sentence/document representations.
//!
//! A single multi-head self-attention block with a residual connection and a
//! layer-normalized feed-forward produces contextualized sentence vectors
//! `cs` from the class-oriented inputs; an attentive pooling layer
//! `l_a(cs) = tanh(W cs + b) . V` softmax-weights them into the document
//! vector `cd`. Training minimizes the class-weighted contrastive loss
//! between `cd` and the class vectors under the document's target class
//! distribution. No positional encodings: sentence order does not influence
//! the forward pass.

mod checkpoint;
mod grad;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, DocExample, TrainConfig, TrainOutcome};

use ndarray::{s, Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::norm;

const LN_EPS: f64 = 1e-5;

/// Multi-head self-attention parameters. Linear layers use the
/// `y = x W^T + b` convention with `W: (out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhsaParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
}

/// Feed-forward (inner dim = h, ReLU) followed by layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNorm {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Attentive pooling parameters: logit of sentence j is `tanh(W cs_j + b) . v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub v: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub hidden_dim: usize,
    pub heads: usize,
    pub mhs: MhsaParams,
    pub ln_ff: FeedForwardNorm,
    pub pool: PoolParams,
}

/// Learned representations of one document.
#[derive(Debug, Clone)]
pub struct ContextualizedDoc {
    pub doc_id: String,
    /// `|d| x h` contextualized sentence vectors.
    pub cs: Array2<f64>,
    /// Softmax attention weights; nonnegative, sum to 1.
    pub alphas: Vec<f64>,
    /// Attention-weighted sum of the `cs` rows.
    pub cd: Array1<f64>,
}

impl NetworkParams {
    /// Seed-keyed initialization: scaled-uniform attention/feed-forward
    /// weights, zero biases, unit layer-norm gain, and a small pooling
    /// direction `v` (std 0.02) so initial attention starts near uniform.
    pub fn init(hidden_dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || hidden_dim % heads != 0 {
            return Err(Error::Config(format!(
                "heads ({heads}) must divide hidden_dim ({hidden_dim})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (3.0 / hidden_dim as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((hidden_dim, hidden_dim), |_| rng.random_range(-limit..limit))
        };
        let mhs = MhsaParams {
            wq: mat(&mut rng),
            wk: mat(&mut rng),
            wv: mat(&mut rng),
            wo: mat(&mut rng),
            bq: Array1::zeros(hidden_dim),
            bk: Array1::zeros(hidden_dim),
            bv: Array1::zeros(hidden_dim),
            bo: Array1::zeros(hidden_dim),
        };
        let ln_ff = FeedForwardNorm {
            w1: mat(&mut rng),
            b1: Array1::zeros(hidden_dim),
            w2: mat(&mut rng),
            b2: Array1::zeros(hidden_dim),
            gamma: Array1::ones(hidden_dim),
            beta: Array1::zeros(hidden_dim),
        };
        let small = Normal::new(0.0, 0.02).expect("valid normal");
        let pool = PoolParams {
            w: mat(&mut rng),
            b: Array1::zeros(hidden_dim),
            v: Array1::from_shape_fn(hidden_dim, |_| small.sample(&mut rng)),
        };
        Ok(NetworkParams {
            hidden_dim,
            heads,
            mhs,
            ln_ff,
            pool,
        })
    }

    /// All-zero parameters with the same shapes (gradient accumulator).
    pub(crate) fn zeros(hidden_dim: usize, heads: usize) -> Self {
        let z2 = || Array2::zeros((hidden_dim, hidden_dim));
        let z1 = || Array1::zeros(hidden_dim);
        NetworkParams {
            hidden_dim,
            heads,
            mhs: MhsaParams {
                wq: z2(),
                wk: z2(),
                wv: z2(),
                wo: z2(),
                bq: z1(),
                bk: z1(),
                bv: z1(),
                bo: z1(),
            },
            ln_ff: FeedForwardNorm {
                w1: z2(),
                b1: z1(),
                w2: z2(),
                b2: z1(),
                gamma: z1(),
                beta: z1(),
            },
            pool: PoolParams {
                w: z2(),
                b: z1(),
                v: z1(),
            },
        }
    }

    /// Parameters in a fixed order as one flat vector.
    pub(crate) fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for a in self.arrays() {
            out.extend(a);
        }
        out
    }

    pub(crate) fn flat_len(&self) -> usize {
        let h = self.hidden_dim;
        8 * h * h + 9 * h
    }

    fn arrays(&self) -> Vec<Vec<f64>> {
        let m2 = |a: &Array2<f64>| a.iter().copied().collect::<Vec<f64>>();
        let m1 = |a: &Array1<f64>| a.to_vec();
        vec![
            m2(&self.mhs.wq),
            m2(&self.mhs.wk),
            m2(&self.mhs.wv),
            m2(&self.mhs.wo),
            m1(&self.mhs.bq),
            m1(&self.mhs.bk),
            m1(&self.mhs.bv),
            m1(&self.mhs.bo),
            m2(&self.ln_ff.w1),
            m1(&self.ln_ff.b1),
            m2(&self.ln_ff.w2),
            m1(&self.ln_ff.b2),
            m1(&self.ln_ff.gamma),
            m1(&self.ln_ff.beta),
            m2(&self.pool.w),
            m1(&self.pool.b),
            m1(&self.pool.v),
        ]
    }

    /// Rebuild parameters from [`NetworkParams::to_flat`] output.
    pub(crate) fn from_flat(hidden_dim: usize, heads: usize, flat: &[f64]) -> Result<Self> {
        let mut p = NetworkParams::zeros(hidden_dim, heads);
        let mut offset = 0usize;
        for a in p.arrays_mut() {
            match a {
                FlatSlot::Mat(m) => {
                    let len = m.len();
                    if offset + len > flat.len() {
                        return Err(Error::Cache("checkpoint too short".into()));
                    }
                    for (dst, src) in m.iter_mut().zip(&flat[offset..offset + len]) {
                        *dst = *src;
                    }
                    offset += len;
                }
                FlatSlot::Vec(v) => {
                    let len = v.len();
                    if offset + len > flat.len() {
                        return Err(Error::Cache("checkpoint too short".into()));
                    }
                    for (dst, src) in v.iter_mut().zip(&flat[offset..offset + len]) {
                        *dst = *src;
                    }
                    offset += len;
                }
            }
        }
        if offset != flat.len() {
            return Err(Error::Cache(format!(
                "checkpoint has {} extra values",
                flat.len() - offset
            )));
        }
        Ok(p)
    }

    pub(crate) fn arrays_mut(&mut self) -> Vec<FlatSlot<'_>> {
        vec![
            FlatSlot::Mat(&mut self.mhs.wq),
            FlatSlot::Mat(&mut self.mhs.wk),
            FlatSlot::Mat(&mut self.mhs.wv),
            FlatSlot::Mat(&mut self.mhs.wo),
            FlatSlot::Vec(&mut self.mhs.bq),
            FlatSlot::Vec(&mut self.mhs.bk),
            FlatSlot::Vec(&mut self.mhs.bv),
            FlatSlot::Vec(&mut self.mhs.bo),
            FlatSlot::Mat(&mut self.ln_ff.w1),
            FlatSlot::Vec(&mut self.ln_ff.b1),
            FlatSlot::Mat(&mut self.ln_ff.w2),
            FlatSlot::Vec(&mut self.ln_ff.b2),
            FlatSlot::Vec(&mut self.ln_ff.gamma),
            FlatSlot::Vec(&mut self.ln_ff.beta),
            FlatSlot::Mat(&mut self.pool.w),
            FlatSlot::Vec(&mut self.pool.b),
            FlatSlot::Vec(&mut self.pool.v),
        ]
    }
}

pub(crate) enum FlatSlot<'a> {
    Mat(&'a mut Array2<f64>),
    Vec(&'a mut Array1<f64>),
}

/// Numerically stable row softmax.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

fn softmax_vec(u: &Array1<f64>) -> Array1<f64> {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Array1<f64> = u.mapv(|x| (x - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct ForwardCache {
    pub x: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub attn: Vec<Array2<f64>>,
    pub headcat: Array2<f64>,
    pub r: Array2<f64>,
    pub pre1: Array2<f64>,
    pub f1: Array2<f64>,
    pub ln_var: Array1<f64>,
    pub xhat: Array2<f64>,
    pub cs: Array2<f64>,
    pub pool_t: Array2<f64>,
    pub alphas: Array1<f64>,
    pub cd: Array1<f64>,
}

pub(crate) fn forward_cached(params: &NetworkParams, e: &Array2<f64>) -> Result<ForwardCache> {
    let n = e.nrows();
    let h = params.hidden_dim;
    if n == 0 {
        return Err(Error::Invalid("forward needs at least one sentence".into()));
    }
    if e.ncols() != h {
        return Err(Error::Invalid(format!(
            "input has {} dims, network expects {h}",
            e.ncols()
        )));
    }
    let heads = params.heads;
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // multi-head self-attention
    let q = e.dot(&params.mhs.wq.t()) + &params.mhs.bq;
    let k = e.dot(&params.mhs.wk.t()) + &params.mhs.bk;
    let v = e.dot(&params.mhs.wv.t()) + &params.mhs.bv;

    let mut attn = Vec::with_capacity(heads);
    let mut headcat = Array2::<f64>::zeros((n, h));
    for a in 0..heads {
        let cols = s![.., a * dh..(a + 1) * dh];
        let qa = q.slice(cols);
        let ka = k.slice(cols);
        let va = v.slice(cols);
        let mut scores = qa.dot(&ka.t()) * scale;
        softmax_rows(&mut scores);
        let oa = scores.dot(&va);
        headcat.slice_mut(cols).assign(&oa);
        attn.push(scores);
    }
    let m = headcat.dot(&params.mhs.wo.t()) + &params.mhs.bo;

    // residual, feed-forward, layer norm
    let r = &m + e;
    let pre1 = r.dot(&params.ln_ff.w1.t()) + &params.ln_ff.b1;
    let f1 = pre1.mapv(|x| x.max(0.0));
    let f2 = f1.dot(&params.ln_ff.w2.t()) + &params.ln_ff.b2;

    let mut xhat = Array2::<f64>::zeros((n, h));
    let mut ln_var = Array1::<f64>::zeros(n);
    let mut cs = Array2::<f64>::zeros((n, h));
    for j in 0..n {
        let row = f2.row(j);
        let mean = row.mean().expect("non-empty row");
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        ln_var[j] = var;
        for d in 0..h {
            let xh = (row[d] - mean) * inv;
            xhat[(j, d)] = xh;
            cs[(j, d)] = params.ln_ff.gamma[d] * xh + params.ln_ff.beta[d];
        }
    }

    // attentive pooling
    let pool_a = cs.dot(&params.pool.w.t()) + &params.pool.b;
    let pool_t = pool_a.mapv(f64::tanh);
    let u = pool_t.dot(&params.pool.v);
    let alphas = softmax_vec(&u);
    let mut cd = Array1::<f64>::zeros(h);
    for j in 0..n {
        cd.scaled_add(alphas[j], &cs.row(j));
    }

    Ok(ForwardCache {
        x: e.clone(),
        q,
        k,
        v,
        attn,
        headcat,
        r,
        pre1,
        f1,
        ln_var,
        xhat,
        cs,
        pool_t,
        alphas,
        cd,
    })
}

/// Forward pass: contextualized sentence vectors, attention weights, and the
/// pooled document vector.
pub fn forward(params: &NetworkParams, doc_id: &str, e: &Array2<f64>) -> Result<ContextualizedDoc> {
    let cache = forward_cached(params, e)?;
    Ok(ContextualizedDoc {
        doc_id: doc_id.to_string(),
        cs: cache.cs,
        alphas: cache.alphas.to_vec(),
        cd: cache.cd,
    })
}

/// Weighted regularized contrastive loss:
/// `-sum_k target_k * log softmax_k(cos(cd, c_k) / tau)`, temperature inside
/// the exponent for both numerator and denominator.
pub fn weighted_contrastive_loss(
    cd: &Array1<f64>,
    class_vectors: &[Array1<f64>],
    target: &[f64],
    tau: f64,
) -> Result<f64> {
    loss_with_grad(cd, class_vectors, target, tau).map(|(l, _)| l)
}

/// Loss plus its analytic gradient with respect to `cd`.
pub fn loss_with_grad(
    cd: &Array1<f64>,
    class_vectors: &[Array1<f64>],
    target: &[f64],
    tau: f64,
) -> Result<(f64, Array1<f64>)> {
    if tau <= 0.0 {
        return Err(Error::Config("tau must be > 0".into()));
    }
    if class_vectors.len() != target.len() {
        return Err(Error::Invalid(format!(
            "{} classes but target has {} entries",
            class_vectors.len(),
            target.len()
        )));
    }
    let tsum: f64 = target.iter().sum();
    if (tsum - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("target sums to {tsum}, expected 1")));
    }
    let cd_norm = norm(cd.view());
    if cd_norm == 0.0 {
        return Err(Error::Numeric("zero-norm document vector in loss".into()));
    }

    let n_classes = class_vectors.len();
    let mut sims = Vec::with_capacity(n_classes);
    let mut class_norms = Vec::with_capacity(n_classes);
    for (k, c) in class_vectors.iter().enumerate() {
        let cn = norm(c.view());
        if cn == 0.0 {
            return Err(Error::Numeric(format!("zero-norm class vector {k} in loss")));
        }
        class_norms.push(cn);
        sims.push(cd.dot(c) / (cd_norm * cn));
    }

    // log-softmax of sims / tau
    let z: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = zmax + z.iter().map(|x| (x - zmax).exp()).sum::<f64>().ln();
    let loss: f64 = -target
        .iter()
        .zip(&z)
        .map(|(t, zk)| t * (zk - lse))
        .sum::<f64>();

    // dL/dsim_k = (p_k - t_k)/tau; chain through the cosine
    let mut grad = Array1::<f64>::zeros(cd.len());
    for k in 0..n_classes {
        let p = (z[k] - lse).exp();
        let dsim = (p - target[k]) / tau;
        // d cos(cd, c)/d cd = c/(|cd||c|) - cos * cd/|cd|^2
        let coeff_c = 1.0 / (cd_norm * class_norms[k]);
        let coeff_cd = sims[k] / (cd_norm * cd_norm);
        grad.scaled_add(dsim * coeff_c, &class_vectors[k]);
        grad.scaled_add(-dsim * coeff_cd, cd);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};

    fn params(h: usize, heads: usize, seed: u64) -> NetworkParams {
        NetworkParams::init(h, heads, seed).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        assert_eq!(params(8, 2, 3), params(8, 2, 3));
        assert_ne!(params(8, 2, 3), params(8, 2, 4));
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let p = params(8, 2, 1);
        let flat = p.to_flat();
        let back = NetworkParams::from_flat(8, 2, &flat).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn single_sentence_document_pools_to_itself() {
        let p = params(8, 2, 5);
        let e = Array2::from_shape_fn((1, 8), |(_, d)| 0.1 * d as f64 + 0.3);
        let out = forward(&p, "d", &e).unwrap();
        assert_eq!(out.alphas, vec![1.0]);
        for d in 0..8 {
            assert_abs_diff_eq!(out.cd[d], out.cs[(0, d)], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_pool_direction_gives_uniform_attention() {
        let mut p = params(8, 2, 5);
        p.pool.v.fill(0.0);
        let e = Array2::from_shape_fn((4, 8), |(j, d)| ((j * 8 + d) as f64 * 0.7).sin());
        let out = forward(&p, "d", &e).unwrap();
        for a in &out.alphas {
            assert_abs_diff_eq!(*a, 0.25, epsilon = 1e-12);
        }
        let mean = out.cs.sum_axis(Axis(0)) / 4.0;
        for d in 0..8 {
            assert_abs_diff_eq!(out.cd[d], mean[d], epsilon = 1e-12);
        }
    }

    /// Straight-line re-computation of the forward pass with plain loops,
    /// no shared code with the implementation.
    fn oracle_forward(p: &NetworkParams, e: &Array2<f64>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = e.nrows();
        let h = p.hidden_dim;
        let heads = p.heads;
        let dh = h / heads;
        let linear = |x: &Vec<Vec<f64>>, w: &Array2<f64>, b: &Array1<f64>| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..h)
                        .map(|o| {
                            b[o] + (0..h).map(|i| row[i] * w[(o, i)]).sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let x: Vec<Vec<f64>> = (0..n).map(|j| e.row(j).to_vec()).collect();
        let q = linear(&x, &p.mhs.wq, &p.mhs.bq);
        let k = linear(&x, &p.mhs.wk, &p.mhs.bk);
        let v = linear(&x, &p.mhs.wv, &p.mhs.bv);
        let mut headcat = vec![vec![0.0; h]; n];
        for a in 0..heads {
            for i in 0..n {
                let mut scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh)
                            .map(|d| q[i][a * dh + d] * k[j][a * dh + d])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp() / sum;
                }
                for d in 0..dh {
                    headcat[i][a * dh + d] =
                        (0..n).map(|j| scores[j] * v[j][a * dh + d]).sum();
                }
            }
        }
        let m = linear(&headcat, &p.mhs.wo, &p.mhs.bo);
        let r: Vec<Vec<f64>> = m
            .iter()
            .zip(&x)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
            .collect();
        let pre1 = linear(&r, &p.ln_ff.w1, &p.ln_ff.b1);
        let f1: Vec<Vec<f64>> = pre1
            .iter()
            .map(|row| row.iter().map(|x| x.max(0.0)).collect())
            .collect();
        let f2 = linear(&f1, &p.ln_ff.w2, &p.ln_ff.b2);
        let cs: Vec<Vec<f64>> = f2
            .iter()
            .map(|row| {
                let mean: f64 = row.iter().sum::<f64>() / h as f64;
                let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / h as f64;
                let inv = 1.0 / (var + 1e-5).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(d, x)| p.ln_ff.gamma[d] * (x - mean) * inv + p.ln_ff.beta[d])
                    .collect()
            })
            .collect();
        let logits: Vec<f64> = cs
            .iter()
            .map(|row| {
                (0..h)
                    .map(|o| {
                        let a: f64 = p.pool.b[o]
                            + (0..h).map(|i| row[i] * p.pool.w[(o, i)]).sum::<f64>();
                        a.tanh() * p.pool.v[o]
                    })
                    .sum()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|u| (u - max).exp()).sum();
        let alphas: Vec<f64> = logits.iter().map(|u| (u - max).exp() / sum).collect();
        let cd: Vec<f64> = (0..h)
            .map(|d| (0..n).map(|j| alphas[j] * cs[j][d]).sum())
            .collect();
        (cs, alphas, cd)
    }

    #[test]
    fn forward_matches_independent_recomputation() {
        let p = params(8, 2, 11);
        let e = Array2::from_shape_fn((3, 8), |(j, d)| ((j * 13 + d * 7) as f64 * 0.37).sin());
        let got = forward(&p, "d", &e).unwrap();
        let (cs, alphas, cd) = oracle_forward(&p, &e);
        for j in 0..3 {
            for d in 0..8 {
                assert_abs_diff_eq!(got.cs[(j, d)], cs[j][d], epsilon = 1e-10);
            }
            assert_abs_diff_eq!(got.alphas[j], alphas[j], epsilon = 1e-12);
        }
        for d in 0..8 {
            assert_abs_diff_eq!(got.cd[d], cd[d], epsilon = 1e-10);
        }
    }

    #[test]
    fn permuting_sentences_permutes_cs_and_preserves_cd() {
        let p = params(8, 2, 21);
        let e = Array2::from_shape_fn((4, 8), |(j, d)| ((j * 5 + d) as f64 * 0.29).cos());
        let out = forward(&p, "d", &e).unwrap();

        let perm = [2usize, 0, 3, 1];
        let mut pe = Array2::<f64>::zeros((4, 8));
        for (dst, src) in perm.iter().enumerate() {
            pe.row_mut(dst).assign(&e.row(*src));
        }
        let pout = forward(&p, "d", &pe).unwrap();
        for (dst, src) in perm.iter().enumerate() {
            for d in 0..8 {
                assert_abs_diff_eq!(pout.cs[(dst, d)], out.cs[(*src, d)], epsilon = 1e-9);
            }
            assert_abs_diff_eq!(pout.alphas[dst], out.alphas[*src], epsilon = 1e-10);
        }
        for d in 0..8 {
            assert_abs_diff_eq!(pout.cd[d], out.cd[d], epsilon = 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let p = params(8, 2, 1);
        let e = Array2::<f64>::ones((2, 6));
        assert!(forward(&p, "d", &e).is_err());
    }

    #[test]
    fn loss_closed_form_two_classes() {
        // |C|=2, tau=0.2, cos=(1,0), one-hot target -> ln(1 + e^-5)
        let cd = array![1.0, 0.0];
        let classes = vec![array![2.0, 0.0], array![0.0, 3.0]];
        let loss = weighted_contrastive_loss(&cd, &classes, &[1.0, 0.0], 0.2).unwrap();
        let expect = (1.0 + (-5.0f64).exp()).ln();
        assert_abs_diff_eq!(loss, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.006715, epsilon = 1e-6);
    }

    #[test]
    fn loss_symmetric_case_is_ln_n() {
        // all cosines equal -> softmax uniform -> loss = ln 5 for any target
        let h = 5;
        let cd = Array1::from_elem(h, 1.0);
        let classes: Vec<Array1<f64>> = (0..5)
            .map(|_| Array1::from_elem(h, 0.5))
            .collect();
        let target = [0.1, 0.2, 0.3, 0.15, 0.25];
        let loss = weighted_contrastive_loss(&cd, &classes, &target, 0.2).unwrap();
        assert_abs_diff_eq!(loss, (5.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn one_hot_target_reduces_to_single_class_loss() {
        let cd = array![0.3, -0.7, 0.5];
        let classes = vec![array![1.0, 0.2, 0.0], array![-0.3,0.8, 0.1], array![0.0, 0.1, -0.9]];
        let tau = 0.2;
        let one_hot = [0.0, 1.0, 0.0];
        let full = weighted_contrastive_loss(&cd, &classes, &one_hot, tau).unwrap();
        // standard single-class contrastive loss, computed directly
        let cos = |a: &Array1<f64>, b: &Array1<f64>| {
            a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
        };
        let z: Vec<f64> = classes.iter().map(|c| cos(&cd, c) / tau).collect();
        let denom: f64 = z.iter().map(|x| x.exp()).sum();
        let single = -(z[1].exp() / denom).ln();
        assert_abs_diff_eq!(full, single, epsilon = 1e-12);
    }

    #[test]
    fn zero_norm_inputs_error() {
        let classes = vec![array![1.0, 0.0], array![0.0, 1.0]];
        assert!(weighted_contrastive_loss(&array![0.0, 0.0], &classes, &[1.0, 0.0], 0.2).is_err());
        let bad = vec![array![0.0, 0.0], array![0.0, 1.0]];
        assert!(weighted_contrastive_loss(&array![1.0, 0.0], &bad, &[1.0, 0.0], 0.2).is_err());
    }

    #[test]
    fn target_must_sum_to_one() {
        let classes = vec![array![1.0, 0.0], array![0.0, 1.0]];
        assert!(weighted_contrastive_loss(&array![1.0, 1.0], &classes, &[0.7, 0.7], 0.2).is_err());
    }

    #[test]
    fn loss_gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let h = 6;
            let cd: Array1<f64> =
                (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            if cd.dot(&cd).sqrt() < 0.1 {
                continue;
            }
            let classes: Vec<Array1<f64>> = (0..4)
                .map(|_| {
                    let v: Array1<f64> =
                        (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
                    v
                })
                .collect();
            if classes.iter().any(|c| c.dot(c).sqrt() < 0.1) {
                continue;
            }
            let mut t: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = t.iter().sum();
            for x in t.iter_mut() {
                *x /= s;
            }
            let (_, grad) = loss_with_grad(&cd, &classes, &t, 0.2).unwrap();
            let step = 1e-4;
            for d in 0..h {
                let mut plus = cd.clone();
                plus[d] += step;
                let mut minus = cd.clone();
                minus[d] -= step;
                let lp = weighted_contrastive_loss(&plus, &classes, &t, 0.2).unwrap();
                let lm = weighted_contrastive_loss(&minus, &classes, &t, 0.2).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let denom = fd.abs().max(grad[d].abs()).max(1e-8);
                assert!(
                    ((grad[d] - fd) / denom).abs() < 1e-4,
                    "dim {d}: analytic {} vs fd {fd}",
                    grad[d]
                );
            }
        }
    }
}
