//! A small post-LN transformer encoder classifying the `[CLS]` position.
//!
//! The last layer only evaluates the `[CLS]` row: the other rows of the
//! final layer never reach the classifier, so skipping them is exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{bce_with_logit, Differentiable, TokenizedNarrative};
use crate::error::{Error, Result};
use crate::scalar::{matvec_add, Scalar};
use crate::subword::{DEFAULT_MAX_LEN, PAD_ID};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl TransformerConfig {
    pub fn new(vocab_size: usize) -> Self {
        TransformerConfig {
            vocab_size,
            max_len: DEFAULT_MAX_LEN,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.max_len == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("transformer needs at least one layer".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bq: usize,
    pub bk: usize,
    pub bv: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tok: usize,
    pub pos: usize,
    pub eln_g: usize,
    pub eln_b: usize,
    pub layers: Vec<LayerLayout>,
    pub wp: usize,
    pub bp: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub len: usize,
}

impl Layout {
    fn new(c: &TransformerConfig) -> Self {
        let (d, ff) = (c.d_model, c.d_ff);
        let mut at = 0;
        let mut take = |n: usize| {
            let s = at;
            at += n;
            s
        };
        let tok = take(c.vocab_size * d);
        let pos = take(c.max_len * d);
        let eln_g = take(d);
        let eln_b = take(d);
        let layers = (0..c.n_layers)
            .map(|_| LayerLayout {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                bq: take(d),
                bk: take(d),
                bv: take(d),
                bo: take(d),
                ln1_g: take(d),
                ln1_b: take(d),
                w1: take(ff * d),
                b1: take(ff),
                w2: take(d * ff),
                b2: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
            })
            .collect();
        let wp = take(d * d);
        let bp = take(d);
        let w_out = take(d);
        let b_out = take(1);
        Layout {
            tok,
            pos,
            eln_g,
            eln_b,
            layers,
            wp,
            bp,
            w_out,
            b_out,
            len: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Transformer<T: Scalar> {
    pub config: TransformerConfig,
    params: Vec<T>,
}

/// `y[r] = W x[r] + b` for each of `rows` inputs.
fn linear<T: Scalar>(x: &[T], rows: usize, w: &[T], b: &[T], out_dim: usize, in_dim: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        let mut o = b.to_vec();
        matvec_add(w, out_dim, in_dim, &x[r * in_dim..(r + 1) * in_dim], &mut o);
        y.extend(o);
    }
    y
}

/// Accumulates gradients of `y = W x + b` and, when `dx` is given, adds `W^T dy`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    rows: usize,
    w: &[T],
    out_dim: usize,
    in_dim: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    for r in 0..rows {
        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            db[o] += g;
            let row = &mut dw[o * in_dim..(o + 1) * in_dim];
            for (a, &xv) in row.iter_mut().zip(xr) {
                *a += g * xv;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * out_dim..(r + 1) * out_dim];
            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
            for (o, &g) in dyr.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                for (a, &wv) in dxr.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                    *a += g * wv;
                }
            }
        }
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, d: usize, g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let n = T::of(d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for k in 0..d {
            let xh = (xr[k] - mean) * rs;
            xhat[r * d + k] = xh;
            y[r * d + k] = g[k] * xh + b[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates dgamma and dbeta.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    rows: usize,
    d: usize,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    let n = T::of(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for k in 0..d {
            dg[k] += dyr[k] * xh[k];
            db[k] += dyr[k];
            dxhat[k] = dyr[k] * g[k];
            s1 += dxhat[k];
            s2 += dxhat[k] * xh[k];
        }
        let rs = cache.rstd[r];
        for k in 0..d {
            dx[r * d + k] = rs * (dxhat[k] - s1 / n - xh[k] * s2 / n);
        }
    }
    dx
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x);
    (y, dy)
}

struct LayerCache<T> {
    /// query rows: all positions, or only `[CLS]` in the last layer
    rows: usize,
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[head][row][key]`
    probs: Vec<T>,
    ctx: Vec<T>,
    ln1: LnCache<T>,
    y: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    ln2: LnCache<T>,
}

struct Forward<T> {
    n: usize,
    emb_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    cls: Vec<T>,
    pool: Vec<T>,
    logit: T,
}

impl<T: Scalar> Transformer<T> {
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for v in params.iter_mut() {
            *v = T::of(normal.sample(&mut rng));
        }
        let d = config.d_model;
        let mut set = |start: usize, len: usize, value: f64| {
            params[start..start + len].iter_mut().for_each(|p| *p = T::of(value));
        };
        set(layout.eln_g, d, 1.0);
        set(layout.eln_b, d, 0.0);
        for l in &layout.layers {
            for b in [l.bq, l.bk, l.bv, l.bo, l.b2, l.ln1_b, l.ln2_b] {
                set(b, d, 0.0);
            }
            set(l.b1, config.d_ff, 0.0);
            set(l.ln1_g, d, 1.0);
            set(l.ln2_g, d, 1.0);
        }
        set(layout.bp, d, 0.0);
        set(layout.b_out, 1, 0.0);
        Ok(Transformer { config, params })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn check(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::Structural(format!(
                "token sequence length {} outside 1..={}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Structural(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn forward(&self, ids: &[u32], lay: &Layout) -> Forward<T> {
        let c = &self.config;
        let (d, ff, nh) = (c.d_model, c.d_ff, c.n_heads);
        let dh = d / nh;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let p = &self.params;
        let n = ids.len();
        let key_ok: Vec<bool> = ids.iter().map(|&i| i != PAD_ID).collect();

        let mut x0 = Vec::with_capacity(n * d);
        for (t, &id) in ids.iter().enumerate() {
            let tok = &p[lay.tok + id as usize * d..lay.tok + (id as usize + 1) * d];
            let pos = &p[lay.pos + t * d..lay.pos + (t + 1) * d];
            x0.extend(tok.iter().zip(pos).map(|(a, b)| *a + *b));
        }
        let (mut x, emb_ln) = layer_norm(&x0, n, d, &p[lay.eln_g..lay.eln_g + d], &p[lay.eln_b..lay.eln_b + d]);

        let mut caches = Vec::with_capacity(lay.layers.len());
        for (li, l) in lay.layers.iter().enumerate() {
            let rows = if li + 1 == lay.layers.len() { 1 } else { n };
            let q = linear(&x, rows, &p[l.wq..l.wq + d * d], &p[l.bq..l.bq + d], d, d);
            let k = linear(&x, n, &p[l.wk..l.wk + d * d], &p[l.bk..l.bk + d], d, d);
            let v = linear(&x, n, &p[l.wv..l.wv + d * d], &p[l.bv..l.bv + d], d, d);
            let mut probs = vec![T::zero(); nh * rows * n];
            let mut ctx = vec![T::zero(); rows * d];
            for h in 0..nh {
                for i in 0..rows {
                    let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
                    let pr = &mut probs[(h * rows + i) * n..(h * rows + i + 1) * n];
                    let mut mx = T::neg_infinity();
                    for j in 0..n {
                        if !key_ok[j] {
                            continue;
                        }
                        let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<T>() * scale;
                        pr[j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = T::zero();
                    for j in 0..n {
                        if key_ok[j] {
                            pr[j] = (pr[j] - mx).exp();
                            z += pr[j];
                        }
                    }
                    for j in 0..n {
                        if key_ok[j] {
                            pr[j] /= z;
                            let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                            let cx = &mut ctx[i * d + h * dh..i * d + (h + 1) * dh];
                            for (a, b) in cx.iter_mut().zip(vj) {
                                *a += pr[j] * *b;
                            }
                        }
                    }
                }
            }
            let attn = linear(&ctx, rows, &p[l.wo..l.wo + d * d], &p[l.bo..l.bo + d], d, d);
            let r1: Vec<T> = attn.iter().zip(&x[..rows * d]).map(|(a, b)| *a + *b).collect();
            let (y, ln1) = layer_norm(&r1, rows, d, &p[l.ln1_g..l.ln1_g + d], &p[l.ln1_b..l.ln1_b + d]);
            let pre = linear(&y, rows, &p[l.w1..l.w1 + ff * d], &p[l.b1..l.b1 + ff], ff, d);
            let act: Vec<T> = pre.iter().map(|&u| gelu_parts(u).0).collect();
            let f = linear(&act, rows, &p[l.w2..l.w2 + d * ff], &p[l.b2..l.b2 + d], d, ff);
            let r2: Vec<T> = f.iter().zip(&y).map(|(a, b)| *a + *b).collect();
            let (out, ln2) = layer_norm(&r2, rows, d, &p[l.ln2_g..l.ln2_g + d], &p[l.ln2_b..l.ln2_b + d]);
            caches.push(LayerCache {
                rows,
                x: std::mem::replace(&mut x, out),
                q,
                k,
                v,
                probs,
                ctx,
                ln1,
                y,
                pre,
                act,
                ln2,
            });
        }
        let cls = x[..d].to_vec();
        let mut pool = p[lay.bp..lay.bp + d].to_vec();
        matvec_add(&p[lay.wp..lay.wp + d * d], d, d, &cls, &mut pool);
        for v in &mut pool {
            *v = v.tanh();
        }
        let mut logit = p[lay.b_out];
        for (a, w) in pool.iter().zip(&p[lay.w_out..lay.w_out + d]) {
            logit += *a * *w;
        }
        Forward {
            n,
            emb_ln,
            layers: caches,
            cls,
            pool,
            logit,
        }
    }

    fn backward(&self, ids: &[u32], fw: &Forward<T>, lay: &Layout, dlogit: T, grad: &mut [T]) {
        let c = &self.config;
        let (d, ff, nh) = (c.d_model, c.d_ff, c.n_heads);
        let dh = d / nh;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let p = &self.params;
        let n = fw.n;

        grad[lay.b_out] += dlogit;
        let mut dpool_pre = vec![T::zero(); d];
        for k in 0..d {
            grad[lay.w_out + k] += dlogit * fw.pool[k];
            dpool_pre[k] = dlogit * p[lay.w_out + k] * (T::one() - fw.pool[k] * fw.pool[k]);
        }
        let mut dx = vec![T::zero(); d];
        {
            let (dw, rest) = grad[lay.wp..].split_at_mut(d * d);
            linear_backward(&dpool_pre, &fw.cls, 1, &p[lay.wp..lay.wp + d * d], d, d, dw, &mut rest[..d], Some(&mut dx));
        }

        for (l, cache) in lay.layers.iter().zip(&fw.layers).rev() {
            let rows = cache.rows;
            // dx holds the gradient of this layer's output rows
            let (dg2, db2) = split2(grad, l.ln2_g, l.ln2_b, d);
            let dr2 = layer_norm_backward(&dx[..rows * d], &cache.ln2, rows, d, &p[l.ln2_g..l.ln2_g + d], dg2, db2);
            let mut dy = dr2.clone();
            let mut dact = vec![T::zero(); rows * ff];
            {
                let (dw, db) = split2(grad, l.w2, l.b2, d * ff);
                linear_backward(&dr2, &cache.act, rows, &p[l.w2..l.w2 + d * ff], d, ff, dw, &mut db[..d], Some(&mut dact));
            }
            let dpre: Vec<T> = dact
                .iter()
                .zip(&cache.pre)
                .map(|(g, &u)| *g * gelu_parts(u).1)
                .collect();
            {
                let (dw, db) = split2(grad, l.w1, l.b1, ff * d);
                linear_backward(&dpre, &cache.y, rows, &p[l.w1..l.w1 + ff * d], ff, d, dw, &mut db[..ff], Some(&mut dy));
            }
            let (dg1, db1) = split2(grad, l.ln1_g, l.ln1_b, d);
            let dr1 = layer_norm_backward(&dy, &cache.ln1, rows, d, &p[l.ln1_g..l.ln1_g + d], dg1, db1);

            let mut dxin = vec![T::zero(); n * d];
            for (a, b) in dxin[..rows * d].iter_mut().zip(&dr1) {
                *a += *b;
            }
            let mut dctx = vec![T::zero(); rows * d];
            {
                let (dw, db) = split2(grad, l.wo, l.bo, d * d);
                let db = &mut db[..d];
                linear_backward(&dr1, &cache.ctx, rows, &p[l.wo..l.wo + d * d], d, d, dw, db, Some(&mut dctx));
            }

            let mut dq = vec![T::zero(); rows * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut da = vec![T::zero(); n];
            for h in 0..nh {
                for i in 0..rows {
                    let pr = &cache.probs[(h * rows + i) * n..(h * rows + i + 1) * n];
                    let dci = &dctx[i * d + h * dh..i * d + (h + 1) * dh];
                    let mut dot = T::zero();
                    for j in 0..n {
                        if pr[j] == T::zero() {
                            da[j] = T::zero();
                            continue;
                        }
                        let vj = &cache.v[j * d + h * dh..j * d + (h + 1) * dh];
                        da[j] = dci.iter().zip(vj).map(|(a, b)| *a * *b).sum();
                        dot += pr[j] * da[j];
                        let dvj = &mut dv[j * d + h * dh..j * d + (h + 1) * dh];
                        for (a, b) in dvj.iter_mut().zip(dci) {
                            *a += pr[j] * *b;
                        }
                    }
                    let qi = &cache.q[i * d + h * dh..i * d + (h + 1) * dh];
                    for j in 0..n {
                        if pr[j] == T::zero() {
                            continue;
                        }
                        let ds = pr[j] * (da[j] - dot) * scale;
                        let kj = &cache.k[j * d + h * dh..j * d + (h + 1) * dh];
                        let dqi = &mut dq[i * d + h * dh..i * d + (h + 1) * dh];
                        for (a, b) in dqi.iter_mut().zip(kj) {
                            *a += ds * *b;
                        }
                        let dkj = &mut dk[j * d + h * dh..j * d + (h + 1) * dh];
                        for (a, b) in dkj.iter_mut().zip(qi) {
                            *a += ds * *b;
                        }
                    }
                }
            }
            for (w, b, dmat, r) in [(l.wq, l.bq, &dq, rows), (l.wk, l.bk, &dk, n), (l.wv, l.bv, &dv, n)] {
                let (dw, db) = split2(grad, w, b, d * d);
                linear_backward(dmat, &cache.x, r, &p[w..w + d * d], d, d, dw, &mut db[..d], Some(&mut dxin));
            }
            dx = dxin;
        }

        let (dg, db) = split2(grad, lay.eln_g, lay.eln_b, d);
        let dx0 = layer_norm_backward(&dx, &fw.emb_ln, n, d, &p[lay.eln_g..lay.eln_g + d], dg, db);
        for (t, &id) in ids.iter().enumerate() {
            let g = &dx0[t * d..(t + 1) * d];
            let tok = lay.tok + id as usize * d;
            for k in 0..d {
                grad[tok + k] += g[k];
                grad[lay.pos + t * d + k] += g[k];
            }
        }
    }

    pub fn logit_ids(&self, ids: &[u32]) -> Result<T> {
        self.check(ids)?;
        let lay = self.layout();
        Ok(self.forward(ids, &lay).logit)
    }
}

/// Two disjoint mutable blocks: `[a, a + len_a)` and `[b, ...)`, with `a < b`.
fn split2<T>(grad: &mut [T], a: usize, b: usize, len_a: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + len_a <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + len_a], hi)
}

impl<T: Scalar> Differentiable<T> for Transformer<T> {
    type Input = TokenizedNarrative;

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn logit(&self, x: &TokenizedNarrative) -> Result<T> {
        self.logit_ids(&x.ids)
    }

    fn accumulate_grad(&self, x: &TokenizedNarrative, weight: T, grad: &mut [T]) -> Result<T> {
        self.check(&x.ids)?;
        let lay = self.layout();
        let fw = self.forward(&x.ids, &lay);
        let (loss, dz) = bce_with_logit(fw.logit, T::of(f64::from(x.label)));
        self.backward(&x.ids, &fw, &lay, dz * weight, grad);
        Ok(loss * weight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Transformer<f64> {
        Transformer::new(TransformerConfig {
            vocab_size: 10,
            max_len: 8,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn heads_must_divide_width() {
        let mut c = TransformerConfig::new(10);
        c.n_heads = 3;
        assert!(Transformer::<f64>::new(c).is_err());
    }

    #[test]
    fn rejects_out_of_vocab_and_overlong() {
        let m = tiny();
        assert!(matches!(m.logit_ids(&[2, 10]), Err(Error::Structural(_))));
        assert!(matches!(m.logit_ids(&[2; 9]), Err(Error::Structural(_))));
        assert!(m.logit_ids(&[2]).is_ok());
    }

    #[test]
    fn single_cls_is_deterministic() {
        let m = tiny();
        assert_eq!(m.logit_ids(&[2]).unwrap(), tiny().logit_ids(&[2]).unwrap());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-2.0f64, -0.3, 0.0, 0.8, 3.0] {
            let h = 1e-6;
            let num = (gelu_parts(x + h).0 - gelu_parts(x - h).0) / (2.0 * h);
            assert!((num - gelu_parts(x).1).abs() < 1e-8);
        }
    }
}
