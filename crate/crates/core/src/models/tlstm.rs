//! Time-aware LSTM: the memory cell is split into a short-term part, which
//! is discounted by the elapsed time since the previous visit, and the
//! remaining long-term part.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce_with_logit, g_decay, uniform_init, Differentiable};
use crate::encoders::{SequenceBatch, SequenceView};
use crate::error::{Error, Result};
use crate::scalar::{matvec_add, matvec_t_add, outer_add, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TLstmConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub fc: usize,
    pub seed: u64,
}

impl TLstmConfig {
    pub fn new(input_dim: usize) -> Self {
        TLstmConfig {
            input_dim,
            hidden: 128,
            fc: 64,
            seed: 0,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// `[input][4 * hidden]`, gate order input, forget, output, candidate.
    pub w_x: usize,
    /// `[4 * hidden][hidden]`
    pub u: usize,
    pub b: usize,
    /// `[hidden][hidden]`
    pub w_d: usize,
    pub b_d: usize,
    /// `[fc][hidden]`
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub len: usize,
}

impl Layout {
    fn new(d: usize, h: usize, f: usize) -> Self {
        let w_x = 0;
        let u = w_x + d * 4 * h;
        let b = u + 4 * h * h;
        let w_d = b + 4 * h;
        let b_d = w_d + h * h;
        let w_fc = b_d + h;
        let b_fc = w_fc + f * h;
        let w_out = b_fc + f;
        let b_out = w_out + f;
        Layout {
            w_x,
            u,
            b,
            w_d,
            b_d,
            w_fc,
            b_fc,
            w_out,
            b_out,
            len: b_out + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TLstm<T: Scalar> {
    pub config: TLstmConfig,
    params: Vec<T>,
}

struct StepCache<T> {
    c_prev: Vec<T>,
    h_prev: Vec<T>,
    cs: Vec<T>,
    decay: T,
    c_star: Vec<T>,
    /// activated gates i, f, o, candidate
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

struct Forward<T> {
    steps: Vec<StepCache<T>>,
    h_last: Vec<T>,
    fc: Vec<T>,
    logit: T,
}

impl<T: Scalar> TLstm<T> {
    pub fn new(config: TLstmConfig) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 || config.fc == 0 {
            return Err(Error::Config("T-LSTM dimensions must be positive".into()));
        }
        let (h, f) = (config.hidden, config.fc);
        let lay = Layout::new(config.input_dim, h, f);
        let mut params = vec![T::zero(); lay.len];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = 1.0 / (h as f64).sqrt();
        uniform_init(&mut rng, &mut params[..lay.w_out], k);
        uniform_init(&mut rng, &mut params[lay.w_out..], 1.0 / (f as f64).sqrt());
        Ok(TLstm { config, params })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.config.input_dim, self.config.hidden, self.config.fc)
    }

    fn check(&self, x: &SequenceView) -> Result<()> {
        if x.input_dim != self.config.input_dim {
            return Err(Error::Structural(format!(
                "sequence width {} does not match model input {}",
                x.input_dim, self.config.input_dim
            )));
        }
        if x.steps.is_empty() {
            return Err(Error::Structural(format!("empty sequence for {}", x.patient_id)));
        }
        Ok(())
    }

    fn forward(&self, inputs: &[Vec<(usize, f64)>], elapsed: &[u32]) -> Result<Forward<T>> {
        let h = self.config.hidden;
        let d = self.config.input_dim;
        let lay = self.layout();
        let p = &self.params;
        let mut c = vec![T::zero(); h];
        let mut hs = vec![T::zero(); h];
        let mut steps = Vec::with_capacity(inputs.len());
        for (x, &dt) in inputs.iter().zip(elapsed) {
            let mut cs = p[lay.b_d..lay.b_d + h].to_vec();
            matvec_add(&p[lay.w_d..lay.b_d], h, h, &c, &mut cs);
            for v in &mut cs {
                *v = v.tanh();
            }
            let decay = g_decay(T::of(f64::from(dt)));
            let c_star: Vec<T> = c
                .iter()
                .zip(&cs)
                .map(|(&cp, &s)| cp - (T::one() - decay) * s)
                .collect();

            let mut z = p[lay.b..lay.b + 4 * h].to_vec();
            for &(j, v) in x {
                if j >= d {
                    return Err(Error::Structural(format!("input index {j} outside width {d}")));
                }
                let row = &p[lay.w_x + j * 4 * h..lay.w_x + (j + 1) * 4 * h];
                let v = T::of(v);
                for (zk, &w) in z.iter_mut().zip(row) {
                    *zk += w * v;
                }
            }
            matvec_add(&p[lay.u..lay.b], 4 * h, h, &hs, &mut z);
            let mut gates = z;
            for (k, gk) in gates.iter_mut().enumerate() {
                *gk = if k < 3 * h { sigmoid(*gk) } else { gk.tanh() };
            }
            let mut c_new = vec![T::zero(); h];
            let mut tanh_c = vec![T::zero(); h];
            let mut h_new = vec![T::zero(); h];
            for k in 0..h {
                c_new[k] = gates[h + k] * c_star[k] + gates[k] * gates[3 * h + k];
                tanh_c[k] = c_new[k].tanh();
                h_new[k] = gates[2 * h + k] * tanh_c[k];
            }
            steps.push(StepCache {
                c_prev: std::mem::replace(&mut c, c_new),
                h_prev: std::mem::replace(&mut hs, h_new),
                cs,
                decay,
                c_star,
                gates,
                tanh_c,
            });
        }
        let f = self.config.fc;
        let mut fc = p[lay.b_fc..lay.w_out].to_vec();
        matvec_add(&p[lay.w_fc..lay.b_fc], f, h, &hs, &mut fc);
        for v in &mut fc {
            *v = v.tanh();
        }
        let mut logit = p[lay.b_out];
        for (a, w) in fc.iter().zip(&p[lay.w_out..lay.b_out]) {
            logit += *a * *w;
        }
        Ok(Forward {
            steps,
            h_last: hs,
            fc,
            logit,
        })
    }

    fn backward(&self, inputs: &[Vec<(usize, f64)>], fw: &Forward<T>, dlogit: T, grad: &mut [T]) {
        let h = self.config.hidden;
        let f = self.config.fc;
        let lay = self.layout();
        let p = &self.params;

        let w_out = &p[lay.w_out..lay.b_out];
        grad[lay.b_out] += dlogit;
        let mut dpre = vec![T::zero(); f];
        for k in 0..f {
            grad[lay.w_out + k] += dlogit * fw.fc[k];
            dpre[k] = dlogit * w_out[k] * (T::one() - fw.fc[k] * fw.fc[k]);
        }
        outer_add(&mut grad[lay.w_fc..lay.b_fc], f, h, &dpre, &fw.h_last);
        for k in 0..f {
            grad[lay.b_fc + k] += dpre[k];
        }
        let mut dh = vec![T::zero(); h];
        matvec_t_add(&p[lay.w_fc..lay.b_fc], f, h, &dpre, &mut dh);
        let mut dc = vec![T::zero(); h];

        let mut dz = vec![T::zero(); 4 * h];
        let mut dpre_d = vec![T::zero(); h];
        for (t, st) in fw.steps.iter().enumerate().rev() {
            let g = &st.gates;
            for k in 0..h {
                let (i, fg, o, cand) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = st.tanh_c[k];
                let do_ = dh[k] * tc;
                dc[k] += dh[k] * o * (T::one() - tc * tc);
                let dck = dc[k];
                dz[k] = dck * cand * i * (T::one() - i);
                dz[h + k] = dck * st.c_star[k] * fg * (T::one() - fg);
                dz[2 * h + k] = do_ * o * (T::one() - o);
                dz[3 * h + k] = dck * i * (T::one() - cand * cand);
                // through c* = c_prev - (1 - decay) * cs
                let dcstar = dck * fg;
                dc[k] = dcstar;
                let dcs = -(T::one() - st.decay) * dcstar;
                dpre_d[k] = dcs * (T::one() - st.cs[k] * st.cs[k]);
            }
            for &(j, v) in &inputs[t] {
                let row = &mut grad[lay.w_x + j * 4 * h..lay.w_x + (j + 1) * 4 * h];
                let v = T::of(v);
                for (gk, &d) in row.iter_mut().zip(&dz) {
                    *gk += d * v;
                }
            }
            outer_add(&mut grad[lay.u..lay.b], 4 * h, h, &dz, &st.h_prev);
            for k in 0..4 * h {
                grad[lay.b + k] += dz[k];
            }
            outer_add(&mut grad[lay.w_d..lay.b_d], h, h, &dpre_d, &st.c_prev);
            for k in 0..h {
                grad[lay.b_d + k] += dpre_d[k];
            }
            dh.iter_mut().for_each(|v| *v = T::zero());
            matvec_t_add(&p[lay.u..lay.b], 4 * h, h, &dz, &mut dh);
            matvec_t_add(&p[lay.w_d..lay.b_d], h, h, &dpre_d, &mut dc);
        }
    }

    fn view_inputs(x: &SequenceView) -> (Vec<Vec<(usize, f64)>>, Vec<u32>) {
        (
            (0..x.len()).map(|t| x.step_input(t)).collect(),
            x.steps.iter().map(|s| s.elapsed_days).collect(),
        )
    }

    /// Logits for a length-homogeneous batch.
    pub fn forward_batch(&self, batch: &SequenceBatch) -> Result<Vec<T>> {
        if batch.input_dim != self.config.input_dim {
            return Err(Error::Structural(format!(
                "batch width {} does not match model input {}",
                batch.input_dim, self.config.input_dim
            )));
        }
        batch
            .inputs
            .iter()
            .zip(&batch.elapsed)
            .map(|(x, e)| {
                if x.len() != batch.seq_len || e.len() != batch.seq_len {
                    return Err(Error::Structural("ragged sequence batch".into()));
                }
                Ok(self.forward(x, e)?.logit)
            })
            .collect()
    }
}

impl<T: Scalar> Differentiable<T> for TLstm<T> {
    type Input = SequenceView;

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn logit(&self, x: &SequenceView) -> Result<T> {
        self.check(x)?;
        let (inputs, elapsed) = Self::view_inputs(x);
        Ok(self.forward(&inputs, &elapsed)?.logit)
    }

    fn accumulate_grad(&self, x: &SequenceView, weight: T, grad: &mut [T]) -> Result<T> {
        self.check(x)?;
        let (inputs, elapsed) = Self::view_inputs(x);
        let fw = self.forward(&inputs, &elapsed)?;
        let (loss, dz) = bce_with_logit(fw.logit, T::of(x.label));
        self.backward(&inputs, &fw, dz * weight, grad);
        Ok(loss * weight)
    }

    fn batch_key(x: &SequenceView) -> usize {
        x.len()
    }
}
