//! Desk-scale hybrid transducer/CTC model.
//!
//! A causal temporal convolution with ReLU and a pointwise `tanh` layer form
//! the shared encoder. Its frames feed a CTC head directly and, through a joint
//! network, a stateless (previous-token) transducer prediction network.
//! Forward passes record what the hand-written backward passes need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::num::{log_softmax, ModelParams, Tensor};

pub const ENC_CONV_W: &str = "enc.conv.w";
pub const ENC_CONV_B: &str = "enc.conv.b";
pub const ENC_PW_W: &str = "enc.pw.w";
pub const ENC_PW_B: &str = "enc.pw.b";
pub const PRED_EMBED: &str = "pred.embed";
pub const PRED_PROJ_W: &str = "pred.proj.w";
pub const PRED_PROJ_B: &str = "pred.proj.b";
pub const JOINT_ENC_W: &str = "joint.enc.w";
pub const JOINT_PRED_W: &str = "joint.pred.w";
pub const JOINT_B: &str = "joint.b";
pub const JOINT_OUT_W: &str = "joint.out.w";
pub const JOINT_OUT_B: &str = "joint.out.b";
pub const CTC_W: &str = "ctc.w";
pub const CTC_B: &str = "ctc.b";

pub const BLANK_ID: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    /// Symbol inventory size including blank.
    pub vocab_size: usize,
    pub conv_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_dim: 8,
            hidden_dim: 32,
            vocab_size: 13,
            conv_kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn blank_id(&self) -> usize {
        BLANK_ID
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("feat_dim and hidden_dim must be >= 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(
                "vocab_size must include blank and at least one symbol".into(),
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel must be odd, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }

    /// Parameter names, shapes and init fan-in, in name order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let (f, h, v, k) = (self.feat_dim, self.hidden_dim, self.vocab_size, self.conv_kernel);
        let mut out = vec![
            (CTC_B, vec![v], h),
            (CTC_W, vec![v, h], h),
            (ENC_CONV_B, vec![h], f * k),
            (ENC_CONV_W, vec![h, f, k], f * k),
            (ENC_PW_B, vec![h], h),
            (ENC_PW_W, vec![h, h], h),
            (JOINT_B, vec![h], 2 * h),
            (JOINT_ENC_W, vec![h, h], h),
            (JOINT_OUT_B, vec![v], h),
            (JOINT_OUT_W, vec![v, h], h),
            (JOINT_PRED_W, vec![h, h], h),
            (PRED_EMBED, vec![v, h], h),
            (PRED_PROJ_B, vec![h], h),
            (PRED_PROJ_W, vec![h, h], h),
        ];
        out.sort_by_key(|e| e.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace {
    pub features: Tensor,
    pub pre_relu: Tensor,
    pub hidden: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub logits: Tensor,
    pub log_probs: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    /// Context symbol per lattice row: blank, then each target.
    pub contexts: Vec<usize>,
    pub output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrace {
    pub hidden: Tensor,
    pub head: HeadTrace,
}

/// Everything recorded by one forward pass over an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub encoder: EncoderTrace,
    pub ctc: HeadTrace,
    pub prediction: PredictionTrace,
    pub joint: JointTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    config: ModelConfig,
    params: ModelParams,
}

impl HybridModel {
    /// Uniform(-s, s) init with `s = 1/sqrt(fan_in)`, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        for (name, shape, fan_in) in config.layout() {
            let s = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-s..s)).collect();
            params.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::new();
        for (name, shape, _) in config.layout() {
            params.insert(name, Tensor::zeros(&shape));
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = Self::zeros(config)?.params;
        expected.check_layout(&params, "model parameters")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Deep copy of the parameters (the anchor for penalty methods).
    pub fn snapshot(&self) -> ModelParams {
        self.params.clone()
    }

    pub fn restore(&mut self, snapshot: &ModelParams) -> Result<()> {
        self.params.check_layout(snapshot, "restore")?;
        self.params = snapshot.clone();
        Ok(())
    }

    /// A model sharing this config but evaluated at other parameter values.
    pub fn with_params(&self, params: ModelParams) -> Result<Self> {
        self.params.check_layout(&params, "with_params")?;
        Ok(Self {
            config: self.config,
            params,
        })
    }

    fn p(&self, name: &str) -> &[f64] {
        self.params.get(name).expect("layout validated at construction").data()
    }

    pub fn check_targets(&self, targets: &[usize]) -> Result<()> {
        let v = self.config.vocab_size;
        match targets.iter().find(|&&s| s == BLANK_ID || s >= v) {
            Some(bad) => Err(Error::Input(format!(
                "target symbol {bad} outside [1, {}]",
                v - 1
            ))),
            None => Ok(()),
        }
    }

    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.encode_traced(features)?.output)
    }

    pub fn encode_traced(&self, features: &Tensor) -> Result<EncoderTrace> {
        let (f, h, k) = (self.config.feat_dim, self.config.hidden_dim, self.config.conv_kernel);
        if features.shape().len() != 2 || features.dim(1) != f {
            return Err(contract(format!(
                "features must be [T x {f}], got {:?}",
                features.shape()
            )));
        }
        let t_len = features.dim(0);
        if t_len == 0 {
            return Err(contract("encode needs at least one frame"));
        }
        let x = features.data();
        let (cw, cb) = (self.p(ENC_CONV_W), self.p(ENC_CONV_B));
        let (pw, pb) = (self.p(ENC_PW_W), self.p(ENC_PW_B));

        let mut pre = vec![0.0; t_len * h];
        for t in 0..t_len {
            for hi in 0..h {
                let mut acc = cb[hi];
                for j in 0..k {
                    // tap j reads frame t - (k - 1) + j
                    let Some(src) = (t + j).checked_sub(k - 1) else {
                        continue;
                    };
                    let xr = &x[src * f..(src + 1) * f];
                    for fi in 0..f {
                        acc += cw[(hi * f + fi) * k + j] * xr[fi];
                    }
                }
                pre[t * h + hi] = acc;
            }
        }
        let hid: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut out = vec![0.0; t_len * h];
        for t in 0..t_len {
            let hr = &hid[t * h..(t + 1) * h];
            for hi in 0..h {
                let w = &pw[hi * h..(hi + 1) * h];
                let acc = pb[hi] + dot(w, hr);
                out[t * h + hi] = acc.tanh();
            }
        }
        Ok(EncoderTrace {
            features: features.clone(),
            pre_relu: Tensor::from_vec(&[t_len, h], pre)?,
            hidden: Tensor::from_vec(&[t_len, h], hid)?,
            output: Tensor::from_vec(&[t_len, h], out)?,
        })
    }

    fn check_encoded(&self, encoded: &Tensor) -> Result<()> {
        if encoded.shape().len() != 2 || encoded.dim(1) != self.config.hidden_dim {
            return Err(contract(format!(
                "encoded frames must be [T x {}], got {:?}",
                self.config.hidden_dim,
                encoded.shape()
            )));
        }
        Ok(())
    }

    pub fn ctc_head(&self, encoded: &Tensor) -> Result<HeadTrace> {
        self.check_encoded(encoded)?;
        let (h, v) = (self.config.hidden_dim, self.config.vocab_size);
        let t_len = encoded.dim(0);
        let (w, b) = (self.p(CTC_W), self.p(CTC_B));
        let mut z = vec![0.0; t_len * v];
        for t in 0..t_len {
            let e = encoded.row(t);
            for vi in 0..v {
                z[t * v + vi] = b[vi] + dot(&w[vi * h..(vi + 1) * h], e);
            }
        }
        let logits = Tensor::from_vec(&[t_len, v], z)?;
        let log_probs = log_softmax(&logits, 1)?;
        Ok(HeadTrace { logits, log_probs })
    }

    pub fn ctc_log_probs(&self, encoded: &Tensor) -> Result<Tensor> {
        Ok(self.ctc_head(encoded)?.log_probs)
    }

    /// Prediction-network output for each context symbol.
    pub fn predict(&self, contexts: &[usize]) -> Result<PredictionTrace> {
        let (h, v) = (self.config.hidden_dim, self.config.vocab_size);
        if let Some(bad) = contexts.iter().find(|&&c| c >= v) {
            return Err(Error::Input(format!("context symbol {bad} out of range")));
        }
        let (emb, w, b) = (self.p(PRED_EMBED), self.p(PRED_PROJ_W), self.p(PRED_PROJ_B));
        let mut out = vec![0.0; contexts.len() * h];
        for (u, &c) in contexts.iter().enumerate() {
            let e = &emb[c * h..(c + 1) * h];
            for hi in 0..h {
                out[u * h + hi] = (b[hi] + dot(&w[hi * h..(hi + 1) * h], e)).tanh();
            }
        }
        Ok(PredictionTrace {
            contexts: contexts.to_vec(),
            output: Tensor::from_vec(&[contexts.len(), h], out)?,
        })
    }

    fn project(&self, name: &str, rows: &Tensor) -> Vec<f64> {
        let h = self.config.hidden_dim;
        let w = self.p(name);
        let n = rows.dim(0);
        let mut out = vec![0.0; n * h];
        for r in 0..n {
            let x = rows.row(r);
            for hi in 0..h {
                out[r * h + hi] = dot(&w[hi * h..(hi + 1) * h], x);
            }
        }
        out
    }

    pub fn joint_head(&self, encoded: &Tensor, prediction: &PredictionTrace) -> Result<JointTrace> {
        self.check_encoded(encoded)?;
        let (h, v) = (self.config.hidden_dim, self.config.vocab_size);
        let t_len = encoded.dim(0);
        let rows = prediction.contexts.len();
        let a = self.project(JOINT_ENC_W, encoded);
        let bp = self.project(JOINT_PRED_W, &prediction.output);
        let (jb, ow, ob) = (self.p(JOINT_B), self.p(JOINT_OUT_W), self.p(JOINT_OUT_B));
        let mut hidden = vec![0.0; t_len * rows * h];
        let mut z = vec![0.0; t_len * rows * v];
        for t in 0..t_len {
            for u in 0..rows {
                let node = t * rows + u;
                let hn = &mut hidden[node * h..(node + 1) * h];
                for hi in 0..h {
                    hn[hi] = (a[t * h + hi] + bp[u * h + hi] + jb[hi]).tanh();
                }
                for vi in 0..v {
                    z[node * v + vi] = ob[vi] + dot(&ow[vi * h..(vi + 1) * h], hn);
                }
            }
        }
        let logits = Tensor::from_vec(&[t_len, rows, v], z)?;
        let log_probs = log_softmax(&logits, 2)?;
        Ok(JointTrace {
            hidden: Tensor::from_vec(&[t_len, rows, h], hidden)?,
            head: HeadTrace { logits, log_probs },
        })
    }

    /// Transducer lattice distributions `[T x (U+1) x V]` for `targets`.
    pub fn joint_log_probs(&self, encoded: &Tensor, targets: &[usize]) -> Result<Tensor> {
        self.check_targets(targets)?;
        let pred = self.predict(&contexts_for(targets))?;
        Ok(self.joint_head(encoded, &pred)?.head.log_probs)
    }

    /// Joint log-distribution for a single encoder frame and context symbol.
    pub fn joint_step(&self, encoded_frame: &[f64], context: usize) -> Result<Vec<f64>> {
        let h = self.config.hidden_dim;
        if encoded_frame.len() != h {
            return Err(contract("joint_step frame width mismatch"));
        }
        let frame = Tensor::from_vec(&[1, h], encoded_frame.to_vec())?;
        let pred = self.predict(&[context])?;
        Ok(self.joint_head(&frame, &pred)?.head.log_probs.into_data())
    }

    pub fn forward(&self, features: &Tensor, targets: &[usize]) -> Result<ForwardTrace> {
        self.check_targets(targets)?;
        let encoder = self.encode_traced(features)?;
        let ctc = self.ctc_head(&encoder.output)?;
        let prediction = self.predict(&contexts_for(targets))?;
        let joint = self.joint_head(&encoder.output, &prediction)?;
        Ok(ForwardTrace {
            encoder,
            ctc,
            prediction,
            joint,
        })
    }

    /// Parameter gradients given upstream gradients on either head's logits.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_ctc_logits: Option<&Tensor>,
        d_joint_logits: Option<&Tensor>,
    ) -> Result<ModelParams> {
        let mut grads = self.params.zeros_like();
        let mut d_enc = Tensor::zeros(trace.encoder.output.shape());
        if let Some(dz) = d_ctc_logits {
            self.ctc_backward(&trace.encoder.output, dz, &mut grads, &mut d_enc)?;
        }
        if let Some(dz) = d_joint_logits {
            let mut d_pred = Tensor::zeros(trace.prediction.output.shape());
            self.joint_backward(
                &trace.encoder.output,
                &trace.prediction,
                &trace.joint,
                dz,
                &mut grads,
                &mut d_enc,
                &mut d_pred,
            )?;
            self.prediction_backward(&trace.prediction, &d_pred, &mut grads)?;
        }
        self.encoder_backward(&trace.encoder, &d_enc, &mut grads)?;
        Ok(grads)
    }

    pub fn ctc_backward(
        &self,
        encoded: &Tensor,
        d_logits: &Tensor,
        grads: &mut ModelParams,
        d_enc: &mut Tensor,
    ) -> Result<()> {
        let (h, v) = (self.config.hidden_dim, self.config.vocab_size);
        let t_len = encoded.dim(0);
        if d_logits.shape() != [t_len, v] {
            return Err(contract("ctc logit gradient shape mismatch"));
        }
        let w = self.p(CTC_W);
        let mut gw = vec![0.0; v * h];
        let mut gb = vec![0.0; v];
        for t in 0..t_len {
            let e = encoded.row(t);
            let dz = d_logits.row(t);
            let de = d_enc.row_mut(t);
            for vi in 0..v {
                let g = dz[vi];
                if g == 0.0 {
                    continue;
                }
                gb[vi] += g;
                let wr = &w[vi * h..(vi + 1) * h];
                let gwr = &mut gw[vi * h..(vi + 1) * h];
                for hi in 0..h {
                    gwr[hi] += g * e[hi];
                    de[hi] += g * wr[hi];
                }
            }
        }
        accumulate(grads, CTC_W, &gw);
        accumulate(grads, CTC_B, &gb);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn joint_backward(
        &self,
        encoded: &Tensor,
        prediction: &PredictionTrace,
        joint: &JointTrace,
        d_logits: &Tensor,
        grads: &mut ModelParams,
        d_enc: &mut Tensor,
        d_pred: &mut Tensor,
    ) -> Result<()> {
        let (h, v) = (self.config.hidden_dim, self.config.vocab_size);
        let t_len = encoded.dim(0);
        let rows = prediction.contexts.len();
        if d_logits.shape() != [t_len, rows, v] {
            return Err(contract("joint logit gradient shape mismatch"));
        }
        let (ow, we, wp) = (self.p(JOINT_OUT_W), self.p(JOINT_ENC_W), self.p(JOINT_PRED_W));
        let mut g_ow = vec![0.0; v * h];
        let mut g_ob = vec![0.0; v];
        let mut g_jb = vec![0.0; h];
        // gradients w.r.t. the encoder-side and prediction-side projections
        let mut d_a = vec![0.0; t_len * h];
        let mut d_b = vec![0.0; rows * h];
        let mut d_hid = vec![0.0; h];
        for t in 0..t_len {
            for u in 0..rows {
                let hn = joint.hidden.lane(t, u);
                let dz = d_logits.lane(t, u);
                d_hid.iter_mut().for_each(|x| *x = 0.0);
                for vi in 0..v {
                    let g = dz[vi];
                    if g == 0.0 {
                        continue;
                    }
                    g_ob[vi] += g;
                    let wr = &ow[vi * h..(vi + 1) * h];
                    let gr = &mut g_ow[vi * h..(vi + 1) * h];
                    for hi in 0..h {
                        gr[hi] += g * hn[hi];
                        d_hid[hi] += g * wr[hi];
                    }
                }
                for hi in 0..h {
                    let d_pre = d_hid[hi] * (1.0 - hn[hi] * hn[hi]);
                    g_jb[hi] += d_pre;
                    d_a[t * h + hi] += d_pre;
                    d_b[u * h + hi] += d_pre;
                }
            }
        }
        let mut g_we = vec![0.0; h * h];
        linear_backward(we, encoded, &d_a, &mut g_we, d_enc);
        let mut g_wp = vec![0.0; h * h];
        linear_backward(wp, &prediction.output, &d_b, &mut g_wp, d_pred);
        accumulate(grads, JOINT_OUT_W, &g_ow);
        accumulate(grads, JOINT_OUT_B, &g_ob);
        accumulate(grads, JOINT_B, &g_jb);
        accumulate(grads, JOINT_ENC_W, &g_we);
        accumulate(grads, JOINT_PRED_W, &g_wp);
        Ok(())
    }

    pub fn prediction_backward(
        &self,
        prediction: &PredictionTrace,
        d_out: &Tensor,
        grads: &mut ModelParams,
    ) -> Result<()> {
        let h = self.config.hidden_dim;
        let v = self.config.vocab_size;
        let (emb, w) = (self.p(PRED_EMBED), self.p(PRED_PROJ_W));
        let mut g_emb = vec![0.0; v * h];
        let mut g_w = vec![0.0; h * h];
        let mut g_b = vec![0.0; h];
        for (u, &c) in prediction.contexts.iter().enumerate() {
            let out = prediction.output.row(u);
            let d = d_out.row(u);
            let e = &emb[c * h..(c + 1) * h];
            for hi in 0..h {
                let d_pre = d[hi] * (1.0 - out[hi] * out[hi]);
                if d_pre == 0.0 {
                    continue;
                }
                g_b[hi] += d_pre;
                let wr = &w[hi * h..(hi + 1) * h];
                for hj in 0..h {
                    g_w[hi * h + hj] += d_pre * e[hj];
                    g_emb[c * h + hj] += d_pre * wr[hj];
                }
            }
        }
        accumulate(grads, PRED_EMBED, &g_emb);
        accumulate(grads, PRED_PROJ_W, &g_w);
        accumulate(grads, PRED_PROJ_B, &g_b);
        Ok(())
    }

    pub fn encoder_backward(
        &self,
        trace: &EncoderTrace,
        d_out: &Tensor,
        grads: &mut ModelParams,
    ) -> Result<()> {
        let (f, h, k) = (self.config.feat_dim, self.config.hidden_dim, self.config.conv_kernel);
        let t_len = trace.output.dim(0);
        if d_out.shape() != [t_len, h] {
            return Err(contract("encoder gradient shape mismatch"));
        }
        let pw = self.p(ENC_PW_W);
        let x = trace.features.data();
        let mut d_q = vec![0.0; t_len * h];
        for (i, dq) in d_q.iter_mut().enumerate() {
            let y = trace.output.data()[i];
            *dq = d_out.data()[i] * (1.0 - y * y);
        }
        let mut g_pw = vec![0.0; h * h];
        let mut g_pb = vec![0.0; h];
        let mut d_hid = vec![0.0; t_len * h];
        for t in 0..t_len {
            let hr = trace.hidden.row(t);
            for hi in 0..h {
                let g = d_q[t * h + hi];
                if g == 0.0 {
                    continue;
                }
                g_pb[hi] += g;
                for hj in 0..h {
                    g_pw[hi * h + hj] += g * hr[hj];
                    d_hid[t * h + hj] += g * pw[hi * h + hj];
                }
            }
        }
        let mut g_cw = vec![0.0; h * f * k];
        let mut g_cb = vec![0.0; h];
        for t in 0..t_len {
            for hi in 0..h {
                if trace.pre_relu.data()[t * h + hi] <= 0.0 {
                    continue;
                }
                let g = d_hid[t * h + hi];
                g_cb[hi] += g;
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(k - 1) else {
                        continue;
                    };
                    for fi in 0..f {
                        g_cw[(hi * f + fi) * k + j] += g * x[src * f + fi];
                    }
                }
            }
        }
        accumulate(grads, ENC_PW_W, &g_pw);
        accumulate(grads, ENC_PW_B, &g_pb);
        accumulate(grads, ENC_CONV_W, &g_cw);
        accumulate(grads, ENC_CONV_B, &g_cb);
        Ok(())
    }
}

/// Lattice row contexts: the start context (blank) followed by each target.
pub fn contexts_for(targets: &[usize]) -> Vec<usize> {
    std::iter::once(BLANK_ID).chain(targets.iter().copied()).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// For `y_r = W x_r` (no bias): accumulate `dW += dy_r x_r^T`, `dx_r += W^T dy_r`.
fn linear_backward(w: &[f64], x: &Tensor, dy: &[f64], g_w: &mut [f64], d_x: &mut Tensor) {
    let h = x.dim(1);
    for r in 0..x.dim(0) {
        let xr = x.row(r);
        let dxr = d_x.row_mut(r);
        for hi in 0..h {
            let g = dy[r * h + hi];
            if g == 0.0 {
                continue;
            }
            let wr = &w[hi * h..(hi + 1) * h];
            for hj in 0..h {
                g_w[hi * h + hj] += g * xr[hj];
                dxr[hj] += g * wr[hj];
            }
        }
    }
}

fn accumulate(grads: &mut ModelParams, name: &str, values: &[f64]) {
    let t = grads.get_mut(name).expect("gradient store shares model layout");
    for (a, b) in t.data_mut().iter_mut().zip(values) {
        *a += b;
    }
}
