use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::{conv_backward, conv_forward, gemm, sigmoid, silu, silu_grad, ConvKind, Geom};
use crate::container::{read_archive, write_archive, RawTensor};
use crate::error::{Error, Result};
use crate::mask::MotionMask;
use crate::rng::Rng;
use crate::schedule::{noise_with_alpha_bar, NoiseSchedule, ScheduleConfig};
use crate::strength::{sinusoidal_embedding, strength, strength_grad, LossReport, EMBED_SCALE};
use crate::tensor::VideoTensor;
use crate::train::TrainBatch;

/// Which scalar drives the strength-embedding pathway.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthSignal {
    /// The pathway always sees 0.
    None,
    /// The clip sampling stride (frame-rate stand-in).
    Stride,
    /// Measured motion strength of the target clip.
    #[default]
    Strength,
}

/// How the model was trained to consume its conditions; inference mirrors it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// When false the mask channel is always all ones.
    pub mask_input: bool,
    /// Non-movable latents reset to frame 0 in training targets and outputs.
    pub freeze: bool,
    pub strength_signal: StrengthSignal,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mask_input: true,
            freeze: true,
            strength_signal: StrengthSignal::Strength,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_width: usize,
    pub num_res_blocks: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub frames: usize,
    pub latent_hw: usize,
    pub guidance: GuidanceConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 1,
            base_width: 32,
            num_res_blocks: 2,
            embed_dim: 64,
            num_classes: 8,
            frames: 8,
            latent_hw: 16,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.latent_channels == 0 || self.base_width == 0 || self.frames == 0 || self.latent_hw == 0 {
            return bad(format!("dimensions must be positive: {self:?}"));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return bad(format!("embed_dim must be even and positive, got {}", self.embed_dim));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        Ok(())
    }

    /// Parameter names and shapes in construction order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (c, w, e) = (self.latent_channels, self.base_width, self.embed_dim);
        let mut out = vec![
            ("input.weight".to_string(), vec![w, c + 1, 3, 3]),
            ("input.bias".to_string(), vec![w]),
            ("embed.class".to_string(), vec![self.num_classes, e]),
            ("embed.proj.weight".to_string(), vec![e, 3 * e]),
            ("embed.proj.bias".to_string(), vec![e]),
        ];
        for b in 0..self.num_res_blocks {
            out.push((format!("blocks.{b}.spatial.weight"), vec![w, w, 3, 3]));
            out.push((format!("blocks.{b}.spatial.bias"), vec![w]));
            out.push((format!("blocks.{b}.temporal.weight"), vec![w, w, 3]));
            out.push((format!("blocks.{b}.temporal.bias"), vec![w]));
            out.push((format!("blocks.{b}.emb.weight"), vec![w, e]));
            out.push((format!("blocks.{b}.emb.bias"), vec![w]));
            out.push((format!("blocks.{b}.reference.weight"), vec![w, w]));
            out.push((format!("blocks.{b}.position.weight"), vec![w, e]));
        }
        out.push(("output.weight".to_string(), vec![c, w, 3, 3]));
        out.push(("output.bias".to_string(), vec![c]));
        out.push(("gate.weight".to_string(), vec![c, w, 3, 3]));
        out.push(("gate.bias".to_string(), vec![c]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, d)| d.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub type Gradients = BTreeMap<String, Vec<f64>>;

/// Inputs beyond the latent that condition one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conditioning {
    /// Raw value for the strength pathway (strength, stride, or 0).
    pub value: f64,
    pub class_id: usize,
}

/// Range of clip strengths seen in training, carried in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthRange {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: DenoiserConfig,
    #[serde(default)]
    pub strength_range: Option<StrengthRange>,
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    params: BTreeMap<String, Param>,
    pub strength_range: Option<StrengthRange>,
    pub variant: Option<String>,
    /// Noise schedule the model was trained with.
    pub schedule: ScheduleConfig,
}

/// Initializes every parameter with fan-in-scaled uniform values, except the
/// mask-channel slice of the input kernel which starts at exactly zero.
pub fn build_model(config: DenoiserConfig, rng: &mut Rng) -> Result<DenoiserModel> {
    config.validate()?;
    let mut params = BTreeMap::new();
    for (name, dims) in config.layout() {
        let n: usize = dims.iter().product();
        let bound = match name.as_str() {
            "embed.class" => 1.0,
            _ => {
                let fan_in: usize = if name.ends_with(".bias") {
                    // Biases share the fan-in of their weight.
                    config
                        .layout()
                        .iter()
                        .find(|(w, _)| *w == name.replace(".bias", ".weight"))
                        .map(|(_, d)| d[1..].iter().product())
                        .unwrap_or(1)
                } else {
                    dims[1..].iter().product()
                };
                1.0 / (fan_in as f64).sqrt()
            }
        };
        let mut data: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        if name == "input.weight" {
            let c = config.latent_channels;
            for co in 0..config.base_width {
                data[(co * (c + 1) + c) * 9..][..9].fill(0.0);
            }
        }
        params.insert(name, Param { dims, data });
    }
    Ok(DenoiserModel {
        config,
        params,
        strength_range: None,
        variant: None,
        schedule: ScheduleConfig::default(),
    })
}

struct BlockCache {
    /// Block input at frame 0, `width × plane`.
    first_frame: Vec<f64>,
    spatial_cols: Vec<f64>,
    temporal_cols: Vec<f64>,
    pre_act: Vec<f64>,
}

struct ForwardCache {
    geom: Geom,
    input_cols: Vec<f64>,
    emb_in: Vec<f64>,
    emb_pre: Vec<f64>,
    emb_act: Vec<f64>,
    /// Sinusoidal frame-index features, `frames × embed_dim`.
    frame_pos: Vec<f64>,
    blocks: Vec<BlockCache>,
    output_cols: Vec<f64>,
    gate_logits: Vec<f64>,
    /// Noise implied by "this position equals the reference", channel-major.
    eps_ref: Vec<f64>,
    class_id: usize,
}

impl DenoiserModel {
    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Param> {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> &[f64] {
        &self.params[name].data
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.params.get_mut(name).map(|p| &mut p.data)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Vec<f64>)> {
        self.params.iter_mut().map(|(k, p)| (k, &mut p.data))
    }

    /// Scalar fed to the strength pathway for a given target strength and
    /// clip stride, according to this model's guidance mode.
    pub fn condition_value(&self, strength: f64, stride: usize) -> f64 {
        match self.config.guidance.strength_signal {
            StrengthSignal::None => 0.0,
            StrengthSignal::Stride => stride as f64,
            StrengthSignal::Strength => strength,
        }
    }

    fn check_inputs(&self, z_in: &VideoTensor, mask: &MotionMask, cond: &Conditioning) -> Result<Geom> {
        let [n, c, h, w] = z_in.shape();
        if c != self.config.latent_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} latent channels, got {c}",
                self.config.latent_channels
            )));
        }
        if mask.height() != h || mask.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs latent {h}x{w}",
                mask.height(),
                mask.width()
            )));
        }
        if cond.class_id >= self.config.num_classes {
            return Err(Error::InvalidConfig(format!(
                "class id {} outside 0..{}",
                cond.class_id, self.config.num_classes
            )));
        }
        if !(cond.value >= 0.0) {
            return Err(Error::InvalidRange(format!("conditioning value must be >= 0, got {}", cond.value)));
        }
        Ok(Geom { frames: n, height: h, width: w })
    }

    /// Predicted noise for every frame of `z_in` (frame 0 is the clean
    /// reference; callers keep only the remaining frames).
    pub fn forward(&self, z_in: &VideoTensor, mask: &MotionMask, t: usize, cond: &Conditioning) -> Result<VideoTensor> {
        self.forward_impl(z_in, mask, t, cond).map(|(y, _)| y)
    }

    /// `(z_t − √ᾱ_t·z_ref) / √(1 − ᾱ_t)` for frames 1.., channel-major; zero
    /// at frame 0 and at `t = 0`. A static position's true noise equals this
    /// exactly, so the gated copy lets the network reproduce the background
    /// without learning a timestep-dependent rescaling.
    fn reference_noise(&self, z_in: &VideoTensor, t: usize) -> Result<Vec<f64>> {
        let [n, c, h, w] = z_in.shape();
        let (plane, p) = (h * w, n * h * w);
        let mut out = vec![0.0; c * p];
        if t == 0 {
            return Ok(out);
        }
        let sched = self.schedule.build()?;
        if t > sched.timesteps() {
            return Err(Error::InvalidRange(format!("timestep {t} outside 1..={}", sched.timesteps())));
        }
        let a = sched.alpha_bar(t);
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        let reference = z_in.frame(0);
        for f in 1..n {
            let frame = z_in.frame(f);
            for ch in 0..c {
                let r = &reference[ch * plane..][..plane];
                for ((o, z), z0) in out[ch * p + f * plane..][..plane].iter_mut().zip(&frame[ch * plane..][..plane]).zip(r) {
                    *o = (z - sa * z0) / sb;
                }
            }
        }
        Ok(out)
    }

    fn embedding(&self, t: usize, cond: &Conditioning) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let e = self.config.embed_dim;
        let mut emb_in = sinusoidal_embedding(t as f64, e)?;
        emb_in.extend(sinusoidal_embedding(cond.value * EMBED_SCALE, e)?);
        emb_in.extend_from_slice(&self.param("embed.class")[cond.class_id * e..][..e]);
        let (w, b) = (self.param("embed.proj.weight"), self.param("embed.proj.bias"));
        let pre: Vec<f64> = (0..e)
            .map(|o| b[o] + w[o * 3 * e..][..3 * e].iter().zip(&emb_in).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let act = pre.iter().map(|&u| silu(u)).collect();
        Ok((emb_in, pre, act))
    }

    fn forward_impl(&self, z_in: &VideoTensor, mask: &MotionMask, t: usize, cond: &Conditioning) -> Result<(VideoTensor, ForwardCache)> {
        let g = self.check_inputs(z_in, mask, cond)?;
        let cfg = &self.config;
        let (c, w, e) = (cfg.latent_channels, cfg.base_width, cfg.embed_dim);
        let (p, plane) = (g.positions(), g.plane());

        // Frame-major video + mask plane → channel-major input with c + 1 channels.
        let mut x = vec![0.0; (c + 1) * p];
        for f in 0..g.frames {
            let frame = z_in.frame(f);
            for ch in 0..c {
                x[ch * p + f * plane..][..plane].copy_from_slice(&frame[ch * plane..][..plane]);
            }
            for (dst, &m) in x[c * p + f * plane..][..plane].iter_mut().zip(mask.as_slice()) {
                *dst = if m { 1.0 } else { 0.0 };
            }
        }

        let (emb_in, emb_pre, emb_act) = self.embedding(t, cond)?;
        let (mut h, input_cols) = conv_forward(
            ConvKind::Spatial,
            &x,
            c + 1,
            w,
            g,
            self.param("input.weight"),
            self.param("input.bias"),
        );

        let mut frame_pos = Vec::with_capacity(g.frames * e);
        for f in 0..g.frames {
            frame_pos.extend(sinusoidal_embedding(f as f64, e)?);
        }
        let mut blocks = Vec::with_capacity(cfg.num_res_blocks);
        for b in 0..cfg.num_res_blocks {
            let mut first_frame = vec![0.0; w * plane];
            for ch in 0..w {
                first_frame[ch * plane..][..plane].copy_from_slice(&h[ch * p..][..plane]);
            }
            let (a, spatial_cols) = conv_forward(
                ConvKind::Spatial,
                &h,
                w,
                w,
                g,
                self.param(&format!("blocks.{b}.spatial.weight")),
                self.param(&format!("blocks.{b}.spatial.bias")),
            );
            let (mut pre_act, temporal_cols) = conv_forward(
                ConvKind::Temporal,
                &a,
                w,
                w,
                g,
                self.param(&format!("blocks.{b}.temporal.weight")),
                self.param(&format!("blocks.{b}.temporal.bias")),
            );
            let (ew, eb) = (self.param(&format!("blocks.{b}.emb.weight")), self.param(&format!("blocks.{b}.emb.bias")));
            // Every frame sees a projection of frame 0 plus its own position code.
            let mut from_first = vec![0.0; w * plane];
            gemm(w, w, plane, self.param(&format!("blocks.{b}.reference.weight")), false, &first_frame, false, 0.0, &mut from_first);
            let pw = self.param(&format!("blocks.{b}.position.weight"));
            for ch in 0..w {
                let bias = eb[ch] + ew[ch * e..][..e].iter().zip(&emb_act).map(|(a, x)| a * x).sum::<f64>();
                for f in 0..g.frames {
                    let pos = pw[ch * e..][..e].iter().zip(&frame_pos[f * e..][..e]).map(|(a, x)| a * x).sum::<f64>();
                    let row = &mut pre_act[ch * p + f * plane..][..plane];
                    for (v, r) in row.iter_mut().zip(&from_first[ch * plane..][..plane]) {
                        *v += bias + pos + r;
                    }
                }
            }
            for (hv, &u) in h.iter_mut().zip(&pre_act) {
                *hv += silu(u);
            }
            blocks.push(BlockCache { first_frame, spatial_cols, temporal_cols, pre_act });
        }

        let (y, output_cols) = conv_forward(
            ConvKind::Spatial,
            &h,
            w,
            c,
            g,
            self.param("output.weight"),
            self.param("output.bias"),
        );
        let (gate_logits, _) = conv_forward(
            ConvKind::Spatial,
            &h,
            w,
            c,
            g,
            self.param("gate.weight"),
            self.param("gate.bias"),
        );
        let eps_ref = self.reference_noise(z_in, t)?;
        let mut out = VideoTensor::zeros(g.frames, c, g.height, g.width);
        for f in 0..g.frames {
            let frame = out.frame_mut(f);
            for ch in 0..c {
                let i = ch * p + f * plane;
                for (k, o) in frame[ch * plane..][..plane].iter_mut().enumerate() {
                    *o = y[i + k] + sigmoid(gate_logits[i + k]) * eps_ref[i + k];
                }
            }
        }
        let cache = ForwardCache {
            geom: g,
            input_cols,
            emb_in,
            emb_pre,
            emb_act,
            frame_pos,
            blocks,
            output_cols,
            gate_logits,
            eps_ref,
            class_id: cond.class_id,
        };
        Ok((out, cache))
    }

    /// Backpropagates `d_out` (same layout as the forward output) to every
    /// parameter.
    fn backward(&self, cache: &ForwardCache, d_out: &VideoTensor) -> Gradients {
        let cfg = &self.config;
        let (c, w, e) = (cfg.latent_channels, cfg.base_width, cfg.embed_dim);
        let g = cache.geom;
        let (p, plane) = (g.positions(), g.plane());
        let mut grads = Gradients::new();

        let mut dy = vec![0.0; c * p];
        for f in 0..g.frames {
            let frame = d_out.frame(f);
            for ch in 0..c {
                dy[ch * p + f * plane..][..plane].copy_from_slice(&frame[ch * plane..][..plane]);
            }
        }
        let out = conv_backward(ConvKind::Spatial, &dy, &cache.output_cols, w, c, g, self.param("output.weight"), true);
        grads.insert("output.weight".into(), out.dw);
        grads.insert("output.bias".into(), out.db);
        let mut dh = out.dx.expect("requested");
        let d_gate: Vec<f64> = dy
            .iter()
            .zip(&cache.gate_logits)
            .zip(&cache.eps_ref)
            .map(|((d, &u), r)| {
                let s = sigmoid(u);
                d * r * s * (1.0 - s)
            })
            .collect();
        let gate = conv_backward(ConvKind::Spatial, &d_gate, &cache.output_cols, w, c, g, self.param("gate.weight"), true);
        grads.insert("gate.weight".into(), gate.dw);
        grads.insert("gate.bias".into(), gate.db);
        for (d, x) in dh.iter_mut().zip(gate.dx.expect("requested")) {
            *d += x;
        }

        let mut d_emb_act = vec![0.0; e];
        for b in (0..cfg.num_res_blocks).rev() {
            let bc = &cache.blocks[b];
            let d_pre: Vec<f64> = dh.iter().zip(&bc.pre_act).map(|(d, &u)| d * silu_grad(u)).collect();

            let d_bias: Vec<f64> = d_pre.chunks_exact(p).map(|r| r.iter().sum()).collect();
            let ew = self.param(&format!("blocks.{b}.emb.weight"));
            let mut d_ew = vec![0.0; w * e];
            for ch in 0..w {
                for k in 0..e {
                    d_ew[ch * e + k] = d_bias[ch] * cache.emb_act[k];
                    d_emb_act[k] += ew[ch * e + k] * d_bias[ch];
                }
            }
            grads.insert(format!("blocks.{b}.emb.weight"), d_ew);
            grads.insert(format!("blocks.{b}.emb.bias"), d_bias);

            let mut frame_sum = vec![0.0; w * plane];
            let mut d_pw = vec![0.0; w * e];
            for ch in 0..w {
                for f in 0..g.frames {
                    let row = &d_pre[ch * p + f * plane..][..plane];
                    for (acc, d) in frame_sum[ch * plane..][..plane].iter_mut().zip(row) {
                        *acc += d;
                    }
                    let total: f64 = row.iter().sum();
                    for (dp, x) in d_pw[ch * e..][..e].iter_mut().zip(&cache.frame_pos[f * e..][..e]) {
                        *dp += total * x;
                    }
                }
            }
            grads.insert(format!("blocks.{b}.position.weight"), d_pw);
            let rw = format!("blocks.{b}.reference.weight");
            let mut d_rw = vec![0.0; w * w];
            gemm(w, plane, w, &frame_sum, false, &bc.first_frame, true, 0.0, &mut d_rw);
            let mut d_first = vec![0.0; w * plane];
            gemm(w, w, plane, self.param(&rw), true, &frame_sum, false, 0.0, &mut d_first);
            grads.insert(rw, d_rw);
            for ch in 0..w {
                for (d, x) in dh[ch * p..][..plane].iter_mut().zip(&d_first[ch * plane..][..plane]) {
                    *d += x;
                }
            }

            let tw = format!("blocks.{b}.temporal.weight");
            let tg = conv_backward(ConvKind::Temporal, &d_pre, &bc.temporal_cols, w, w, g, self.param(&tw), true);
            grads.insert(tw, tg.dw);
            grads.insert(format!("blocks.{b}.temporal.bias"), tg.db);

            let sw = format!("blocks.{b}.spatial.weight");
            let sg = conv_backward(
                ConvKind::Spatial,
                &tg.dx.expect("requested"),
                &bc.spatial_cols,
                w,
                w,
                g,
                self.param(&sw),
                true,
            );
            grads.insert(sw, sg.dw);
            grads.insert(format!("blocks.{b}.spatial.bias"), sg.db);
            for (d, s) in dh.iter_mut().zip(sg.dx.expect("requested")) {
                *d += s;
            }
        }

        let inp = conv_backward(ConvKind::Spatial, &dh, &cache.input_cols, c + 1, w, g, self.param("input.weight"), false);
        grads.insert("input.weight".into(), inp.dw);
        grads.insert("input.bias".into(), inp.db);

        let d_pre: Vec<f64> = d_emb_act.iter().zip(&cache.emb_pre).map(|(d, &u)| d * silu_grad(u)).collect();
        let pw = self.param("embed.proj.weight");
        let mut d_pw = vec![0.0; e * 3 * e];
        let mut d_in = vec![0.0; 3 * e];
        for o in 0..e {
            for k in 0..3 * e {
                d_pw[o * 3 * e + k] = d_pre[o] * cache.emb_in[k];
                d_in[k] += pw[o * 3 * e + k] * d_pre[o];
            }
        }
        grads.insert("embed.proj.weight".into(), d_pw);
        grads.insert("embed.proj.bias".into(), d_pre);
        let mut d_class = vec![0.0; cfg.num_classes * e];
        d_class[cache.class_id * e..][..e].copy_from_slice(&d_in[2 * e..]);
        grads.insert("embed.class".into(), d_class);
        grads
    }
}

/// Loss breakdown and gradients of `l = l_eps + lambda · l_s` for one batch
/// item. `l_eps` averages over the noisy frames only; `l_s` compares the
/// target strength with the strength of the one-step ẑ₀ estimate.
pub fn parameter_gradients(
    model: &DenoiserModel,
    batch: &TrainBatch,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<(LossReport, Gradients)> {
    let z0 = &batch.z0_prime;
    batch.eps.ensure_same_shape(z0, "noise vs clean latent")?;
    let n = z0.frames();
    if n < 2 {
        return Err(Error::TooFewFrames { what: "training clip", need: 2, got: n });
    }
    if batch.t == 0 || batch.t > sched.timesteps() {
        return Err(Error::InvalidRange(format!("timestep {} outside 1..={}", batch.t, sched.timesteps())));
    }
    let alpha_bar = sched.alpha_bar(batch.t);
    let zt = noise_with_alpha_bar(z0, &batch.eps, alpha_bar)?;
    let z_in = z0.frame_tensor(0).concat_frames(&zt)?;
    let cond = Conditioning {
        value: model.condition_value(batch.s_target.0, batch.stride),
        class_id: batch.class_id,
    };
    let (out, cache) = model.forward_impl(&z_in, &batch.mask, batch.t, &cond)?;
    let eps_hat = out.frame_range(1, n);

    let numel = eps_hat.data().len() as f64;
    let l_eps = eps_hat
        .data()
        .iter()
        .zip(batch.eps.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / numel;

    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let z0_hat = zt.zip_map(&eps_hat, |z, e| (z - sb * e) / sa)?;
    let s_hat = strength(&z0_hat)?.0;
    let l_s = (batch.s_target.0 - s_hat).powi(2);
    let report = LossReport::new(l_eps, l_s, lambda);
    if !report.l.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }

    let mut d_out = VideoTensor::zeros(n + 1, z0.channels(), z0.height(), z0.width());
    {
        let d = d_out.data_mut();
        let off = z0.frame_len();
        for (i, (a, b)) in eps_hat.data().iter().zip(batch.eps.data()).enumerate() {
            d[off + i] = 2.0 * (a - b) / numel;
        }
        if lambda != 0.0 {
            let coeff = lambda * 2.0 * (s_hat - batch.s_target.0) * (-sb / sa);
            for (i, gs) in strength_grad(&z0_hat)?.data().iter().enumerate() {
                d[off + i] += coeff * gs;
            }
        }
    }
    Ok((report, model.backward(&cache, &d_out)))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &DenoiserModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

impl DenoiserModel {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            config: self.config,
            strength_range: self.strength_range,
            variant: self.variant.clone(),
            schedule: self.schedule,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_model(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        read_model(&mut bytes)
    }
}

fn write_model(w: &mut impl Write, model: &DenoiserModel) -> Result<()> {
    let header = serde_json::to_string(&model.header())?;
    let tensors: Vec<(String, RawTensor)> = model
        .params
        .iter()
        .map(|(k, p)| Ok((k.clone(), RawTensor::new(p.dims.clone(), p.data.clone())?)))
        .collect::<Result<_>>()?;
    write_archive(w, &header, &tensors)
}

fn read_model(r: &mut impl std::io::Read) -> Result<DenoiserModel> {
    let (header, tensors) = read_archive(r)?;
    let header: CheckpointHeader = serde_json::from_str(&header)?;
    header.config.validate()?;
    let mut params = BTreeMap::new();
    for (name, t) in tensors {
        params.insert(name, Param { dims: t.dims, data: t.data });
    }
    for (name, dims) in header.config.layout() {
        match params.get(&name) {
            Some(p) if p.dims == dims => {}
            Some(p) => {
                return Err(Error::Format(format!("parameter {name} has dims {:?}, expected {dims:?}", p.dims)));
            }
            None => return Err(Error::Format(format!("checkpoint is missing {name}"))),
        }
    }
    if params.len() != header.config.layout().len() {
        return Err(Error::Format("checkpoint has unexpected extra tensors".into()));
    }
    Ok(DenoiserModel {
        config: header.config,
        params,
        strength_range: header.strength_range,
        variant: header.variant,
        schedule: header.schedule,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}
