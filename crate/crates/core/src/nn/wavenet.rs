use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv_backward, conv_forward_into, gated_backward_into, gated_forward_into, tanh_fast, ConvScratch,
    ConvShape,
};
use super::optim::AdamState;
use super::Tensor2;
use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::pipeline::checkpoint::{hash_reals, CheckpointReader, CheckpointWriter, Metadata};

const MAGIC: &[u8; 8] = b"PALDCWNT";
const VERSION: u32 = 1;

/// How a residual block feeds the next block and the mixer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualWiring {
    /// `x' = x + pointwise(g)`; the mixer sees `g`.
    #[default]
    PointwiseResidual,
    /// `x' = x + g`; the mixer sees `pointwise(g)`.
    ActivationResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveNetConfig {
    pub channels: usize,
    pub kernel: usize,
    /// One dilation per residual block.
    pub dilations: Vec<usize>,
    pub output_tanh: bool,
    pub mixer_bias: bool,
    pub wiring: ResidualWiring,
    pub seed: u64,
}

fn doubling(count: usize) -> Vec<usize> {
    (0..count).map(|i| 1usize << i).collect()
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        WaveNetConfig::identification_preset()
    }
}

impl WaveNetConfig {
    /// 9 blocks, dilations 1..256, 16 channels, kernel 16.
    pub fn identification_preset() -> Self {
        WaveNetConfig {
            channels: 16,
            kernel: 16,
            dilations: doubling(9),
            output_tanh: false,
            mixer_bias: true,
            wiring: ResidualWiring::default(),
            seed: 0,
        }
    }

    /// 24 blocks, dilations 1..2048 twice, 24 channels, kernel 4, tanh output.
    pub fn compensation_preset() -> Self {
        let mut dilations = doubling(12);
        dilations.extend(doubling(12));
        WaveNetConfig {
            channels: 24,
            kernel: 4,
            dilations,
            output_tanh: true,
            mixer_bias: true,
            wiring: ResidualWiring::default(),
            seed: 0,
        }
    }

    /// Desk-scale identification network: 9 blocks, kernel 2, 8 channels.
    pub fn toy_identification() -> Self {
        WaveNetConfig {
            channels: 8,
            kernel: 2,
            ..WaveNetConfig::identification_preset()
        }
    }

    /// Desk-scale inverse network: 8 blocks, kernel 2, 8 channels, tanh output.
    pub fn toy_inverse() -> Self {
        WaveNetConfig {
            channels: 8,
            kernel: 2,
            dilations: doubling(8),
            ..WaveNetConfig::compensation_preset()
        }
    }

    pub fn blocks(&self) -> usize {
        self.dilations.len()
    }

    /// `N = (M − 1)·Σ d_k + 1`.
    pub fn receptive_field(&self) -> usize {
        (self.kernel.saturating_sub(1)) * self.dilations.iter().sum::<usize>() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kernel == 0 || self.dilations.is_empty() {
            return Err(Error::Config(
                "wavenet needs channels, kernel and at least one block".into(),
            ));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

pub fn receptive_field(cfg: &WaveNetConfig) -> usize {
    cfg.receptive_field()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockLayout {
    dil_w: usize,
    dil_b: usize,
    pw_w: usize,
    pw_b: usize,
    dil_shape: ConvShape,
}

/// Offsets of every parameter group inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    channels: usize,
    in_w: usize,
    in_b: usize,
    blocks: Vec<BlockLayout>,
    mix_w: usize,
    mix_b: Option<usize>,
    total: usize,
}

impl ParamLayout {
    fn new(cfg: &WaveNetConfig) -> Self {
        let c = cfg.channels;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = at;
            at += n;
            s
        };
        let in_w = take(c);
        let in_b = take(c);
        let blocks = cfg
            .dilations
            .iter()
            .map(|&d| {
                let dil_shape = ConvShape {
                    out_ch: 2 * c,
                    in_ch: c,
                    kernel: cfg.kernel,
                    dilation: d,
                };
                BlockLayout {
                    dil_w: take(dil_shape.weight_len()),
                    dil_b: take(2 * c),
                    pw_w: take(c * c),
                    pw_b: take(c),
                    dil_shape,
                }
            })
            .collect();
        let mix_w = take(cfg.blocks() * c);
        let mix_b = cfg.mixer_bias.then(|| take(1));
        ParamLayout {
            channels: c,
            in_w,
            in_b,
            blocks,
            mix_w,
            mix_b,
            total: at,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flat parameter vector of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveNetParams {
    values: Vec<f64>,
}

impl WaveNetParams {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Hex SHA-256 of the little-endian parameter bytes.
    pub fn hash(&self) -> String {
        hash_reals(&self.values)
    }
}

/// Intermediate activations kept for the backward pass. Reusing one cache
/// across calls avoids reallocating the activation buffers.
#[derive(Debug, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    xs: Vec<Tensor2>,
    ta: Vec<Tensor2>,
    sb: Vec<Tensor2>,
    gated: Vec<Tensor2>,
    pointwise: Vec<Tensor2>,
    output: Vec<f64>,
    pre: Tensor2,
    pad: Vec<f64>,
    complete: bool,
}

fn ensure_slots(v: &mut Vec<Tensor2>, n: usize, c: usize, t: usize) {
    v.truncate(n);
    while v.len() < n {
        v.push(Tensor2::default());
    }
    v.iter_mut().for_each(|x| x.reshape(c, t));
}

impl ForwardCache {
    pub fn new() -> Self {
        ForwardCache::default()
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    fn prepare(&mut self, cfg: &WaveNetConfig, t: usize, keep: bool) {
        let c = cfg.channels;
        let slots = if keep { cfg.blocks() } else { 1 };
        ensure_slots(&mut self.xs, slots, c, t);
        ensure_slots(&mut self.ta, slots, c, t);
        ensure_slots(&mut self.sb, slots, c, t);
        ensure_slots(&mut self.gated, slots, c, t);
        let pw_slots = if keep && cfg.wiring == ResidualWiring::ActivationResidual {
            cfg.blocks()
        } else {
            1
        };
        ensure_slots(&mut self.pointwise, pw_slots, c, t);
        self.pre.reshape(2 * c, t);
        self.complete = keep;
    }
}

/// Gradients of one backward pass plus reusable scratch buffers.
#[derive(Debug, Default)]
pub struct Gradients {
    /// Parameter gradients; empty when not requested.
    pub params: Vec<f64>,
    /// Gradient with respect to the network input.
    pub input: Vec<f64>,
    dz: Vec<f64>,
    dx: Tensor2,
    dskip: Tensor2,
    dg: Tensor2,
    dpre: Tensor2,
    conv: ConvScratch,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }
}

/// Feedforward WaveNet: input projection, gated residual blocks, linear
/// mixer over the stacked block outputs, optional output `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveNetModel {
    config: WaveNetConfig,
    layout: ParamLayout,
    params: WaveNetParams,
}

impl WaveNetModel {
    /// Fan-in uniform initialization `±√(1/(in·M))`, zero biases.
    pub fn new(config: WaveNetConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |start: usize, len: usize, fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut values[start..start + len] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let c = config.channels;
        fill(layout.in_w, c, 1);
        for b in &layout.blocks {
            fill(b.dil_w, b.dil_shape.weight_len(), c * config.kernel);
            fill(b.pw_w, c * c, c);
        }
        fill(layout.mix_w, config.blocks() * c, config.blocks() * c);
        Ok(WaveNetModel {
            config,
            layout,
            params: WaveNetParams { values },
        })
    }

    pub fn from_parts(config: WaveNetConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} parameters for a network of {}",
                values.len(),
                layout.total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("wavenet parameters".into()));
        }
        Ok(WaveNetModel {
            config,
            layout,
            params: WaveNetParams { values },
        })
    }

    pub fn config(&self) -> &WaveNetConfig {
        &self.config
    }

    pub fn params(&self) -> &WaveNetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut WaveNetParams {
        &mut self.params
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn p(&self, start: usize, len: usize) -> &[f64] {
        &self.params.values[start..start + len]
    }

    fn input_projection(&self, u: &[f64], x: &mut Tensor2) {
        let c = self.layout.channels;
        let (w, b) = (self.p(self.layout.in_w, c), self.p(self.layout.in_b, c));
        for ch in 0..c {
            let (wc, bc) = (w[ch], b[ch]);
            x.row_mut(ch)
                .iter_mut()
                .zip(u)
                .for_each(|(o, &v)| *o = wc * v + bc);
        }
    }

    fn mix_into(&self, k: usize, skip: &Tensor2, z: &mut [f64]) {
        let c = self.layout.channels;
        let w = self.p(self.layout.mix_w + k * c, c);
        for ch in 0..c {
            let wv = w[ch];
            z.iter_mut().zip(skip.row(ch)).for_each(|(o, &s)| *o += wv * s);
        }
    }

    fn run(&self, u: &[f64], ws: &mut ForwardCache, keep: bool) {
        let c = self.layout.channels;
        let t = u.len();
        let alt = self.config.wiring == ResidualWiring::ActivationResidual;
        ws.prepare(&self.config, t, keep);
        ws.input.clear();
        ws.input.extend_from_slice(u);
        self.input_projection(u, &mut ws.xs[0]);
        let bias = self.layout.mix_b.map_or(0.0, |b| self.params.values[b]);
        ws.output.clear();
        ws.output.resize(t, bias);
        let blocks = self.layout.blocks.len();
        for (k, bl) in self.layout.blocks.iter().enumerate() {
            let s = if keep { k } else { 0 };
            let p = if keep && alt { k } else { 0 };
            conv_forward_into(
                &ws.xs[s],
                self.p(bl.dil_w, bl.dil_shape.weight_len()),
                Some(self.p(bl.dil_b, 2 * c)),
                bl.dil_shape,
                &mut ws.pre,
                &mut ws.pad,
            );
            gated_forward_into(&ws.pre, &mut ws.gated[s], &mut ws.ta[s], &mut ws.sb[s]);
            conv_forward_into(
                &ws.gated[s],
                self.p(bl.pw_w, c * c),
                Some(self.p(bl.pw_b, c)),
                ConvShape::pointwise(c, c),
                &mut ws.pointwise[p],
                &mut ws.pad,
            );
            let (branch, skip) = if alt {
                (&ws.gated[s], &ws.pointwise[p])
            } else {
                (&ws.pointwise[p], &ws.gated[s])
            };
            self.mix_into(k, skip, &mut ws.output);
            if k + 1 < blocks {
                if keep {
                    let (done, next) = ws.xs.split_at_mut(k + 1);
                    next[0].data_mut().copy_from_slice(done[k].data());
                    next[0].add_assign(branch);
                } else {
                    let branch = branch.data().to_owned();
                    ws.xs[0].data_mut().iter_mut().zip(&branch).for_each(|(a, b)| *a += b);
                }
            }
        }
        if self.config.output_tanh {
            ws.output.iter_mut().for_each(|v| *v = tanh_fast(*v));
        }
    }

    pub fn forward_slice(&self, u: &[f64]) -> Vec<f64> {
        let mut ws = ForwardCache::new();
        self.run(u, &mut ws, false);
        ws.output
    }

    /// Inference on a signal; output length equals input length.
    pub fn forward(&self, u: &Signal) -> Result<Signal> {
        if u.is_empty() {
            return Err(Error::Signal("empty input".into()));
        }
        let y = self.forward_slice(u.samples());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("wavenet output".into()));
        }
        Signal::new(y, u.sample_rate())
    }

    /// Forward pass that keeps everything the backward pass needs.
    pub fn forward_train(&self, u: &[f64]) -> ForwardCache {
        let mut cache = ForwardCache::new();
        self.forward_train_into(u, &mut cache);
        cache
    }

    /// [`Self::forward_train`] into an existing cache.
    pub fn forward_train_into(&self, u: &[f64], cache: &mut ForwardCache) {
        self.run(u, cache, true);
    }

    pub fn backward(&self, cache: &ForwardCache, dy: &[f64], param_grads: bool) -> Result<Gradients> {
        let mut g = Gradients::new();
        self.backward_into(cache, dy, param_grads, &mut g)?;
        Ok(g)
    }

    /// Reverse-mode pass for upstream gradient `dy`. Parameter gradients are
    /// skipped when `param_grads` is false; the input gradient is always
    /// computed.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        param_grads: bool,
        out: &mut Gradients,
    ) -> Result<()> {
        let c = self.layout.channels;
        let t = dy.len();
        if !cache.complete
            || t != cache.output.len()
            || cache.xs.len() != self.config.blocks()
            || cache.xs[0].channels() != c
        {
            return Err(Error::Shape("backward cache does not match the network".into()));
        }
        let alt = self.config.wiring == ResidualWiring::ActivationResidual;
        out.params.clear();
        if param_grads {
            out.params.resize(self.layout.total, 0.0);
        }
        let grads = &mut out.params;

        out.dz.clear();
        if self.config.output_tanh {
            out.dz
                .extend(dy.iter().zip(&cache.output).map(|(g, y)| g * (1.0 - y * y)));
        } else {
            out.dz.extend_from_slice(dy);
        }
        let dz = &out.dz;
        if param_grads {
            if let Some(b) = self.layout.mix_b {
                grads[b] = dz.iter().sum();
            }
        }

        out.dx.reshape(c, t);
        out.dx.data_mut().iter_mut().for_each(|v| *v = 0.0);
        out.dskip.reshape(c, t);
        out.dg.reshape(c, t);
        out.dpre.reshape(2 * c, t);
        let pw_shape = ConvShape::pointwise(c, c);
        for (k, bl) in self.layout.blocks.iter().enumerate().rev() {
            let skip = if alt { &cache.pointwise[k] } else { &cache.gated[k] };
            // the mixer gradient lands on the skip path
            let dskip = if alt { &mut out.dskip } else { &mut out.dg };
            let wm = self.p(self.layout.mix_w + k * c, c);
            for ch in 0..c {
                let w = wm[ch];
                dskip
                    .row_mut(ch)
                    .iter_mut()
                    .zip(dz)
                    .for_each(|(o, &g)| *o = w * g);
                if param_grads {
                    grads[self.layout.mix_w + k * c + ch] =
                        skip.row(ch).iter().zip(dz).map(|(a, b)| a * b).sum();
                }
            }
            if alt {
                out.dg.data_mut().copy_from_slice(out.dx.data());
            }
            let dpw = if alt { &out.dskip } else { &out.dx };
            {
                let (gw, gb) = if param_grads {
                    let (head, tail) = grads.split_at_mut(bl.pw_b);
                    (Some(&mut head[bl.pw_w..bl.pw_w + c * c]), Some(&mut tail[..c]))
                } else {
                    (None, None)
                };
                conv_backward(
                    &cache.gated[k],
                    self.p(bl.pw_w, c * c),
                    pw_shape,
                    dpw,
                    gw.map(|w| (w, gb)),
                    Some(&mut out.dg),
                    &mut out.conv,
                );
            }
            gated_backward_into(&cache.ta[k], &cache.sb[k], &out.dg, &mut out.dpre);
            {
                let wl = bl.dil_shape.weight_len();
                let (gw, gb) = if param_grads {
                    let (head, tail) = grads.split_at_mut(bl.dil_b);
                    (Some(&mut head[bl.dil_w..bl.dil_w + wl]), Some(&mut tail[..2 * c]))
                } else {
                    (None, None)
                };
                conv_backward(
                    &cache.xs[k],
                    self.p(bl.dil_w, wl),
                    bl.dil_shape,
                    &out.dpre,
                    gw.map(|w| (w, gb)),
                    Some(&mut out.dx),
                    &mut out.conv,
                );
            }
        }

        let w_in = self.p(self.layout.in_w, c);
        out.input.clear();
        out.input.resize(t, 0.0);
        for ch in 0..c {
            let row = out.dx.row(ch);
            let w = w_in[ch];
            out.input.iter_mut().zip(row).for_each(|(o, &g)| *o += w * g);
            if param_grads {
                grads[self.layout.in_w + ch] =
                    row.iter().zip(&cache.input).map(|(a, b)| a * b).sum();
                grads[self.layout.in_b + ch] = row.iter().sum();
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let c = &self.config;
        format!(
            "wavenet\n  blocks: {}\n  channels: {}\n  kernel: {}\n  dilations: {:?}\n  output tanh: {}\n  mixer bias: {}\n  wiring: {:?}\n  receptive field: {}\n  parameters: {}\n  parameter hash: {}\n",
            c.blocks(),
            c.channels,
            c.kernel,
            c.dilations,
            c.output_tanh,
            c.mixer_bias,
            c.wiring,
            self.receptive_field(),
            self.param_count(),
            self.params.hash()
        )
    }

    /// Versioned binary checkpoint: config block, parameters, optional
    /// optimizer state.
    pub fn to_bytes(&self, meta: &Metadata, adam: Option<&AdamState>) -> Vec<u8> {
        let c = &self.config;
        let mut w = CheckpointWriter::new(MAGIC, VERSION, meta);
        w.put_u32(c.channels as u32);
        w.put_u32(c.kernel as u32);
        w.put_u32(c.dilations.len() as u32);
        for &d in &c.dilations {
            w.put_u32(d as u32);
        }
        w.put_u8(c.output_tanh as u8);
        w.put_u8(c.mixer_bias as u8);
        w.put_u8(match c.wiring {
            ResidualWiring::PointwiseResidual => 0,
            ResidualWiring::ActivationResidual => 1,
        });
        w.put_u64(c.seed);
        w.put_f64s(&self.params.values);
        match adam {
            Some(a) => {
                w.put_u8(1);
                a.write(&mut w);
            }
            None => w.put_u8(0),
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Option<AdamState>, Metadata)> {
        let mut r = CheckpointReader::open(bytes, MAGIC, VERSION)?;
        let channels = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let blocks = r.u32()? as usize;
        if blocks > 1 << 16 {
            return Err(Error::Checkpoint(format!("implausible block count {blocks}")));
        }
        let dilations = (0..blocks)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let flag = |v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            x => Err(Error::Checkpoint(format!("bad flag byte {x}"))),
        };
        let output_tanh = flag(r.u8()?)?;
        let mixer_bias = flag(r.u8()?)?;
        let wiring = match r.u8()? {
            0 => ResidualWiring::PointwiseResidual,
            1 => ResidualWiring::ActivationResidual,
            x => return Err(Error::Checkpoint(format!("unknown wiring {x}"))),
        };
        let seed = r.u64()?;
        let values = r.f64s()?;
        let adam = if flag(r.u8()?)? {
            Some(AdamState::read(&mut r)?)
        } else {
            None
        };
        let meta = std::mem::take(&mut r.meta);
        r.finish()?;
        let config = WaveNetConfig {
            channels,
            kernel,
            dilations,
            output_tanh,
            mixer_bias,
            wiring,
            seed,
        };
        let model = WaveNetModel::from_parts(config, values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if adam.as_ref().is_some_and(|a| a.len() != model.param_count()) {
            return Err(Error::Checkpoint("optimizer state size mismatch".into()));
        }
        Ok((model, adam, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &Metadata, adam: Option<&AdamState>) -> Result<()> {
        std::fs::write(path, self.to_bytes(meta, adam))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<AdamState>, Metadata)> {
        WaveNetModel::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn toy(k: usize, c: usize, m: usize, tanh: bool, wiring: ResidualWiring, seed: u64) -> WaveNetModel {
        WaveNetModel::new(WaveNetConfig {
            channels: c,
            kernel: m,
            dilations: doubling(k),
            output_tanh: tanh,
            mixer_bias: true,
            wiring,
            seed,
        })
        .unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.5).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(WaveNetConfig::identification_preset().receptive_field(), 7666);
        assert_eq!(WaveNetConfig::compensation_preset().receptive_field(), 24571);
        let c = WaveNetConfig {
            kernel: 1,
            dilations: vec![1],
            ..WaveNetConfig::default()
        };
        assert_eq!(receptive_field(&c), 1);
        assert_eq!(WaveNetConfig::toy_identification().receptive_field(), 512);
    }

    #[test]
    fn parameter_count_follows_config() {
        let c = WaveNetConfig::toy_identification();
        let (ch, m, k) = (8, 2, 9);
        let expect = 2 * ch + k * (2 * ch * ch * m + 2 * ch + ch * ch + ch) + k * ch + 1;
        assert_eq!(c.param_count(), expect);
        assert_eq!(WaveNetModel::new(c).unwrap().param_count(), expect);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = toy(3, 4, 3, false, ResidualWiring::default(), 1);
        let z = WaveNetModel::from_parts(m.config().clone(), vec![0.0; m.param_count()]).unwrap();
        assert!(z.forward_slice(&noise(300, 1)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_with_exact_receptive_field() {
        for wiring in [ResidualWiring::PointwiseResidual, ResidualWiring::ActivationResidual] {
            let m = toy(3, 4, 3, false, wiring, 2);
            let n = m.receptive_field();
            assert_eq!(n, 15);
            let u = noise(200, 3);
            let mut v = u.clone();
            let n0 = 80;
            v[n0] += 0.7;
            let (a, b) = (m.forward_slice(&u), m.forward_slice(&v));
            assert!((0..n0).all(|t| a[t] == b[t]));
            assert!((n0..n0 + n).all(|t| a[t] != b[t]));
            assert!((n0 + n..200).all(|t| a[t] == b[t]));
        }
    }

    #[test]
    fn tanh_output_is_bounded() {
        let m = toy(2, 4, 2, true, ResidualWiring::default(), 4);
        let u: Vec<f64> = noise(500, 5).iter().map(|v| 40.0 * v).collect();
        assert!(m.forward_slice(&u).iter().all(|v| v.abs() < 1.0));
    }

    fn loss_and_probe(m: &WaveNetModel, u: &[f64], probe: &[f64]) -> f64 {
        m.forward_slice(u).iter().zip(probe).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = toy(2, 4, 3, true, ResidualWiring::default(), 6);
        let cache = m.forward_train(&noise(64, 7));
        let g = m.backward(&cache, &[0.0; 64], true).unwrap();
        assert!(g.params.iter().chain(&g.input).all(|&v| v == 0.0));
    }

    #[test]
    fn single_weight_network_gradient() {
        // one block, one channel, kernel 1: y = w_mix·tanh(a)σ(b) + b_mix
        let mut m = toy(1, 1, 1, false, ResidualWiring::default(), 8);
        let vals = m.params_mut().values_mut();
        vals.iter_mut().for_each(|v| *v = 0.0);
        // layout: in_w, in_b, dil_w[2], dil_b[2], pw_w, pw_b, mix_w, mix_b
        vals[0] = 1.0;
        vals[2] = 0.8;
        vals[3] = 0.3;
        vals[8] = 1.5;
        let u = [0.4];
        let target = 0.1;
        let cache = m.forward_train(&u);
        let y = cache.output()[0];
        let g = m.backward(&cache, &[2.0 * (y - target)], true).unwrap();
        let (a, b) = (0.8 * 0.4, 0.3 * 0.4);
        let s = 1.0 / (1.0 + (-b as f64).exp());
        let gate = (a as f64).tanh() * s;
        assert!((y - 1.5 * gate).abs() < 1e-15);
        assert!((g.params[8] - 2.0 * (y - target) * gate).abs() < 1e-12);
        assert!((g.params[9] - 2.0 * (y - target)).abs() < 1e-12);
    }

    fn check_all_gradients(m: &WaveNetModel, seed: u64) {
        let t = 256;
        let u = noise(t, seed);
        let probe = noise(t, seed + 100);
        let cache = m.forward_train(&u);
        let g = m.backward(&cache, &probe, true).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..m.param_count() {
            let mut p = m.clone();
            p.params_mut().values_mut()[i] += h;
            let up = loss_and_probe(&p, &u, &probe);
            p.params_mut().values_mut()[i] -= 2.0 * h;
            let down = loss_and_probe(&p, &u, &probe);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g.params[i]).abs() / fd.abs().max(g.params[i].abs()).max(1e-7);
            worst = worst.max(err);
        }
        for i in (0..t).step_by(17) {
            let mut v = u.clone();
            v[i] += h;
            let up = loss_and_probe(m, &v, &probe);
            v[i] -= 2.0 * h;
            let down = loss_and_probe(m, &v, &probe);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g.input[i]).abs() / fd.abs().max(g.input[i].abs()).max(1e-7);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
        let skipped = m.backward(&cache, &probe, false).unwrap();
        assert!(skipped.params.is_empty());
        assert_eq!(skipped.input, g.input);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            check_all_gradients(&toy(2, 4, 3, seed % 2 == 0, ResidualWiring::default(), seed), seed);
        }
    }

    #[test]
    fn alternative_wiring_gradients() {
        check_all_gradients(&toy(3, 3, 2, true, ResidualWiring::ActivationResidual, 9), 9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = toy(3, 4, 2, true, ResidualWiring::default(), 10);
        let mut meta = Metadata::new();
        meta.insert("role".into(), "test".into());
        let mut adam = AdamState::new(m.param_count());
        adam.step = 3;
        let bytes = m.to_bytes(&meta, Some(&adam));
        let (m2, a2, meta2) = WaveNetModel::from_bytes(&bytes).unwrap();
        assert_eq!(m, m2);
        assert_eq!(a2.as_ref(), Some(&adam));
        assert_eq!(meta, meta2);
        assert_eq!(m2.to_bytes(&meta2, a2.as_ref()), bytes);
        let u = noise(100, 11);
        assert_eq!(m.forward_slice(&u), m2.forward_slice(&u));
        for cut in [0, 9, 40, bytes.len() - 1] {
            assert!(WaveNetModel::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(WaveNetModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn rejects_mismatched_parameters() {
        let c = WaveNetConfig::toy_identification();
        assert!(WaveNetModel::from_parts(c.clone(), vec![0.0; 3]).is_err());
        let bad = WaveNetConfig {
            dilations: vec![],
            ..c
        };
        assert!(WaveNetModel::new(bad).is_err());
    }
}
