//! The encoder-decoder network with its hand-wired backward pass.
//!
//! Layout for `K` cascades and base width `F` (level `k` runs at
//! `input >> k` with `F·2^k` filters):
//!
//! ```text
//! [C_t | C_next] (6ch) ─ rgb encoder:   level k = conv3x3+ReLU ×2, then maxpool
//! D_t (1ch)            ─ depth encoder: same layout
//! bottleneck (level K) = concat(pooled rgb, pooled depth) → conv3x3+ReLU × bottleneck_convs
//! decoder level k = up-conv 2x2/2 → concat(skips at level k) → conv3x3+ReLU ×2
//! head            = conv1x1, linear
//! ```
//!
//! Skips: level 0 receives the early (two-conv) features of the depth
//! encoder and of the color encoder; levels 1 and 2 receive both encoders'
//! features at that level.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::NetworkConfig;
use super::Sample;
use crate::error::{Error, Result};
use crate::loss::{masked_rmse, masked_rmse_grad};
use crate::tensor::{
    adam_step, concat_channels, conv2d, conv2d_backward, conv2d_transpose,
    conv2d_transpose_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    separable_conv2d, separable_conv2d_backward, AdamConfig, Dims, Padding, Param, Scalar, Tensor,
};

pub const RGB_CHANNELS: usize = 6;
pub const DEPTH_CHANNELS: usize = 1;
const KERNEL: usize = 3;
const UP_KERNEL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    SeparableConv,
    TransposedConv,
    Relu,
    MaxPool,
    Concat,
}

impl OpKind {
    pub fn is_convolution(&self) -> bool {
        matches!(self, OpKind::Conv | OpKind::SeparableConv | OpKind::TransposedConv)
    }
}

#[derive(Clone, Debug)]
pub struct LayerTiming {
    pub name: String,
    pub kind: OpKind,
    pub elapsed: Duration,
}

/// Per-op wall-clock timings collected by [`NetworkGraph::forward_profiled`].
#[derive(Clone, Debug, Default)]
pub struct Profile {
    pub entries: Vec<LayerTiming>,
}

impl Profile {
    pub fn total(&self) -> Duration {
        self.entries.iter().map(|e| e.elapsed).sum()
    }
}

struct Timer<'a>(Option<&'a mut Profile>);

impl Timer<'_> {
    fn time<R>(&mut self, name: &str, kind: OpKind, f: impl FnOnce() -> R) -> R {
        match &mut self.0 {
            None => f(),
            Some(p) => {
                let t = Instant::now();
                let r = f();
                p.entries.push(LayerTiming {
                    name: name.to_string(),
                    kind,
                    elapsed: t.elapsed(),
                });
                r
            }
        }
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, dims: [usize; 4], bound: f64) -> Param<T> {
    Param::new(Tensor::from_fn(dims, |_, _, _, _| T::from_f64(rng.gen_range(-bound..bound))))
}

fn zeros<T: Scalar>(c: usize) -> Param<T> {
    Param::new(Tensor::zeros([1, 1, 1, c]))
}

#[derive(Clone, Debug)]
enum ConvWeights<T> {
    Dense {
        kernel: Param<T>,
        bias: Param<T>,
    },
    Separable {
        depthwise: Param<T>,
        pointwise: Param<T>,
        bias: Param<T>,
    },
}

/// Stride-1 same-padded convolution with optional ReLU.
#[derive(Clone, Debug)]
struct ConvUnit<T> {
    name: String,
    weights: ConvWeights<T>,
    relu: bool,
}

impl<T: Scalar> ConvUnit<T> {
    fn new(name: String, k: usize, cin: usize, cout: usize, separable: bool, relu: bool, rng: &mut ChaCha8Rng) -> Self {
        // He-uniform for ReLU layers, LeCun-uniform for the linear head.
        let gain = if relu { 6.0 } else { 3.0 };
        let weights = if separable && k > 1 {
            ConvWeights::Separable {
                depthwise: uniform(rng, [k, k, cin, 1], (gain / (k * k) as f64).sqrt()),
                pointwise: uniform(rng, [1, 1, cin, cout], (gain / cin as f64).sqrt()),
                bias: zeros(cout),
            }
        } else {
            ConvWeights::Dense {
                kernel: uniform(rng, [k, k, cin, cout], (gain / (k * k * cin) as f64).sqrt()),
                bias: zeros(cout),
            }
        };
        ConvUnit { name, weights, relu }
    }

    fn forward(&self, x: &Tensor<T>, timer: &mut Timer) -> Result<Tensor<T>> {
        let y = match &self.weights {
            ConvWeights::Dense { kernel, bias } => timer.time(&self.name, OpKind::Conv, || {
                conv2d(x, &kernel.value, &bias.value, 1, Padding::Same)
            })?,
            ConvWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => timer.time(&self.name, OpKind::SeparableConv, || {
                separable_conv2d(x, &depthwise.value, &pointwise.value, &bias.value, 1, Padding::Same)
            })?,
        };
        if self.relu {
            Ok(timer.time(&self.name, OpKind::Relu, || relu(&y)))
        } else {
            Ok(y)
        }
    }

    /// `y` is this unit's forward output.
    fn backward(&mut self, x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = if self.relu {
            relu_backward(y, g)?
        } else {
            g.clone()
        };
        match &mut self.weights {
            ConvWeights::Dense { kernel, bias } => {
                let gr = conv2d_backward(x, &kernel.value, &g, 1, Padding::Same)?;
                kernel.accumulate(&gr.kernel)?;
                bias.accumulate(&gr.bias)?;
                Ok(gr.input)
            }
            ConvWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => {
                let gr = separable_conv2d_backward(x, &depthwise.value, &pointwise.value, &g, 1, Padding::Same)?;
                depthwise.accumulate(&gr.depthwise)?;
                pointwise.accumulate(&gr.pointwise)?;
                bias.accumulate(&gr.bias)?;
                Ok(gr.input)
            }
        }
    }

    fn params(&self) -> Vec<(String, &Param<T>)> {
        match &self.weights {
            ConvWeights::Dense { kernel, bias } => vec![
                (format!("{}.kernel", self.name), kernel),
                (format!("{}.bias", self.name), bias),
            ],
            ConvWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => vec![
                (format!("{}.depthwise", self.name), depthwise),
                (format!("{}.pointwise", self.name), pointwise),
                (format!("{}.bias", self.name), bias),
            ],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.weights {
            ConvWeights::Dense { kernel, bias } => vec![kernel, bias],
            ConvWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => vec![depthwise, pointwise, bias],
        }
    }

    fn cast<U: Scalar>(&self) -> ConvUnit<U> {
        let weights = match &self.weights {
            ConvWeights::Dense { kernel, bias } => ConvWeights::Dense {
                kernel: kernel.cast(),
                bias: bias.cast(),
            },
            ConvWeights::Separable {
                depthwise,
                pointwise,
                bias,
            } => ConvWeights::Separable {
                depthwise: depthwise.cast(),
                pointwise: pointwise.cast(),
                bias: bias.cast(),
            },
        };
        ConvUnit {
            name: self.name.clone(),
            weights,
            relu: self.relu,
        }
    }
}

/// 2×2 stride-2 transposed convolution with ReLU.
#[derive(Clone, Debug)]
struct UpUnit<T> {
    name: String,
    kernel: Param<T>,
    bias: Param<T>,
}

impl<T: Scalar> UpUnit<T> {
    fn new(name: String, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        UpUnit {
            name,
            kernel: uniform(rng, [UP_KERNEL, UP_KERNEL, cout, cin], (6.0 / cin as f64).sqrt()),
            bias: zeros(cout),
        }
    }

    fn forward(&self, x: &Tensor<T>, out_hw: (usize, usize), timer: &mut Timer) -> Result<Tensor<T>> {
        let y = timer.time(&self.name, OpKind::TransposedConv, || {
            conv2d_transpose(x, &self.kernel.value, &self.bias.value, 2, Some(out_hw))
        })?;
        Ok(timer.time(&self.name, OpKind::Relu, || relu(&y)))
    }

    fn backward(&mut self, x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = relu_backward(y, g)?;
        let (gx, gk, gb) = conv2d_transpose_backward(x, &self.kernel.value, &g, 2)?;
        self.kernel.accumulate(&gk)?;
        self.bias.accumulate(&gb)?;
        Ok(gx)
    }
}

#[derive(Clone, Debug)]
struct Encoder<T> {
    levels: Vec<[ConvUnit<T>; 2]>,
}

struct EncoderTrace<T> {
    /// Input of level k (raw input for k = 0, pooled features after).
    inputs: Vec<Tensor<T>>,
    mids: Vec<Tensor<T>>,
    /// Level outputs; these are the skip sources.
    outs: Vec<Tensor<T>>,
    /// Argmax of the pool applied after each level.
    pools: Vec<Vec<usize>>,
    /// Pooled last level, fed into the bottleneck.
    pooled: Tensor<T>,
}

impl<T: Scalar> Encoder<T> {
    fn new(prefix: &str, cin: usize, cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Self {
        let levels = (0..cfg.cascades)
            .map(|k| {
                let c_in = if k == 0 { cin } else { cfg.filters(k - 1) };
                let c = cfg.filters(k);
                [
                    ConvUnit::new(format!("{prefix}_enc{k}_conv1"), KERNEL, c_in, c, cfg.separable, true, rng),
                    ConvUnit::new(format!("{prefix}_enc{k}_conv2"), KERNEL, c, c, cfg.separable, true, rng),
                ]
            })
            .collect();
        Encoder { levels }
    }

    fn forward(&self, x: &Tensor<T>, timer: &mut Timer) -> Result<EncoderTrace<T>> {
        let mut tr = EncoderTrace {
            inputs: Vec::new(),
            mids: Vec::new(),
            outs: Vec::new(),
            pools: Vec::new(),
            pooled: Tensor::zeros(Dims::default()),
        };
        let mut cur = x.clone();
        for [c1, c2] in &self.levels {
            let mid = c1.forward(&cur, timer)?;
            let out = c2.forward(&mid, timer)?;
            let pool = timer.time(&c2.name, OpKind::MaxPool, || maxpool2d(&out))?;
            tr.inputs.push(std::mem::replace(&mut cur, pool.output));
            tr.mids.push(mid);
            tr.outs.push(out);
            tr.pools.push(pool.argmax);
        }
        tr.pooled = cur;
        Ok(tr)
    }

    /// `skip_grads[k]` is the gradient flowing into level k's output from
    /// skip connections; `pooled_grad` the one from the bottleneck.
    fn backward(&mut self, tr: &EncoderTrace<T>, mut skip_grads: Vec<Option<Tensor<T>>>, pooled_grad: &Tensor<T>) -> Result<()> {
        let last = self.levels.len() - 1;
        let mut down = maxpool2d_backward(tr.outs[last].dims(), &tr.pools[last], pooled_grad)?;
        for k in (0..self.levels.len()).rev() {
            if let Some(s) = skip_grads[k].take() {
                down.add_assign(&s)?;
            }
            let [c1, c2] = &mut self.levels[k];
            let g_mid = c2.backward(&tr.mids[k], &tr.outs[k], &down)?;
            let g_in = c1.backward(&tr.inputs[k], &tr.mids[k], &g_mid)?;
            if k > 0 {
                down = maxpool2d_backward(tr.outs[k - 1].dims(), &tr.pools[k - 1], &g_in)?;
            }
        }
        Ok(())
    }

    fn units(&self) -> impl Iterator<Item = &ConvUnit<T>> {
        self.levels.iter().flatten()
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut ConvUnit<T>> {
        self.levels.iter_mut().flatten()
    }
}

#[derive(Clone, Debug)]
struct DecoderStage<T> {
    up: UpUnit<T>,
    convs: [ConvUnit<T>; 2],
}

struct DecoderTrace<T> {
    up: Tensor<T>,
    cat: Tensor<T>,
    mid: Tensor<T>,
    out: Tensor<T>,
}

/// Where the extra channels of a decoder concat come from, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SkipSource {
    Rgb,
    Depth,
}

pub(crate) struct Trace<T> {
    rgb: EncoderTrace<T>,
    depth: EncoderTrace<T>,
    bott_in: Tensor<T>,
    bott: Vec<Tensor<T>>,
    /// Indexed by level.
    dec: Vec<DecoderTrace<T>>,
    pub output: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct NetworkGraph<T = f32> {
    config: NetworkConfig,
    rgb: Encoder<T>,
    depth: Encoder<T>,
    bottleneck: Vec<ConvUnit<T>>,
    /// Indexed by level; built and serialized deepest first.
    decoder: Vec<DecoderStage<T>>,
    head: ConvUnit<T>,
}

impl<T: Scalar> NetworkGraph<T> {
    /// Builds the graph with seeded fan-in-scaled uniform weights and zero
    /// biases.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = *config;
        let k = cfg.cascades;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb = Encoder::new("rgb", RGB_CHANNELS, &cfg, &mut rng);
        let depth = Encoder::new("depth", DEPTH_CHANNELS, &cfg, &mut rng);
        let bottleneck = (0..cfg.bottleneck_convs)
            .map(|i| {
                let cin = if i == 0 { 2 * cfg.filters(k - 1) } else { cfg.filters(k) };
                ConvUnit::new(format!("bottleneck_conv{}", i + 1), KERNEL, cin, cfg.filters(k), cfg.separable, true, &mut rng)
            })
            .collect();
        let mut decoder: Vec<DecoderStage<T>> = (0..k)
            .rev()
            .map(|level| {
                let c = cfg.filters(level);
                let cat = c + skip_sources(&cfg, level).len() * c;
                DecoderStage {
                    up: UpUnit::new(format!("dec{level}_up"), cfg.filters(level + 1), c, &mut rng),
                    convs: [
                        ConvUnit::new(format!("dec{level}_conv1"), KERNEL, cat, c, cfg.separable, true, &mut rng),
                        ConvUnit::new(format!("dec{level}_conv2"), KERNEL, c, c, cfg.separable, true, &mut rng),
                    ],
                }
            })
            .collect();
        decoder.reverse();
        let head = ConvUnit::new("head".into(), 1, cfg.filters(0), 1, false, false, &mut rng);
        Ok(NetworkGraph {
            config: cfg,
            rgb,
            depth,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Same weights, different input geometry (the network is fully
    /// convolutional).
    pub fn with_input_dims(&self, input_h: usize, input_w: usize) -> Result<Self> {
        let config = self.config.with_input(input_h, input_w);
        config.validate()?;
        Ok(NetworkGraph {
            config,
            ..self.clone()
        })
    }

    pub fn cast<U: Scalar>(&self) -> NetworkGraph<U> {
        let enc = |e: &Encoder<T>| Encoder {
            levels: e.levels.iter().map(|[a, b]| [a.cast(), b.cast()]).collect(),
        };
        NetworkGraph {
            config: self.config,
            rgb: enc(&self.rgb),
            depth: enc(&self.depth),
            bottleneck: self.bottleneck.iter().map(|u| u.cast()).collect(),
            decoder: self
                .decoder
                .iter()
                .map(|s| DecoderStage {
                    up: UpUnit {
                        name: s.up.name.clone(),
                        kernel: s.up.kernel.cast(),
                        bias: s.up.bias.cast(),
                    },
                    convs: [s.convs[0].cast(), s.convs[1].cast()],
                })
                .collect(),
            head: self.head.cast(),
        }
    }

    /// All parameters with their names, in fixed topological order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for u in self.rgb.units().chain(self.depth.units()).chain(&self.bottleneck) {
            out.extend(u.params());
        }
        for s in self.decoder.iter().rev() {
            out.push((format!("{}.kernel", s.up.name), &s.up.kernel));
            out.push((format!("{}.bias", s.up.name), &s.up.bias));
            for c in &s.convs {
                out.extend(c.params());
            }
        }
        out.extend(self.head.params());
        out
    }

    /// Same order as [`NetworkGraph::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for u in self
            .rgb
            .units_mut()
            .chain(self.depth.units_mut())
            .chain(self.bottleneck.iter_mut())
        {
            out.extend(u.params_mut());
        }
        for s in self.decoder.iter_mut().rev() {
            out.push(&mut s.up.kernel);
            out.push(&mut s.up.bias);
            for c in &mut s.convs {
                out.extend(c.params_mut());
            }
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Zeroes every weight of the 1×1 output layer.
    pub fn zero_head(&mut self) {
        for p in self.head.params_mut() {
            p.value.fill(T::ZERO);
        }
    }

    fn check_inputs(&self, c_t: &Tensor<T>, d_t: &Tensor<T>, c_next: &Tensor<T>) -> Result<()> {
        let n = c_t.dims().n;
        let (h, w) = (self.config.input_h, self.config.input_w);
        c_t.expect_dims(Dims::new(n, h, w, 3), "C_t")?;
        c_next.expect_dims(Dims::new(n, h, w, 3), "C_next")?;
        d_t.expect_dims(Dims::new(n, h, w, 1), "D_t")?;
        if n == 0 {
            return Err(Error::shape("empty batch"));
        }
        Ok(())
    }

    fn run(&self, c_t: &Tensor<T>, d_t: &Tensor<T>, c_next: &Tensor<T>, timer: &mut Timer) -> Result<Trace<T>> {
        self.check_inputs(c_t, d_t, c_next)?;
        let cfg = &self.config;
        let rgb_in = timer.time("rgb_input", OpKind::Concat, || concat_channels(c_t, c_next))?;
        let rgb = self.rgb.forward(&rgb_in, timer)?;
        let depth = self.depth.forward(d_t, timer)?;

        let bott_in = timer.time("bottleneck_merge", OpKind::Concat, || concat_channels(&rgb.pooled, &depth.pooled))?;
        let mut bott: Vec<Tensor<T>> = Vec::with_capacity(self.bottleneck.len());
        for u in &self.bottleneck {
            let x = bott.last().unwrap_or(&bott_in);
            let y = u.forward(x, timer)?;
            bott.push(y);
        }

        let mut dec: Vec<DecoderTrace<T>> = Vec::with_capacity(cfg.cascades);
        for level in (0..cfg.cascades).rev() {
            let stage = &self.decoder[level];
            let x = dec.last().map(|t| &t.out).unwrap_or_else(|| bott.last().expect("bottleneck"));
            let up = stage.up.forward(x, cfg.level_dims(level), timer)?;
            let mut cat = up.clone();
            for src in skip_sources(cfg, level) {
                let feat = match src {
                    SkipSource::Rgb => &rgb.outs[level],
                    SkipSource::Depth => &depth.outs[level],
                };
                cat = timer.time(&stage.convs[0].name, OpKind::Concat, || concat_channels(&cat, feat))?;
            }
            let mid = stage.convs[0].forward(&cat, timer)?;
            let out = stage.convs[1].forward(&mid, timer)?;
            dec.push(DecoderTrace { up, cat, mid, out });
        }
        dec.reverse();
        let output = self.head.forward(&dec[0].out, timer)?;
        Ok(Trace {
            rgb,
            depth,
            bott_in,
            bott,
            dec,
            output,
        })
    }

    pub(crate) fn trace(&self, sample: &Sample<T>) -> Result<Trace<T>> {
        self.run(&sample.c_t, &sample.d_t, &sample.c_next, &mut Timer(None))
    }

    /// Reconstructed depth (`n × h × w × 1`, normalized units, unclamped).
    pub fn forward(&self, sample: &Sample<T>) -> Result<Tensor<T>> {
        Ok(self.trace(sample)?.output)
    }

    pub fn forward_inputs(&self, c_t: &Tensor<T>, d_t: &Tensor<T>, c_next: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(c_t, d_t, c_next, &mut Timer(None))?.output)
    }

    pub fn forward_profiled(&self, sample: &Sample<T>, profile: &mut Profile) -> Result<Tensor<T>> {
        Ok(self
            .run(&sample.c_t, &sample.d_t, &sample.c_next, &mut Timer(Some(profile)))?
            .output)
    }

    /// Accumulates parameter gradients for `grad_out` = dL/d(output).
    pub(crate) fn backward(&mut self, tr: &Trace<T>, grad_out: &Tensor<T>) -> Result<()> {
        let cfg = self.config;
        let k = cfg.cascades;
        let mut g = self.head.backward(&tr.dec[0].out, &tr.output, grad_out)?;

        let mut rgb_skip: Vec<Option<Tensor<T>>> = vec![None; k];
        let mut depth_skip: Vec<Option<Tensor<T>>> = vec![None; k];
        for level in 0..k {
            let t = &tr.dec[level];
            let stage = &mut self.decoder[level];
            let g_mid = stage.convs[1].backward(&t.mid, &t.out, &g)?;
            let g_cat = stage.convs[0].backward(&t.cat, &t.mid, &g_mid)?;
            let c = cfg.filters(level);
            let g_up = g_cat.slice_channels(0..c)?;
            for (i, src) in skip_sources(&cfg, level).into_iter().enumerate() {
                let part = g_cat.slice_channels(c * (i + 1)..c * (i + 2))?;
                match src {
                    SkipSource::Rgb => rgb_skip[level] = Some(part),
                    SkipSource::Depth => depth_skip[level] = Some(part),
                }
            }
            let x = if level + 1 < k {
                &tr.dec[level + 1].out
            } else {
                tr.bott.last().expect("bottleneck")
            };
            g = stage.up.backward(x, &t.up, &g_up)?;
        }

        for i in (0..self.bottleneck.len()).rev() {
            let x = if i == 0 { &tr.bott_in } else { &tr.bott[i - 1] };
            g = self.bottleneck[i].backward(x, &tr.bott[i], &g)?;
        }
        let split = tr.rgb.pooled.dims().c;
        let g_rgb = g.slice_channels(0..split)?;
        let g_depth = g.slice_channels(split..g.dims().c)?;
        self.rgb.backward(&tr.rgb, rgb_skip, &g_rgb)?;
        self.depth.backward(&tr.depth, depth_skip, &g_depth)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Batch masked RMSE without touching gradients.
    pub fn loss(&self, batch: &[Sample<T>]) -> Result<f64> {
        let b = Sample::stack(batch)?;
        let out = self.forward(&b)?;
        masked_rmse(&out, &b.gt, &b.gt_mask)
    }

    /// Forward + backward for one batch: returns the pooled masked RMSE and
    /// leaves dLoss/dθ in every parameter's gradient buffer.
    pub fn loss_and_grads(&mut self, batch: &[Sample<T>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let b = Sample::stack(batch)?;
        if b.gt_mask.valid_count() == 0 {
            return Err(Error::Training("batch has no valid ground-truth pixels".into()));
        }
        let tr = self.trace(&b)?;
        let loss = masked_rmse(&tr.output, &b.gt, &b.gt_mask)?;
        let g = masked_rmse_grad(&tr.output, &b.gt, &b.gt_mask)?;
        self.zero_grads();
        self.backward(&tr, &g)?;
        Ok(loss)
    }

    /// One Adam step on the batch masked RMSE. Gradients are zeroed
    /// afterwards; on error no parameter is modified.
    pub fn train_step(&mut self, batch: &[Sample<T>], adam: &AdamConfig) -> Result<f64> {
        let loss = self.loss_and_grads(batch)?;
        if !loss.is_finite() || self.params_mut().iter().any(|p| !p.grad.all_finite()) {
            self.zero_grads();
            return Err(Error::Training("non-finite loss or gradient".into()));
        }
        for p in self.params_mut() {
            adam_step(p, adam)?;
        }
        self.zero_grads();
        Ok(loss)
    }
}

fn skip_sources(cfg: &NetworkConfig, level: usize) -> Vec<SkipSource> {
    let mut out = Vec::new();
    if level == 0 {
        if cfg.skips.cnext_input {
            out.push(SkipSource::Rgb);
        }
        if cfg.skips.d_input {
            out.push(SkipSource::Depth);
        }
    } else if level < cfg.cascades && cfg.enc_dec_skip(level) {
        out.push(SkipSource::Rgb);
        out.push(SkipSource::Depth);
    }
    out
}
