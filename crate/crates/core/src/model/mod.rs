//! Strided conv backbone, per-scale detection head and grid-compensated decoding.

pub mod checkpoint;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::VEHICLE_SIZE;
use crate::error::{Error, Result};
use crate::geometry::{Detection, OrientedBox};
use crate::numcore::Tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};

/// Raw head channels per cell.
pub const OUT_CHANNELS: usize = 4;
/// Initial bias of the confidence logit: `sigmoid(-2) ~= 0.12`.
pub const CONF_BIAS_INIT: f64 = -2.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub stride: usize,
    /// Extra stride-1 3x3 convs after the strided one.
    #[serde(default)]
    pub depth: usize,
}

/// Two stride-2 stem convs (overall stride 4), then one stage per scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_channels: 16,
            stages: [32, 64, 128]
                .map(|channels| StageConfig {
                    channels,
                    stride: 2,
                    depth: 0,
                })
                .to_vec(),
        }
    }
}

impl BackboneConfig {
    /// Cumulative stride of each feature map.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = 4;
        self.stages
            .iter()
            .map(|st| {
                s *= st.stride;
                s
            })
            .collect()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.channels).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_l: usize,
    pub ch: Vec<usize>,
    pub mid_channels: usize,
    pub out_channels: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_l: 3,
            ch: vec![32, 64, 128],
            mid_channels: 64,
            out_channels: OUT_CHANNELS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    /// `(width, height)` given to every predicted box.
    pub canonical_size: (f64, f64),
    /// Parameter initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            canonical_size: VEHICLE_SIZE,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains in minutes on one CPU core. The
    /// extra stride-1 convs widen the finest scale's receptive field: a
    /// marker can sit up to about 65 px from its vehicle's BEV cell.
    pub fn compact() -> Self {
        let stages = [(16, 5), (32, 2), (64, 0)]
            .map(|(channels, depth)| StageConfig {
                channels,
                stride: 2,
                depth,
            })
            .to_vec();
        ModelConfig {
            head: HeadConfig {
                n_l: 3,
                ch: stages.iter().map(|s| s.channels).collect(),
                mid_channels: 16,
                out_channels: OUT_CHANNELS,
            },
            backbone: BackboneConfig {
                stem_channels: 8,
                stages,
            },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.head;
        if h.out_channels != OUT_CHANNELS {
            return Err(Error::Config(format!(
                "out_channels must be {OUT_CHANNELS}, got {}",
                h.out_channels
            )));
        }
        if h.n_l == 0 || h.n_l != h.ch.len() {
            return Err(Error::Config(format!(
                "n_l = {} but ch has {} entries",
                h.n_l,
                h.ch.len()
            )));
        }
        if self.backbone.channels() != h.ch {
            return Err(Error::Config(format!(
                "backbone produces channels {:?}, head expects {:?}",
                self.backbone.channels(),
                h.ch
            )));
        }
        let sizes = [self.backbone.stem_channels, h.mid_channels];
        if sizes.contains(&0)
            || h.ch.contains(&0)
            || self.backbone.stages.iter().any(|s| s.stride == 0)
        {
            return Err(Error::Config(
                "channel counts and strides must be positive".into(),
            ));
        }
        let (w, hh) = self.canonical_size;
        if !(w > 0.0 && hh > 0.0) {
            return Err(Error::Config(format!(
                "canonical size must be positive, got {w} x {hh}"
            )));
        }
        Ok(())
    }
}

/// Cell centers of one detection scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// `centers[m][n]` for column `m`, row `n`.
    pub centers: Vec<Vec<(f64, f64)>>,
}

pub fn make_grid(width: usize, height: usize) -> Result<Grid> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "grid must be at least 1x1, got {width}x{height}"
        )));
    }
    let centers = (0..width)
        .map(|m| {
            (0..height)
                .map(|n| {
                    (
                        (m as f64 + 0.5) / width as f64,
                        (n as f64 + 0.5) / height as f64,
                    )
                })
                .collect()
        })
        .collect();
    Ok(Grid {
        width,
        height,
        centers,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRef {
    pub batch: usize,
    pub scale_index: usize,
    /// `(m, n)`: column, row.
    pub cell: (usize, usize),
}

/// Per-cell predictions of a batch as flat graph tensors, one entry per cell
/// of every scale (scale-major, then batch, row, column).
#[derive(Clone, Debug)]
pub struct Decoded {
    pub x: Tensor,
    pub y: Tensor,
    pub theta: Tensor,
    pub conf: Tensor,
    pub cells: Vec<CellRef>,
    /// Grid center of each entry's cell.
    pub centers: Vec<(f64, f64)>,
    pub canonical_size: (f64, f64),
}

impl Decoded {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_center(&self, i: usize) -> (f64, f64) {
        self.centers[i]
    }

    /// Detection view of entry `i`.
    pub fn detection(&self, i: usize) -> Detection {
        let c = self.cells[i];
        Detection {
            bbox: OrientedBox {
                cx: self.x.data()[i],
                cy: self.y.data()[i],
                width: self.canonical_size.0,
                height: self.canonical_size.1,
                // tanh keeps this strictly inside (-pi, pi).
                theta: self.theta.data()[i],
            },
            confidence: self.conf.data()[i],
            scale_index: c.scale_index,
            cell: c.cell,
        }
    }

    /// Entry indices belonging to batch element `b`.
    pub fn frame_entries(&self, b: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.cells[i].batch == b)
            .collect()
    }

    pub fn frame_detections(&self, b: usize) -> Vec<Detection> {
        self.frame_entries(b)
            .into_iter()
            .map(|i| self.detection(i))
            .collect()
    }
}

/// Decode raw head outputs (`B x 4 x H_i x W_i` each) against their grids.
///
/// Per cell: `x = tanh(r0) / (2 W) + x_center`, `y = tanh(r1) / (2 H) + y_center`,
/// `theta = pi tanh(r2)`, `confidence = sigmoid(r3)`.
pub fn decode(raw: &[Tensor], grids: &[Grid], canonical_size: (f64, f64)) -> Result<Decoded> {
    if raw.len() != grids.len() || raw.is_empty() {
        return Err(Error::Contract(format!(
            "{} head outputs for {} grids",
            raw.len(),
            grids.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ths = Vec::new();
    let mut cs = Vec::new();
    let mut cells = Vec::new();
    let mut centers = Vec::new();
    for (s, (r, g)) in raw.iter().zip(grids).enumerate() {
        let sh = r.shape();
        if sh.len() != 4 || sh[1] != OUT_CHANNELS || sh[2] != g.height || sh[3] != g.width {
            return Err(Error::Contract(format!(
                "scale {s}: raw output {:?} does not fit a {}x{} grid",
                sh, g.width, g.height
            )));
        }
        let (b, h, w) = (sh[0], sh[2], sh[3]);
        let channel = |c: usize| -> Arc<Vec<usize>> {
            let mut idx = Vec::with_capacity(b * h * w);
            for bi in 0..b {
                let base = (bi * OUT_CHANNELS + c) * h * w;
                idx.extend(base..base + h * w);
            }
            Arc::new(idx)
        };
        let mut cx = Vec::with_capacity(b * h * w);
        let mut cy = Vec::with_capacity(b * h * w);
        for bi in 0..b {
            for n in 0..h {
                for m in 0..w {
                    let (x0, y0) = g.centers[m][n];
                    cx.push(x0);
                    cy.push(y0);
                    centers.push((x0, y0));
                    cells.push(CellRef {
                        batch: bi,
                        scale_index: s,
                        cell: (m, n),
                    });
                }
            }
        }
        let len = cx.len();
        let x = r
            .gather(channel(0))?
            .tanh()
            .scale(0.5 / w as f64)
            .add(&Tensor::new(&[len], cx)?)?;
        let y = r
            .gather(channel(1))?
            .tanh()
            .scale(0.5 / h as f64)
            .add(&Tensor::new(&[len], cy)?)?;
        xs.push(x);
        ys.push(y);
        ths.push(r.gather(channel(2))?.tanh().scale(PI));
        // Rounding can take sigmoid to exactly 0 or 1; keep it inside (0, 1).
        cs.push(
            r.gather(channel(3))?
                .sigmoid()
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
        );
    }
    Ok(Decoded {
        x: Tensor::concat(&xs)?,
        y: Tensor::concat(&ys)?,
        theta: Tensor::concat(&ths)?,
        conf: Tensor::concat(&cs)?,
        cells,
        centers,
        canonical_size,
    })
}

struct ConvParam {
    weight: usize,
    bias: usize,
    stride: usize,
    padding: usize,
}

/// Named parameters plus the layer wiring derived from the config.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.params == other.params
    }
}

/// Layer shapes in canonical parameter order: `(name, out, in, k)`.
fn layer_specs(cfg: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let b = &cfg.backbone;
    let mut out = vec![
        ("stem.0".to_string(), b.stem_channels, 3, 3),
        ("stem.1".to_string(), b.stem_channels, b.stem_channels, 3),
    ];
    let mut cin = b.stem_channels;
    for (i, st) in b.stages.iter().enumerate() {
        out.push((format!("stage{}.0", i + 1), st.channels, cin, 3));
        for d in 0..st.depth {
            out.push((
                format!("stage{}.{}", i + 1, d + 1),
                st.channels,
                st.channels,
                3,
            ));
        }
        cin = st.channels;
    }
    let mid = cfg.head.mid_channels;
    for (i, &c) in cfg.head.ch.iter().enumerate() {
        out.push((format!("head{}.conv1", i + 1), mid, c, 3));
        out.push((format!("head{}.conv2", i + 1), mid, mid, 3));
        out.push((format!("head{}.conv3", i + 1), OUT_CHANNELS, mid, 1));
    }
    out
}

impl Model {
    /// Convs followed by a ReLU get He-uniform weights (`+-sqrt(6/fan_in)`) so
    /// activations keep their scale through the deep stages; the output convs
    /// use `+-1/sqrt(fan_in)`. Biases are zero except the confidence logit,
    /// which starts at [`CONF_BIAS_INIT`].
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, o, i, k) in layer_specs(&config) {
            let fan_in = (i * k * k) as f64;
            let bound = if name.ends_with("conv3") {
                1.0 / fan_in.sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            let w: Vec<f64> = (0..o * i * k * k)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let mut bias = vec![0.0; o];
            if name.ends_with("conv3") {
                bias[3] = CONF_BIAS_INIT;
            }
            names.push(format!("{name}.weight"));
            params.push(Tensor::parameter(&[o, i, k, k], w)?);
            names.push(format!("{name}.bias"));
            params.push(Tensor::parameter(&[o], bias)?);
        }
        Ok(Model {
            config,
            names,
            params,
        })
    }

    /// Assemble from named tensors, checking names and shapes against the config.
    pub fn from_parts(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut expected = Model::new(config.clone())?;
        if named.len() != expected.params.len() {
            return Err(Error::Checkpoint(format!(
                "config needs {} tensors, found {}",
                expected.params.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != expected.names[i] || t.shape() != expected.params[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: got {name} {:?}, config expects {} {:?}",
                    t.shape(),
                    expected.names[i],
                    expected.params[i].shape()
                )));
            }
            expected.params[i] = t.to_parameter();
        }
        Ok(expected)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    /// Swap in new parameter values (same order and shapes).
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.params[i].shape() {
                return Err(Error::dim(
                    "set_params",
                    format!("{} has shape {:?}", self.names[i], p.shape()),
                ));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn conv_plan(&self) -> Vec<ConvParam> {
        let b = &self.config.backbone;
        let mut strides = vec![2, 2];
        for st in &b.stages {
            strides.push(st.stride);
            strides.extend(std::iter::repeat_n(1, st.depth));
        }
        strides.extend(std::iter::repeat_n(1, 3 * self.config.head.n_l));
        strides
            .into_iter()
            .enumerate()
            .map(|(i, stride)| {
                let k = self.params[2 * i].shape()[2];
                ConvParam {
                    weight: 2 * i,
                    bias: 2 * i + 1,
                    stride,
                    padding: k / 2,
                }
            })
            .collect()
    }

    fn conv(&self, x: &Tensor, c: &ConvParam, params: &[Tensor]) -> Result<Tensor> {
        x.conv2d(&params[c.weight], &params[c.bias], c.stride, c.padding)
    }

    /// Multi-scale features for a `B x 3 x H x W` input.
    pub fn backbone_forward(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.backbone_with(input, &self.params)
    }

    fn backbone_with(&self, input: &Tensor, params: &[Tensor]) -> Result<Vec<Tensor>> {
        let sh = input.shape();
        if sh.len() != 4 || sh[1] != 3 {
            return Err(Error::Config(format!(
                "backbone expects B x 3 x H x W input, got {sh:?}"
            )));
        }
        let total = *self
            .config
            .backbone
            .strides()
            .last()
            .expect("validated non-empty");
        if !sh[2].is_multiple_of(total) || !sh[3].is_multiple_of(total) {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by the overall stride {total}",
                sh[2], sh[3]
            )));
        }
        let plan = self.conv_plan();
        let mut x = self.conv(input, &plan[0], params)?.relu();
        x = self.conv(&x, &plan[1], params)?.relu();
        let mut li = 2;
        let mut feats = Vec::new();
        for st in &self.config.backbone.stages {
            for _ in 0..=st.depth {
                x = self.conv(&x, &plan[li], params)?.relu();
                li += 1;
            }
            feats.push(x.clone());
        }
        Ok(feats)
    }

    /// Per-scale conv3x3 -> ReLU -> conv3x3 -> ReLU -> conv1x1 to 4 raw channels.
    pub fn head_forward(&self, features: &[Tensor]) -> Result<Vec<Tensor>> {
        self.head_with(features, &self.params)
    }

    fn head_with(&self, features: &[Tensor], params: &[Tensor]) -> Result<Vec<Tensor>> {
        let h = &self.config.head;
        if features.len() != h.n_l {
            return Err(Error::Config(format!(
                "head expects {} feature maps, got {}",
                h.n_l,
                features.len()
            )));
        }
        let plan = self.conv_plan();
        let first = plan.len() - 3 * h.n_l;
        features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if f.shape().len() != 4 || f.shape()[1] != h.ch[i] {
                    return Err(Error::Config(format!(
                        "scale {i}: feature map {:?} but head expects {} channels",
                        f.shape(),
                        h.ch[i]
                    )));
                }
                let p = &plan[first + 3 * i..first + 3 * i + 3];
                let a = self.conv(f, &p[0], params)?.relu();
                let b = self.conv(&a, &p[1], params)?.relu();
                self.conv(&b, &p[2], params)
            })
            .collect()
    }

    pub fn grids(&self, height: usize, width: usize) -> Result<Vec<Grid>> {
        self.config
            .backbone
            .strides()
            .iter()
            .map(|s| make_grid(width / s, height / s))
            .collect()
    }

    /// Backbone, head and decode on the differentiable graph.
    pub fn forward(&self, input: &Tensor) -> Result<Decoded> {
        self.forward_with(input, &self.params)
    }

    /// Same as [`Model::forward`] without recording a graph.
    pub fn predict(&self, input: &Tensor) -> Result<Decoded> {
        let frozen: Vec<Tensor> = self.params.iter().map(Tensor::detach).collect();
        self.forward_with(input, &frozen)
    }

    fn forward_with(&self, input: &Tensor, params: &[Tensor]) -> Result<Decoded> {
        let feats = self.backbone_with(input, params)?;
        let raw = self.head_with(&feats, params)?;
        let sh = input.shape();
        decode(&raw, &self.grids(sh[2], sh[3])?, self.config.canonical_size)
    }
}

/// Stack `3 x H x W` images into a `B x 3 x H x W` input tensor.
pub fn batch_input(images: &[Vec<f64>], height: usize, width: usize) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * 3 * height * width);
    for img in images {
        if img.len() != 3 * height * width {
            return Err(Error::dim(
                "batch_input",
                format!("image has {} values", img.len()),
            ));
        }
        data.extend_from_slice(img);
    }
    Tensor::new(&[images.len(), 3, height, width], data)
}
