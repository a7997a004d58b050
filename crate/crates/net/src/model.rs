//! Dual-branch encoder, concatenation fusion and a shared U-Net decoder.

use tch::nn::{self, Module};
use tch::{Device, Kind, Tensor};

use crate::config::ModelConfig;
use crate::error::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    S1,
    S2,
}

impl Branch {
    fn path(self) -> &'static str {
        match self {
            Branch::S1 => "s1",
            Branch::S2 => "s2",
        }
    }
}

/// Four feature maps, finest first.
#[derive(Debug)]
pub struct EncoderFeatures {
    pub maps: Vec<Tensor>,
}

impl EncoderFeatures {
    pub fn shapes(&self) -> Vec<Vec<i64>> {
        self.maps.iter().map(|m| m.size()).collect()
    }
}

fn conv(p: nn::Path, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> nn::Conv2D {
    let cfg = nn::ConvConfig { stride: stride as i64, padding: pad as i64, bias, ..Default::default() };
    nn::conv2d(p, cin as i64, cout as i64, k as i64, cfg)
}

fn bn(p: nn::Path, c: usize) -> nn::BatchNorm {
    nn::batch_norm2d(p, c as i64, Default::default())
}

#[derive(Debug)]
struct Bottleneck {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    conv2: nn::Conv2D,
    bn2: nn::BatchNorm,
    conv3: nn::Conv2D,
    bn3: nn::BatchNorm,
    shortcut: Option<(nn::Conv2D, nn::BatchNorm)>,
}

impl Bottleneck {
    fn new(p: nn::Path, cin: usize, cout: usize, stride: usize) -> Self {
        let mid = (cout / 4).max(1);
        let shortcut = (cin != cout || stride != 1)
            .then(|| (conv(&p / "proj", cin, cout, 1, stride, 0, false), bn(&p / "proj_bn", cout)));
        Bottleneck {
            conv1: conv(&p / "conv1", cin, mid, 1, 1, 0, false),
            bn1: bn(&p / "bn1", mid),
            conv2: conv(&p / "conv2", mid, mid, 3, stride, 1, false),
            bn2: bn(&p / "bn2", mid),
            conv3: conv(&p / "conv3", mid, cout, 1, 1, 0, false),
            bn3: bn(&p / "bn3", cout),
            shortcut,
        }
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Tensor {
        let y = x.apply(&self.conv1).apply_t(&self.bn1, train).relu();
        let y = y.apply(&self.conv2).apply_t(&self.bn2, train).relu();
        let y = y.apply(&self.conv3).apply_t(&self.bn3, train);
        let s = match &self.shortcut {
            Some((c, b)) => x.apply(c).apply_t(b, train),
            None => x.shallow_clone(),
        };
        (y + s).relu()
    }
}

/// Residual encoder: a stride-2 7×7 stem, then four bottleneck stages. Stage 1 keeps the stem's
/// resolution, stages 2 to 4 halve it in their first block.
#[derive(Debug)]
struct Encoder {
    in_channels: usize,
    stem: nn::Conv2D,
    stem_bn: nn::BatchNorm,
    stages: Vec<Vec<Bottleneck>>,
}

impl Encoder {
    fn new(p: nn::Path, in_channels: usize, cfg: &ModelConfig) -> Self {
        let stem_c = cfg.scaled(cfg.stem_channels);
        let mut prev = stem_c;
        let mut stages = Vec::with_capacity(4);
        for (i, (&out, &n)) in cfg.encoder_channels().iter().zip(&cfg.blocks_per_stage).enumerate() {
            let sp = &p / format!("stage{}", i + 1);
            let blocks = (0..n)
                .map(|j| {
                    let stride = if j == 0 && i > 0 { 2 } else { 1 };
                    let b = Bottleneck::new(&sp / format!("block{j}"), prev, out, stride);
                    prev = out;
                    b
                })
                .collect();
            stages.push(blocks);
        }
        Encoder {
            in_channels,
            stem: conv(&p / "stem" / "conv", in_channels, stem_c, 7, 2, 3, false),
            stem_bn: bn(&p / "stem" / "bn", stem_c),
            stages,
        }
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Vec<Tensor> {
        let mut x = x.apply(&self.stem).apply_t(&self.stem_bn, train).relu();
        let mut maps = Vec::with_capacity(4);
        for stage in &self.stages {
            for b in stage {
                x = b.forward_t(&x, train);
            }
            maps.push(x.shallow_clone());
        }
        maps
    }
}

#[derive(Debug)]
struct DecoderStage {
    conv: nn::Conv2D,
    bn: nn::BatchNorm,
}

/// The full network. Parameters live in the owned `VarStore`.
#[derive(Debug)]
pub struct MbhrNet {
    config: ModelConfig,
    vs: nn::VarStore,
    s1: Encoder,
    s2: Encoder,
    decoder: Vec<DecoderStage>,
    head: nn::Conv2D,
}

impl MbhrNet {
    pub fn new(config: ModelConfig, device: Device) -> Result<Self> {
        config.validate()?;
        let vs = nn::VarStore::new(device);
        let root = vs.root();
        let s1 = Encoder::new(&root / Branch::S1.path(), config.s1_in_channels, &config);
        let s2 = Encoder::new(&root / Branch::S2.path(), config.s2_in_channels, &config);
        let fused = config.fused_channels();
        let skips = [fused[2], fused[1], fused[0], 0];
        let k = config.decoder_kernel;
        let mut prev = fused[3];
        let mut decoder = Vec::with_capacity(4);
        for (i, (&d, &skip)) in config.decoder_channels().iter().zip(&skips).enumerate() {
            let p = &root / "decoder" / format!("stage{}", i + 1);
            decoder.push(DecoderStage { conv: conv(&p / "conv", prev + skip, d, k, 1, k / 2, false), bn: bn(&p / "bn", d) });
            prev = d;
        }
        let head = conv(&root / "head" / "conv", prev, 1, 1, 1, 0, true);
        Ok(MbhrNet { config, vs, s1, s2, decoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn var_store(&self) -> &nn::VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut nn::VarStore {
        &mut self.vs
    }

    pub fn device(&self) -> Device {
        self.vs.device()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> i64 {
        self.vs.trainable_variables().iter().map(|t| t.numel() as i64).sum()
    }

    /// Every variable, trainable or not, under its `branch/stage/layer` path, sorted by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut v: Vec<_> = self.vs.variables().into_iter().map(|(k, t)| (k.replace('.', "/"), t)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    fn check_input(&self, branch: Branch, x: &Tensor) -> Result<Tensor> {
        let c = match branch {
            Branch::S1 => self.config.s1_in_channels,
            Branch::S2 => self.config.s2_in_channels,
        } as i64;
        let s = self.config.input_size_px as i64;
        let x = if x.dim() == 3 { x.unsqueeze(0) } else { x.shallow_clone() };
        let size = x.size();
        if size.len() != 4 || size[1] != c || size[2] != s || size[3] != s {
            return Err(NetError::shape(format!("{:?} input of shape (N, {c}, {s}, {s}) or ({c}, {s}, {s})", branch), size));
        }
        Ok(x)
    }

    /// Runs one branch's encoder. Accepts `(C, H, W)` or `(N, C, H, W)`.
    pub fn encode(&self, branch: Branch, x: &Tensor, train: bool) -> Result<EncoderFeatures> {
        let x = self.check_input(branch, x)?;
        let enc = match branch {
            Branch::S1 => &self.s1,
            Branch::S2 => &self.s2,
        };
        debug_assert_eq!(x.size()[1], enc.in_channels as i64);
        Ok(EncoderFeatures { maps: enc.forward_t(&x, train) })
    }

    /// Channel-axis concatenation per level, S1 first.
    pub fn fuse(&self, s1: &EncoderFeatures, s2: &EncoderFeatures) -> Result<EncoderFeatures> {
        fuse(s1, s2)
    }

    /// Decoder plus head without the final ReLU and scale.
    pub fn decode_logits(&self, fused: &EncoderFeatures, train: bool) -> Result<Tensor> {
        let expect = self.config.fused_channels();
        if fused.maps.len() != 4 {
            return Err(NetError::shape("4 fused levels", fused.maps.len()));
        }
        for (i, m) in fused.maps.iter().enumerate() {
            let sz = m.size();
            let side = self.config.level_size(i) as i64;
            if sz.len() != 4 || sz[1] != expect[i] as i64 || sz[2] != side || sz[3] != side {
                return Err(NetError::shape(format!("level {i} of shape (N, {}, {side}, {side})", expect[i]), sz));
            }
        }
        let skips = [Some(&fused.maps[2]), Some(&fused.maps[1]), Some(&fused.maps[0]), None];
        let mut x = fused.maps[3].shallow_clone();
        for (stage, skip) in self.decoder.iter().zip(skips) {
            let sz = x.size();
            x = x.upsample_nearest2d([sz[2] * 2, sz[3] * 2], None, None);
            if let Some(s) = skip {
                x = Tensor::cat(&[&x, s], 1);
            }
            x = x.apply(&stage.conv).apply_t(&stage.bn, train).relu();
        }
        Ok(self.head.forward(&x))
    }

    /// Nonnegative heights in meters, shape `(N, 1, H, W)`.
    pub fn decode(&self, fused: &EncoderFeatures, train: bool) -> Result<Tensor> {
        Ok(self.decode_logits(fused, train)?.relu() * self.config.output_scale_m)
    }

    pub fn forward_t(&self, s2: &Tensor, s1: &Tensor, train: bool) -> Result<Tensor> {
        let f1 = self.encode(Branch::S1, s1, train)?;
        let f2 = self.encode(Branch::S2, s2, train)?;
        self.decode(&self.fuse(&f1, &f2)?, train)
    }

    /// Inference-mode forward without gradient tracking.
    pub fn predict(&self, s2: &Tensor, s1: &Tensor) -> Result<Tensor> {
        tch::no_grad(|| self.forward_t(s2, s1, false))
    }

    /// Converts every variable to f64, for finite-difference checks.
    pub fn to_double(&mut self) {
        self.vs.double();
    }

    pub fn kind(&self) -> Kind {
        self.vs.trainable_variables().first().map(|t| t.kind()).unwrap_or(Kind::Float)
    }
}

pub fn fuse(s1: &EncoderFeatures, s2: &EncoderFeatures) -> Result<EncoderFeatures> {
    if s1.maps.len() != s2.maps.len() {
        return Err(NetError::shape(format!("{} levels", s1.maps.len()), s2.maps.len()));
    }
    let mut maps = Vec::with_capacity(s1.maps.len());
    for (i, (a, b)) in s1.maps.iter().zip(&s2.maps).enumerate() {
        let (sa, sb) = (a.size(), b.size());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(NetError::shape(format!("level {i} matching {sa:?} outside the channel axis"), sb));
        }
        maps.push(Tensor::cat(&[a, b], 1));
    }
    Ok(EncoderFeatures { maps })
}
