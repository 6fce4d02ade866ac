//! Generator and dual discriminators.
//!
//! Generator pipeline: a strided CNN per modality, query-exchanged
//! cross-attention, element-wise product of each attention output with the
//! downsampled features that share its grid, a transposed-conv stack per
//! modality back to input resolution, channel concatenation, a U-Net, and a
//! sigmoid head producing a 3-channel image.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{exchange_queries, AttentionConfig, AttentionParams, Exchange};
use crate::error::{Error, Result};
use crate::image::Modality;
use crate::nn::{child_rng, leaky_relu, sigmoid, Conv2d, ConvTranspose2d, InstanceNorm, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Output widths of the stride-2 blocks before attention.
    pub down_channels: Vec<usize>,
    pub attention: AttentionConfig,
    /// When false the attention module and its product are replaced by an
    /// identity pass-through of the downsampled features.
    pub use_attention: bool,
    /// Output widths of the transposed-conv blocks; one per down block.
    pub up_channels: Vec<usize>,
    /// Declared input width of the U-Net; must equal twice the last up width.
    pub unet_in_channels: usize,
    /// Encoder widths, one per U-Net level.
    pub unet_channels: Vec<usize>,
    /// Widths of the stride-2 discriminator blocks.
    pub disc_channels: Vec<usize>,
    pub leaky_slope: f64,
    pub init_std: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            down_channels: vec![32, 64],
            attention: AttentionConfig::default(),
            use_attention: true,
            up_channels: vec![32, 16],
            unet_in_channels: 32,
            unet_channels: vec![32, 64, 128, 256],
            disc_channels: vec![32, 64, 128, 256],
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }
}

impl ArchConfig {
    /// Width-4 configuration used by the gradient check.
    pub fn tiny() -> Self {
        Self {
            down_channels: vec![4, 4],
            attention: AttentionConfig {
                d_model: 4,
                n_heads: 2,
                ..Default::default()
            },
            use_attention: true,
            up_channels: vec![4, 4],
            unet_in_channels: 8,
            unet_channels: vec![4, 4, 4],
            disc_channels: vec![4, 4, 4],
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }

    /// Scaled-down configuration for desk-scale training runs.
    pub fn small() -> Self {
        Self {
            down_channels: vec![8, 16],
            attention: AttentionConfig {
                d_model: 16,
                n_heads: 4,
                ..Default::default()
            },
            use_attention: true,
            up_channels: vec![8, 8],
            unet_in_channels: 16,
            unet_channels: vec![8, 16, 32, 64],
            disc_channels: vec![8, 16, 32, 64],
            leaky_slope: 0.2,
            init_std: 0.02,
        }
    }

    /// Downsampling applied before attention.
    pub fn attention_factor(&self) -> usize {
        1 << self.down_channels.len()
    }

    /// Every input side must be divisible by this.
    pub fn network_factor(&self) -> usize {
        let unet = 1 << self.unet_channels.len();
        let disc = 1 << self.disc_channels.len();
        self.attention_factor().max(unet).max(disc)
    }

    /// Grid on which attention runs for a given input size.
    pub fn downsampled_grid(&self, input: (usize, usize)) -> (usize, usize) {
        let f = self.attention_factor();
        (input.0 / f, input.1 / f)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |layer: &str, msg: String| Err(Error::Construction {
            layer: layer.to_string(),
            msg,
        });
        if self.down_channels.is_empty() {
            return fail("gen.down_rgb.0", "at least one down block is required".into());
        }
        if let Some(i) = self.down_channels.iter().position(|&c| c == 0) {
            return fail(&format!("gen.down_rgb.{i}"), "zero width".into());
        }
        if self.use_attention {
            self.attention.validate("gen.attn_rgb")?;
        }
        if self.up_channels.len() != self.down_channels.len() {
            return fail(
                &format!("gen.up_rgb.{}", self.up_channels.len().min(self.down_channels.len())),
                format!(
                    "{} up blocks cannot undo {} down blocks",
                    self.up_channels.len(),
                    self.down_channels.len()
                ),
            );
        }
        if let Some(i) = self.up_channels.iter().position(|&c| c == 0) {
            return fail(&format!("gen.up_rgb.{i}"), "zero width".into());
        }
        let concat = 2 * self.up_channels.last().copied().unwrap_or(0);
        if self.unet_in_channels != concat {
            return fail(
                "gen.unet.enc0",
                format!(
                    "declared input width {} but the concatenated branches give {concat}",
                    self.unet_in_channels
                ),
            );
        }
        if self.unet_channels.len() < 2 {
            return fail("gen.unet.enc0", "the U-Net needs at least two levels".into());
        }
        if let Some(i) = self.unet_channels.iter().position(|&c| c == 0) {
            return fail(&format!("gen.unet.enc{i}"), "zero width".into());
        }
        if self.disc_channels.is_empty() {
            return fail("disc.block0", "at least one discriminator block is required".into());
        }
        if let Some(i) = self.disc_channels.iter().position(|&c| c == 0) {
            return fail(&format!("disc.block{i}"), "zero width".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be > 0, got {}", self.init_std)));
        }
        Ok(())
    }

    /// Checks that `size` is a legal input resolution for this architecture.
    pub fn check_resolution(&self, size: (usize, usize)) -> Result<()> {
        let f = self.network_factor();
        if size.0 < 32 || size.1 < 32 || size.0 % f != 0 || size.1 % f != 0 {
            return Err(Error::Config(format!(
                "resolution {}x{} must be at least 32x32 and divisible by {f}",
                size.0, size.1
            )));
        }
        Ok(())
    }
}

/// Conv → optional instance norm → leaky ReLU.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: Option<InstanceNorm>,
}

impl ConvBlock {
    fn forward(&self, x: &Tensor, slope: f64) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = match &self.norm {
            Some(n) => n.forward(&y)?,
            None => y,
        };
        leaky_relu(&y, slope)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    conv: ConvTranspose2d,
    norm: InstanceNorm,
}

impl UpBlock {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            conv: ConvTranspose2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 4, 2, 1, false, std, rng)?,
            norm: InstanceNorm::new(store, &format!("{name}.norm"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor, slope: f64) -> Result<Tensor> {
        leaky_relu(&self.norm.forward(&self.conv.forward(x)?)?, slope)
    }
}

fn down_block(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<ConvBlock> {
    Ok(ConvBlock {
        conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 4, 2, 1, false, std, rng)?,
        norm: Some(InstanceNorm::new(store, &format!("{name}.norm"), out_ch)?),
    })
}

/// Encoder/decoder with skip concatenation and a sigmoid RGB head.
#[derive(Debug, Clone)]
pub struct UNet {
    encoders: Vec<ConvBlock>,
    decoders: Vec<UpBlock>,
    head: Conv2d,
}

impl UNet {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, widths: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut encoders = Vec::with_capacity(widths.len());
        let mut prev = in_ch;
        for (i, &w) in widths.iter().enumerate() {
            encoders.push(down_block(store, &format!("{name}.enc{i}"), prev, w, std, rng)?);
            prev = w;
        }
        // Decoder i upsamples to the resolution of encoder i-1 (or the input for i = 0).
        let levels = widths.len();
        let mut decoders = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            let in_w = if i == levels - 1 { widths[i] } else { 2 * widths[i] };
            let out_w = if i == 0 { widths[0] } else { widths[i - 1] };
            decoders.push(UpBlock::new(store, &format!("{name}.dec{i}"), in_w, out_w, std, rng)?);
        }
        let head = Conv2d::new(store, &format!("{name}.head"), widths[0], 3, 3, 1, 1, true, std, rng)?;
        Ok(Self {
            encoders,
            decoders,
            head,
        })
    }

    /// Returns the pre-sigmoid logits.
    fn forward(&self, x: &Tensor, slope: f64) -> Result<Tensor> {
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x.clone();
        for enc in &self.encoders {
            h = enc.forward(&h, slope)?;
            skips.push(h.clone());
        }
        skips.pop();
        let mut y = h;
        for dec in &self.decoders {
            y = dec.forward(&y, slope)?;
            if let Some(skip) = skips.pop() {
                y = Tensor::cat(&[&y, &skip], 1)?;
            }
        }
        self.head.forward(&y)
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }
}

/// Everything the generator computes on the way to the fused image.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// `(B, 3, H, W)` in `(0, 1)`.
    pub fused: Tensor,
    pub logits: Tensor,
    pub feat_rgb: Tensor,
    pub feat_ir: Tensor,
    /// `None` when attention is disabled.
    pub exchange: Option<Exchange>,
    pub branch_rgb: Tensor,
    pub branch_ir: Tensor,
}

#[derive(Debug, Clone)]
pub struct Generator {
    down_rgb: Vec<ConvBlock>,
    down_ir: Vec<ConvBlock>,
    attn_rgb: Option<AttentionParams>,
    attn_ir: Option<AttentionParams>,
    up_rgb: Vec<UpBlock>,
    up_ir: Vec<UpBlock>,
    unet: UNet,
    slope: f64,
}

impl Generator {
    pub fn new(store: &mut ParamStore, config: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let std = config.init_std;
        let build_down = |store: &mut ParamStore, name: &str, in_ch: usize, rng: &mut ChaCha8Rng| -> Result<Vec<ConvBlock>> {
            let mut prev = in_ch;
            config
                .down_channels
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let b = down_block(store, &format!("{name}.{i}"), prev, w, std, rng);
                    prev = w;
                    b
                })
                .collect()
        };
        let build_up = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| -> Result<Vec<UpBlock>> {
            let mut prev = *config.down_channels.last().expect("validated non-empty");
            config
                .up_channels
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let b = UpBlock::new(store, &format!("{name}.{i}"), prev, w, std, rng);
                    prev = w;
                    b
                })
                .collect()
        };
        let d = *config.down_channels.last().expect("validated non-empty");
        let down_rgb = build_down(store, "gen.down_rgb", 3, &mut child_rng(rng))?;
        let down_ir = build_down(store, "gen.down_ir", 1, &mut child_rng(rng))?;
        let (attn_rgb, attn_ir) = if config.use_attention {
            (
                Some(AttentionParams::new(store, "gen.attn_rgb", d, &config.attention, std, &mut child_rng(rng))?),
                Some(AttentionParams::new(store, "gen.attn_ir", d, &config.attention, std, &mut child_rng(rng))?),
            )
        } else {
            let _ = (child_rng(rng), child_rng(rng));
            (None, None)
        };
        let up_rgb = build_up(store, "gen.up_rgb", &mut child_rng(rng))?;
        let up_ir = build_up(store, "gen.up_ir", &mut child_rng(rng))?;
        let unet = UNet::new(store, "gen.unet", config.unet_in_channels, &config.unet_channels, std, &mut child_rng(rng))?;
        Ok(Self {
            down_rgb,
            down_ir,
            attn_rgb,
            attn_ir,
            up_rgb,
            up_ir,
            unet,
            slope: config.leaky_slope,
        })
    }

    pub fn uses_attention(&self) -> bool {
        self.attn_rgb.is_some()
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    /// `visual` is `(B,3,H,W)`, `thermal` is `(B,1,H,W)`, both the same size.
    pub fn forward(&self, visual: &Tensor, thermal: &Tensor) -> Result<GeneratorOutput> {
        let (bv, cv, hv, wv) = visual.dims4()?;
        let (bt, ct, ht, wt) = thermal.dims4()?;
        if cv != 3 || ct != 1 {
            return Err(Error::Shape(format!(
                "generator expects 3-channel visual and 1-channel thermal input, got {cv} and {ct}"
            )));
        }
        if (bv, hv, wv) != (bt, ht, wt) {
            return Err(Error::Shape(format!(
                "visual {hv}x{wv} and thermal {ht}x{wt} inputs must be preprocessed to the same size"
            )));
        }
        let run = |blocks: &[ConvBlock], x: &Tensor| -> Result<Tensor> {
            blocks.iter().try_fold(x.clone(), |h, b| b.forward(&h, self.slope))
        };
        let feat_rgb = run(&self.down_rgb, visual)?;
        let feat_ir = run(&self.down_ir, thermal)?;
        let (exchange, branch_rgb, branch_ir) = match (&self.attn_rgb, &self.attn_ir) {
            (Some(pr), Some(pi)) => {
                let ex = exchange_queries(&feat_rgb, &feat_ir, pr, pi)?;
                let branch_rgb = (&feat_rgb * &ex.attended_ir)?;
                let branch_ir = (&feat_ir * &ex.attended_rgb)?;
                (Some(ex), branch_rgb, branch_ir)
            }
            _ => (None, feat_rgb.clone(), feat_ir.clone()),
        };
        let up = |blocks: &[UpBlock], x: &Tensor| -> Result<Tensor> {
            blocks.iter().try_fold(x.clone(), |h, b| b.forward(&h, self.slope))
        };
        let up_rgb = up(&self.up_rgb, &branch_rgb)?;
        let up_ir = up(&self.up_ir, &branch_ir)?;
        let joined = Tensor::cat(&[&up_rgb, &up_ir], 1)?;
        let logits = self.unet.forward(&joined, self.slope)?;
        let fused = sigmoid(&logits)?;
        Ok(GeneratorOutput {
            fused,
            logits,
            feat_rgb,
            feat_ir,
            exchange,
            branch_rgb,
            branch_ir,
        })
    }
}

/// Patch discriminator over the channel concatenation `(original, fused)`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    modality: Modality,
    blocks: Vec<ConvBlock>,
    head: Conv2d,
    slope: f64,
}

/// Per-patch probabilities and their per-sample mean.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// `(B, 1, h, w)` in `(0, 1)`.
    pub patches: Tensor,
    /// `(B,)` mean patch probability.
    pub score: Tensor,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, name: &str, modality: Modality, config: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let std = config.init_std;
        let mut prev = modality.channels() + 3;
        let mut blocks = Vec::with_capacity(config.disc_channels.len());
        for (i, &w) in config.disc_channels.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.block{i}.conv"), prev, w, 4, 2, 1, i == 0, std, rng)?;
            let norm = (i > 0)
                .then(|| InstanceNorm::new(store, &format!("{name}.block{i}.norm"), w))
                .transpose()?;
            blocks.push(ConvBlock { conv, norm });
            prev = w;
        }
        let head = Conv2d::new(store, &format!("{name}.head"), prev, 1, 3, 1, 1, true, std, rng)?;
        Ok(Self {
            modality,
            blocks,
            head,
            slope: config.leaky_slope,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    pub fn forward(&self, original: &Tensor, fused: &Tensor) -> Result<DiscriminatorOutput> {
        let (bo, co, ho, wo) = original.dims4()?;
        let expected = self.modality.channels();
        if co != expected {
            return Err(Error::Modality(format!(
                "the {} discriminator expects a {expected}-channel original image, got {co} channels",
                self.modality.short_name()
            )));
        }
        let (bf, cf, hf, wf) = fused.dims4()?;
        if cf != 3 || (bf, hf, wf) != (bo, ho, wo) {
            return Err(Error::Shape(format!(
                "bad image pair for the {} discriminator: original {bo}x{co}x{ho}x{wo}, fused {bf}x{cf}x{hf}x{wf}",
                self.modality.short_name()
            )));
        }
        let x = Tensor::cat(&[original, fused], 1)?;
        let h = self.blocks.iter().try_fold(x, |h, b| b.forward(&h, self.slope))?;
        let patches = sigmoid(&self.head.forward(&h)?)?;
        let score = patches.flatten_from(1)?.mean(1)?;
        Ok(DiscriminatorOutput { patches, score })
    }
}

/// Generator and both discriminators with their parameter stores.
#[derive(Debug, Clone)]
pub struct Networks {
    pub config: ArchConfig,
    pub generator: Generator,
    pub disc_ir: Discriminator,
    pub disc_rgb: Discriminator,
    pub gen_params: ParamStore,
    pub disc_ir_params: ParamStore,
    pub disc_rgb_params: ParamStore,
}

impl Networks {
    /// Scaled-normal initialisation, deterministic under `seed`.
    pub fn init(seed: u64, config: &ArchConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen_params = ParamStore::new(dtype, device.clone());
        let mut disc_ir_params = ParamStore::new(dtype, device.clone());
        let mut disc_rgb_params = ParamStore::new(dtype, device.clone());
        let generator = Generator::new(&mut gen_params, config, &mut child_rng(&mut rng))?;
        let disc_ir = Discriminator::new(&mut disc_ir_params, "disc_ir", Modality::Thermal, config, &mut child_rng(&mut rng))?;
        let disc_rgb = Discriminator::new(&mut disc_rgb_params, "disc_rgb", Modality::Visual, config, &mut child_rng(&mut rng))?;
        Ok(Self {
            config: config.clone(),
            generator,
            disc_ir,
            disc_rgb,
            gen_params,
            disc_ir_params,
            disc_rgb_params,
        })
    }

    pub fn stores(&self) -> [(&'static str, &ParamStore); 3] {
        [
            ("gen", &self.gen_params),
            ("disc_ir", &self.disc_ir_params),
            ("disc_rgb", &self.disc_rgb_params),
        ]
    }

    pub fn count_parameters(&self) -> usize {
        self.stores().iter().map(|(_, s)| s.count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(b: usize, h: usize, w: usize, dtype: DType) -> (Tensor, Tensor) {
        let dev = Device::Cpu;
        let v = Tensor::rand(0f32, 1.0, (b, 3, h, w), &dev).unwrap().to_dtype(dtype).unwrap();
        let t = Tensor::rand(0f32, 1.0, (b, 1, h, w), &dev).unwrap().to_dtype(dtype).unwrap();
        (v, t)
    }

    fn values(t: &Tensor) -> Vec<f32> {
        t.to_dtype(DType::F32).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Networks::init(3, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let b = Networks::init(3, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        for ((_, sa), (_, sb)) in a.stores().iter().zip(b.stores().iter()) {
            for ((na, va), (nb, vb)) in sa.iter().zip(sb.iter()) {
                assert_eq!(na, nb);
                let (x, y) = (values(va.as_tensor()), values(vb.as_tensor()));
                assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
        let c = Networks::init(4, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let w = |n: &Networks| values(n.gen_params.vars()[0].as_tensor());
        assert_ne!(w(&a), w(&c));
    }

    #[test]
    fn downsampled_grid_arithmetic() {
        let cfg = ArchConfig::default();
        assert_eq!(cfg.attention_factor(), 4);
        assert_eq!(cfg.downsampled_grid((256, 256)), (64, 64));
        assert_eq!(cfg.network_factor(), 16);
    }

    #[test]
    fn mismatched_unet_input_is_construction_error() {
        let cfg = ArchConfig {
            unet_in_channels: 7,
            ..ArchConfig::tiny()
        };
        match Networks::init(0, &cfg, DType::F32, &Device::Cpu) {
            Err(Error::Construction { layer, .. }) => assert_eq!(layer, "gen.unet.enc0"),
            other => panic!("expected construction error, got {other:?}"),
        }
    }

    #[test]
    fn fused_shape_and_range() {
        let nets = Networks::init(1, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let (v, t) = inputs(2, 32, 32, DType::F32);
        let out = nets.generator.forward(&v, &t).unwrap();
        assert_eq!(out.fused.dims(), &[2, 3, 32, 32]);
        assert!(values(&out.fused).iter().all(|&x| x > 0.0 && x < 1.0));
        let again = nets.generator.forward(&v, &t).unwrap();
        assert_eq!(values(&out.fused), values(&again.fused));
        let ex = out.exchange.unwrap();
        assert_eq!(ex.map_rgb_to_ir.dims(), &[2, 64, 64]);
    }

    #[test]
    fn zero_output_head_gives_half() {
        let nets = Networks::init(1, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let w = nets.gen_params.get("gen.unet.head.weight").unwrap();
        w.set(&w.zeros_like().unwrap()).unwrap();
        let (v, t) = inputs(1, 32, 32, DType::F32);
        let out = nets.generator.forward(&v, &t).unwrap();
        assert!(values(&out.fused).iter().all(|&x| x == 0.5));
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let nets = Networks::init(1, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let (v, _) = inputs(1, 32, 32, DType::F32);
        let (_, t) = inputs(1, 48, 32, DType::F32);
        assert!(matches!(nets.generator.forward(&v, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_contract() {
        let nets = Networks::init(2, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let (v, t) = inputs(1, 32, 32, DType::F32);
        match nets.disc_ir.forward(&v, &v) {
            Err(Error::Modality(_)) => {}
            other => panic!("expected modality error, got {other:?}"),
        }
        let small = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(nets.disc_ir.forward(&t, &small), Err(Error::Shape(_))));
        // Real path: original paired with itself.
        let out = nets.disc_rgb.forward(&v, &v).unwrap();
        assert_eq!(out.patches.dims(), &[1, 1, 4, 4]);
        let w = nets.disc_rgb_params.get("disc_rgb.head.weight").unwrap();
        w.set(&w.zeros_like().unwrap()).unwrap();
        let out = nets.disc_rgb.forward(&v, &v).unwrap();
        assert!(values(&out.patches).iter().all(|&x| x == 0.5));
        assert_eq!(values(&out.score), vec![0.5]);
    }

    #[test]
    fn patch_grid_at_256() {
        let cfg = ArchConfig {
            disc_channels: vec![2, 2, 2, 2],
            ..ArchConfig::tiny()
        };
        let nets = Networks::init(2, &cfg, DType::F32, &Device::Cpu).unwrap();
        let (v, t) = inputs(1, 256, 256, DType::F32);
        let fused = v.clone();
        assert_eq!(nets.disc_ir.forward(&t, &fused).unwrap().patches.dims(), &[1, 1, 16, 16]);
    }

    #[test]
    fn no_attention_is_shape_identical_and_smaller() {
        let base = Networks::init(5, &ArchConfig::tiny(), DType::F32, &Device::Cpu).unwrap();
        let cfg = ArchConfig {
            use_attention: false,
            ..ArchConfig::tiny()
        };
        let ablated = Networks::init(5, &cfg, DType::F32, &Device::Cpu).unwrap();
        let (v, t) = inputs(1, 32, 32, DType::F32);
        let a = base.generator.forward(&v, &t).unwrap();
        let b = ablated.generator.forward(&v, &t).unwrap();
        assert_eq!(a.fused.dims(), b.fused.dims());
        assert!(b.exchange.is_none());
        assert!(ablated.count_parameters() < base.count_parameters());
    }

    #[test]
    fn wider_networks_have_more_parameters() {
        let tiny = ArchConfig::tiny();
        let double = ArchConfig {
            down_channels: tiny.down_channels.iter().map(|c| 2 * c).collect(),
            attention: AttentionConfig {
                d_model: 2 * tiny.attention.d_model,
                ..tiny.attention.clone()
            },
            up_channels: tiny.up_channels.iter().map(|c| 2 * c).collect(),
            unet_in_channels: 2 * tiny.unet_in_channels,
            unet_channels: tiny.unet_channels.iter().map(|c| 2 * c).collect(),
            disc_channels: tiny.disc_channels.iter().map(|c| 2 * c).collect(),
            ..tiny.clone()
        };
        let a = Networks::init(0, &tiny, DType::F32, &Device::Cpu).unwrap();
        let b = Networks::init(0, &double, DType::F32, &Device::Cpu).unwrap();
        assert!(b.count_parameters() > a.count_parameters());
    }
}
