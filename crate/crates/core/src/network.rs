//! The dehazing network.
//!
//! The hazy input is split into a Laplacian pyramid. The low band `q_n` goes
//! through the bottom U-Net and becomes the zeroth-order term `j_out`. A
//! second, low-rank U-Net looks at `j_out`, `q_n` and the coarsest high band
//! and emits the attention sharing tensor `K`, which is interpolated to every
//! band and multiplies it. The modulated bands are the higher-order terms;
//! collapsing the pyramid with `j_out` as its base sums the expansion.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::pyramid::{self, Pyramid};
use crate::tensor::{pad_reflect, round_up, Element, Tensor};
use crate::tucker::{self, TuckerConfig};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Factor every 3×3 conv into a 1×1 → 3×3 → 1×1 channel bottleneck.
    pub low_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Conv {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
}

impl Conv {
    fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Block {
    Plain(Conv),
    LowRank([Conv; 3]),
}

impl Block {
    fn build(name: &str, cin: usize, cout: usize, stride: usize, low_rank: bool) -> Self {
        if low_rank {
            let mid = (cout / 2).max(1);
            Block::LowRank([
                Conv::new(format!("{name}.reduce"), cin, mid, 1, 1),
                Conv::new(format!("{name}.spatial"), mid, mid, 3, stride),
                Conv::new(format!("{name}.expand"), mid, cout, 1, 1),
            ])
        } else {
            Block::Plain(Conv::new(name, cin, cout, 3, stride))
        }
    }

    fn convs(&self) -> &[Conv] {
        match self {
            Block::Plain(c) => std::slice::from_ref(c),
            Block::LowRank(cs) => cs,
        }
    }
}

/// U-Net with stride-2 conv downsampling, bilinear upsampling and skip
/// concatenation. Channel width doubles per level.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T: Element = f32> {
    spec: UNetSpec,
    blocks: Vec<Block>,
    /// Kernel and bias of every conv, in block order.
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Element> UNet<T> {
    fn topology(spec: &UNetSpec) -> Vec<Block> {
        let ch = |l: usize| spec.base_channels << l;
        let lr = spec.low_rank;
        let mut blocks = vec![
            Block::build("enc0a", spec.in_channels, ch(0), 1, lr),
            Block::build("enc0b", ch(0), ch(0), 1, lr),
        ];
        for l in 1..=spec.depth {
            blocks.push(Block::build(&format!("down{l}"), ch(l - 1), ch(l), 2, lr));
            blocks.push(Block::build(&format!("enc{l}"), ch(l), ch(l), 1, lr));
        }
        for l in (0..spec.depth).rev() {
            blocks.push(Block::build(&format!("dec{l}"), ch(l + 1) + ch(l), ch(l), 1, lr));
        }
        blocks.push(Block::Plain(Conv::new("out", ch(0), spec.out_channels, 3, 1)));
        blocks
    }

    /// He-uniform kernels, zero biases. With `zero_final` the output conv
    /// starts at zero so the network initially emits zeros.
    pub fn new(spec: UNetSpec, seed: u64, zero_final: bool) -> Result<Self> {
        if spec.base_channels == 0 || spec.in_channels == 0 || spec.out_channels == 0 {
            return Err(contract_err!("U-Net channel counts must be positive: {spec:?}"));
        }
        let blocks = Self::topology(&spec);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut params = Vec::new();
        let last = blocks.len() - 1;
        for (bi, block) in blocks.iter().enumerate() {
            for conv in block.convs() {
                let fan_in = (conv.cin * conv.k * conv.k) as f64;
                let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
                let shape = [conv.cout, conv.cin, conv.k, conv.k];
                let kernel = if zero_final && bi == last {
                    Tensor::zeros(shape)
                } else {
                    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
                };
                params.push((format!("{}.weight", conv.name), kernel));
                params.push((format!("{}.bias", conv.name), Tensor::zeros([conv.cout])));
            }
        }
        Ok(Self { spec, blocks, params })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Put every parameter on the tape, trainable or not.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }

    fn apply_block(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        cursor: &mut usize,
        block: &Block,
        mut x: Var,
    ) -> Result<Var> {
        for conv in block.convs() {
            let (w, b) = (vars[*cursor], vars[*cursor + 1]);
            *cursor += 2;
            x = tape.conv2d(x, w, Some(b), conv.stride, conv.k / 2)?;
        }
        Ok(x)
    }

    /// Same-resolution forward pass; spatial extents must be divisible by `2^depth`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(contract_err!(
                "U-Net bound with {} vars, has {} params",
                vars.len(),
                self.params.len()
            ));
        }
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.spec.in_channels {
            return Err(dim_err!(
                "U-Net expects {} input channels, got {c}",
                self.spec.in_channels
            ));
        }
        let m = 1 << self.spec.depth;
        if h % m != 0 || w % m != 0 {
            return Err(contract_err!(
                "U-Net of depth {} needs extents divisible by {m}, got {h}x{w}",
                self.spec.depth
            ));
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut cursor = 0;
        let mut blocks = self.blocks.iter();
        let mut next = || blocks.next().expect("topology");

        let mut cur = x;
        for _ in 0..2 {
            cur = self.apply_block(tape, vars, &mut cursor, next(), cur)?;
            cur = tape.leaky_relu(cur, slope)?;
        }
        let mut skips = vec![cur];
        for l in 1..=self.spec.depth {
            for _ in 0..2 {
                cur = self.apply_block(tape, vars, &mut cursor, next(), cur)?;
                cur = tape.leaky_relu(cur, slope)?;
            }
            if l < self.spec.depth {
                skips.push(cur);
            }
        }
        for skip in skips.into_iter().rev() {
            let (_, _, sh, sw) = tape.value(skip).dims4()?;
            let up = tape.upsample_bilinear(cur, sh, sw)?;
            let cat = tape.concat(&[up, skip], 1)?;
            cur = self.apply_block(tape, vars, &mut cursor, next(), cat)?;
            cur = tape.leaky_relu(cur, slope)?;
        }
        self.apply_block(tape, vars, &mut cursor, next(), cur)
    }
}

/// Branch producing `j_out` from `q_n`.
#[derive(Debug, Clone, PartialEq)]
pub enum BottomBranch<T: Element = f32> {
    UNet(UNet<T>),
    /// Pass-through, used for identity-closure checks.
    Identity,
}

/// Branch producing the pre-squash `K`.
#[derive(Debug, Clone, PartialEq)]
pub enum KBranch<T: Element = f32> {
    UNet(UNet<T>),
    /// "Single U-Net" ablation: no learned branch; `K = 1 + tanh(mean of the
    /// three concatenated inputs)` per colour channel.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of Taylor terms `n`; the pyramid has `n − 1` high bands.
    pub terms: usize,
    pub bottom_depth: usize,
    pub bottom_channels: usize,
    pub k_depth: usize,
    pub k_channels: usize,
    /// 3 for a per-colour `K`, 1 for a single shared map.
    pub k_out_channels: usize,
    pub single_unet: bool,
    /// Weight band `k` by `1/k!` instead of leaving the factor to `K`.
    pub explicit_factorials: bool,
    pub tucker_enabled: bool,
    pub tucker: TuckerConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            terms: 4,
            bottom_depth: 3,
            bottom_channels: 16,
            k_depth: 2,
            k_channels: 8,
            k_out_channels: 3,
            single_unet: false,
            explicit_factorials: false,
            tucker_enabled: true,
            tucker: TuckerConfig::default(),
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.terms < 2 {
            return Err(contract_err!("terms must be >= 2, got {}", self.terms));
        }
        if !matches!(self.k_out_channels, 1 | 3) {
            return Err(contract_err!(
                "K must have 1 or 3 channels, got {}",
                self.k_out_channels
            ));
        }
        self.tucker.validate()
    }

    pub fn levels(&self) -> usize {
        self.terms - 1
    }
}

/// Channels fed to the K branch: upsampled `q_n'`, upsampled `q_n`, `q_{n-1}`.
pub const K_INPUT_CHANNELS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct DehazeModel<T: Element = f32> {
    pub config: ModelConfig,
    pub bottom: BottomBranch<T>,
    pub k_net: KBranch<T>,
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct FusionOutputs {
    /// Dehazed low band, the zeroth-order term.
    pub j_out: Var,
    /// `K ⊙ q_k` for every high band, finest first.
    pub taylor_terms: Vec<Var>,
    /// `K` at the resolution of the coarsest high band.
    pub k_base: Var,
    /// Fused image before clamping, cropped to the input extents.
    pub fused: Var,
    /// `fused` clamped to `[0, 1]`.
    pub output: Var,
}

/// Parameters of both branches placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub bottom: Vec<Var>,
    pub k_net: Vec<Var>,
}

impl Bound {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.bottom.iter().chain(&self.k_net).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tucker denoising of `j_out` is skipped (it would block the gradient);
    /// the regulariser in the loss takes its place.
    Train,
    /// Tucker denoising applied to `j_out` when enabled.
    Infer,
}

/// Wall-clock per forward stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub decompose: Duration,
    pub bottom_net: Duration,
    pub tucker: Duration,
    pub k_net: Duration,
    pub modulate: Duration,
    pub reconstruct: Duration,
}

impl StageTimes {
    pub fn sum(&self) -> Duration {
        self.decompose + self.bottom_net + self.tucker + self.k_net + self.modulate + self.reconstruct
    }
}

struct Stopwatch<'a> {
    times: Option<&'a mut StageTimes>,
    last: Instant,
}

impl<'a> Stopwatch<'a> {
    fn new(times: Option<&'a mut StageTimes>) -> Self {
        Self {
            times,
            last: Instant::now(),
        }
    }

    fn lap(&mut self, slot: impl FnOnce(&mut StageTimes) -> &mut Duration) {
        let now = Instant::now();
        if let Some(t) = self.times.as_deref_mut() {
            *slot(t) += now - self.last;
        }
        self.last = now;
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

impl<T: Element> DehazeModel<T> {
    /// Freshly initialised model. The K branch's output conv starts at zero,
    /// so `K ≡ 1` until training moves it.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let bottom = BottomBranch::UNet(UNet::new(
            UNetSpec {
                depth: config.bottom_depth,
                base_channels: config.bottom_channels,
                in_channels: 3,
                out_channels: 3,
                low_rank: false,
            },
            config.seed,
            false,
        )?);
        let k_net = if config.single_unet {
            KBranch::Direct
        } else {
            KBranch::UNet(UNet::new(
                UNetSpec {
                    depth: config.k_depth,
                    base_channels: config.k_channels,
                    in_channels: K_INPUT_CHANNELS,
                    out_channels: config.k_out_channels,
                    low_rank: true,
                },
                config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
                true,
            )?)
        };
        Ok(Self { config, bottom, k_net })
    }

    /// Named parameters, bottom branch first.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let BottomBranch::UNet(u) = &self.bottom {
            out.extend(u.params().iter().map(|(n, t)| (format!("bottom.{n}"), t)));
        }
        if let KBranch::UNet(u) = &self.k_net {
            out.extend(u.params().iter().map(|(n, t)| (format!("k_net.{n}"), t)));
        }
        out
    }

    /// Mutable parameters in [`named_params`](Self::named_params) order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        if let BottomBranch::UNet(u) = &mut self.bottom {
            out.extend(u.params_mut());
        }
        if let KBranch::UNet(u) = &mut self.k_net {
            out.extend(u.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound> {
        Ok(Bound {
            bottom: match &self.bottom {
                BottomBranch::UNet(u) => u.bind(tape, trainable)?,
                BottomBranch::Identity => Vec::new(),
            },
            k_net: match &self.k_net {
                KBranch::UNet(u) => u.bind(tape, trainable)?,
                KBranch::Direct => Vec::new(),
            },
        })
    }

    /// Extents are padded to a multiple of this before decomposition so that
    /// both U-Nets see divisible inputs.
    pub fn pad_multiple(&self) -> usize {
        let levels = self.config.levels();
        let bottom_depth = match &self.bottom {
            BottomBranch::UNet(u) => u.spec().depth,
            BottomBranch::Identity => 0,
        };
        let k_depth = match &self.k_net {
            KBranch::UNet(u) => u.spec().depth,
            KBranch::Direct => 0,
        };
        1 << (levels + bottom_depth).max(levels - 1 + k_depth)
    }

    /// Attention sharing tensor at the resolution of `q_prev`, squashed to `(0, 2)`.
    pub fn compute_k(&self, tape: &mut Tape<T>, bound: &Bound, q_n: Var, q_n_prime: Var, q_prev: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(q_prev).dims4()?;
        for v in [q_n, q_n_prime] {
            let (_, vc, vh, vw) = tape.value(v).dims4()?;
            if vc != c || vh * 2 != h || vw * 2 != w {
                return Err(dim_err!(
                    "compute_k: low band {:?} is not half of q_prev {:?}",
                    tape.value(v).shape(),
                    tape.value(q_prev).shape()
                ));
            }
        }
        if c != 3 {
            return Err(dim_err!("compute_k expects RGB bands, got {c} channels"));
        }
        let prime_up = tape.upsample_bilinear(q_n_prime, h, w)?;
        let low_up = tape.upsample_bilinear(q_n, h, w)?;
        let cat = tape.concat(&[prime_up, low_up, q_prev], 1)?;
        let raw = match &self.k_net {
            KBranch::UNet(u) => u.forward(tape, &bound.k_net, cat)?,
            KBranch::Direct => {
                let a = tape.add(prime_up, low_up)?;
                let s = tape.add(a, q_prev)?;
                tape.scale(s, T::of(1.0 / 3.0))?
            }
        };
        let squashed = tape.tanh(raw)?;
        tape.add_scalar(squashed, T::one())
    }

    /// `K↑ ⊙ q_k` for every band (finest first).
    pub fn modulate_bands(&self, tape: &mut Tape<T>, k_base: Var, bands: &[Var]) -> Result<Vec<Var>> {
        let levels = bands.len();
        let (_, kc, _, _) = tape.value(k_base).dims4()?;
        let mut terms = Vec::with_capacity(levels);
        for (i, &band) in bands.iter().enumerate() {
            let (_, c, h, w) = tape.value(band).dims4()?;
            let mut k = tape.upsample_bilinear(k_base, h, w)?;
            if kc == 1 && c != 1 {
                k = tape.concat(&vec![k; c], 1)?;
            }
            let mut term = tape.mul(k, band)?;
            if self.config.explicit_factorials {
                term = tape.scale(term, T::of(1.0 / factorial(levels - i)))?;
            }
            terms.push(term);
        }
        Ok(terms)
    }

    /// Full forward pass over an NCHW RGB image in `[0, 1]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        img: &Tensor<T>,
        mode: Mode,
        times: Option<&mut StageTimes>,
    ) -> Result<FusionOutputs> {
        let mut sw = Stopwatch::new(times);
        let (_, c, h, w) = img.dims4()?;
        if c != 3 {
            return Err(dim_err!("dehaze expects 3 channels, got {c}"));
        }
        let levels = self.config.levels();
        let m = self.pad_multiple();
        let padded = pad_reflect(img, round_up(h, m), round_up(w, m))?;
        let pyr = pyramid::decompose(&padded, levels)?;
        let bands = pyr
            .high_bands
            .into_iter()
            .map(|b| tape.constant(b))
            .collect::<Result<Vec<_>>>()?;
        let q_n = tape.constant(pyr.low_band)?;
        sw.lap(|t| &mut t.decompose);

        let mut j_out = match &self.bottom {
            BottomBranch::UNet(u) => u.forward(tape, &bound.bottom, q_n)?,
            BottomBranch::Identity => q_n,
        };
        sw.lap(|t| &mut t.bottom_net);
        if mode == Mode::Infer && self.config.tucker_enabled {
            let denoised = tucker::denoise_nchw(tape.value(j_out), &self.config.tucker)?;
            j_out = tape.constant(denoised)?;
        }
        sw.lap(|t| &mut t.tucker);

        let q_prev = *bands.last().expect("levels >= 1");
        let k_base = self.compute_k(tape, bound, q_n, j_out, q_prev)?;
        sw.lap(|t| &mut t.k_net);

        let taylor_terms = self.modulate_bands(tape, k_base, &bands)?;
        sw.lap(|t| &mut t.modulate);

        let mut current = j_out;
        for &term in taylor_terms.iter().rev() {
            let (_, _, bh, bw) = tape.value(term).dims4()?;
            let up = tape.upsample_bilinear(current, bh, bw)?;
            current = tape.add(up, term)?;
        }
        let fused = tape.crop(current, h, w)?;
        let output = tape.clamp(fused, T::zero(), T::one())?;
        sw.lap(|t| &mut t.reconstruct);

        Ok(FusionOutputs {
            j_out,
            taylor_terms,
            k_base,
            fused,
            output,
        })
    }

    /// Inference on a single image; no gradients are tracked.
    pub fn dehaze(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        self.dehaze_timed(img, None)
    }

    pub fn dehaze_timed(&self, img: &Tensor<T>, times: Option<&mut StageTimes>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let out = self.forward(&mut tape, &bound, img, Mode::Infer, times)?;
        Ok(tape.value(out.output).clone())
    }
}

/// The plain pyramid used by the model for an image, after model padding.
pub fn model_pyramid<T: Element>(model: &DehazeModel<T>, img: &Tensor<T>) -> Result<Pyramid<T>> {
    let (_, _, h, w) = img.dims4()?;
    let m = model.pad_multiple();
    pyramid::decompose(
        &pad_reflect(img, round_up(h, m), round_up(w, m))?,
        model.config.levels(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            terms: 3,
            bottom_depth: 2,
            bottom_channels: 4,
            k_depth: 1,
            k_channels: 4,
            tucker_enabled: false,
            ..Default::default()
        }
    }

    #[test]
    fn unet_preserves_shape() {
        let u = UNet::<f32>::new(
            UNetSpec {
                depth: 3,
                base_channels: 4,
                in_channels: 3,
                out_channels: 3,
                low_rank: false,
            },
            1,
            false,
        )
        .unwrap();
        let mut tape = Tape::new();
        let vars = u.bind(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::full([1, 3, 32, 32], 0.5)).unwrap();
        let y = u.forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 32, 32]);
    }

    #[test]
    fn unet_rejects_indivisible() {
        let u = UNet::<f32>::new(
            UNetSpec {
                depth: 2,
                base_channels: 2,
                in_channels: 3,
                out_channels: 3,
                low_rank: true,
            },
            1,
            false,
        )
        .unwrap();
        let mut tape = Tape::new();
        let vars = u.bind(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::zeros([1, 3, 6, 8])).unwrap();
        assert!(u.forward(&mut tape, &vars, x).is_err());
    }

    #[test]
    fn zero_final_layer_outputs_zero() {
        let u = UNet::<f32>::new(
            UNetSpec {
                depth: 2,
                base_channels: 4,
                in_channels: 3,
                out_channels: 3,
                low_rank: false,
            },
            5,
            true,
        )
        .unwrap();
        let mut tape = Tape::new();
        let vars = u.bind(&mut tape, false).unwrap();
        let x = tape
            .constant(Tensor::from_fn([1, 3, 8, 8], |i| (i as f32).sin()))
            .unwrap();
        let y = u.forward(&mut tape, &vars, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_depends_only_on_topology() {
        let m = DehazeModel::<f32>::new(ModelConfig::default()).unwrap();
        let n = m.param_count();
        let m2 = DehazeModel::<f32>::new(ModelConfig {
            seed: 99,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(n, m2.param_count());
        assert!(n > 0);
    }

    #[test]
    fn k_is_one_at_init() {
        let model = DehazeModel::<f32>::new(small_config()).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let img = Tensor::from_fn([1, 3, 16, 16], |i| ((i * 13) % 17) as f32 / 17.0);
        let out = model.forward(&mut tape, &bound, &img, Mode::Train, None).unwrap();
        let k = tape.value(out.k_base);
        assert!(k.data().iter().all(|&v| v == 1.0));
        // K matches q_{n-1}: level n-1 of a 16x16 image with 2 levels is 8x8
        assert_eq!(k.shape(), &[1, 3, 8, 8]);
        assert_eq!(out.taylor_terms.len(), 2);
    }

    #[test]
    fn modulation_identities() {
        let model = DehazeModel::<f64>::new(small_config()).unwrap();
        let mut tape = Tape::new();
        let b0 = tape.constant(Tensor::from_fn([1, 3, 8, 8], |i| i as f64)).unwrap();
        let b1 = tape.constant(Tensor::from_fn([1, 3, 4, 4], |i| -(i as f64))).unwrap();
        for (kv, factor) in [(1.0, 1.0), (0.0, 0.0), (2.0, 2.0)] {
            let k = tape.constant(Tensor::full([1, 3, 4, 4], kv)).unwrap();
            let terms = model.modulate_bands(&mut tape, k, &[b0, b1]).unwrap();
            for (t, b) in terms.iter().zip([b0, b1]) {
                assert_eq!(tape.value(*t), &tape.value(b).scale(factor));
            }
        }
    }

    #[test]
    fn shared_single_channel_k() {
        let model = DehazeModel::<f64>::new(small_config()).unwrap();
        let mut tape = Tape::new();
        let band = tape.constant(Tensor::ones([1, 3, 4, 4])).unwrap();
        let k = tape.constant(Tensor::full([1, 1, 4, 4], 0.5)).unwrap();
        let terms = model.modulate_bands(&mut tape, k, &[band]).unwrap();
        assert_eq!(tape.value(terms[0]), &Tensor::full([1, 3, 4, 4], 0.5));
    }

    #[test]
    fn explicit_factorials_scale_terms() {
        let model = DehazeModel::<f64>::new(ModelConfig {
            explicit_factorials: true,
            ..small_config()
        })
        .unwrap();
        let mut tape = Tape::new();
        let fine = tape.constant(Tensor::ones([1, 3, 8, 8])).unwrap();
        let coarse = tape.constant(Tensor::ones([1, 3, 4, 4])).unwrap();
        let k = tape.constant(Tensor::ones([1, 3, 4, 4])).unwrap();
        let terms = model.modulate_bands(&mut tape, k, &[fine, coarse]).unwrap();
        assert_eq!(tape.value(terms[1]).data()[0], 1.0);
        assert_eq!(tape.value(terms[0]).data()[0], 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(DehazeModel::<f32>::new(ModelConfig {
            terms: 1,
            ..Default::default()
        })
        .is_err());
        assert!(DehazeModel::<f32>::new(ModelConfig {
            k_out_channels: 2,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn compute_k_checks_shapes() {
        let model = DehazeModel::<f32>::new(small_config()).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false).unwrap();
        let a = tape.constant(Tensor::zeros([1, 3, 4, 4])).unwrap();
        let bad = tape.constant(Tensor::zeros([1, 3, 6, 6])).unwrap();
        assert!(model.compute_k(&mut tape, &bound, a, a, bad).is_err());
    }
}
