//! U-shaped encoder-decoder depth network.
//!
//! Every convolution except the output layer is followed by group
//! normalization and ELU. The encoder halves resolution with 2×2 average
//! pooling; the decoder doubles it with nearest-neighbour upsampling and a
//! 3×3 convolution, then concatenates the encoder features of the same
//! resolution. The output is a single channel with linear activation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sfmdepth_core::grid::Grid;

use super::ops::*;
use crate::dataset::RgbImage;
use crate::error::{Error, Result};

/// Channels per normalization group.
pub const GROUP_SIZE: usize = 4;
/// Initial output bias, so that a fresh network predicts positive depth.
pub const OUTPUT_BIAS_INIT: f32 = 1.0;
/// Standard deviation of the output-layer weights at initialization.
pub const OUTPUT_WEIGHT_STD: f32 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub base_channels: usize,
    /// Channel multiplier per level.
    pub growth: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 80,
            levels: 4,
            base_channels: 8,
            growth: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        let div = 1usize << self.levels;
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return bad(format!(
                "input {}x{} is not divisible by 2^levels = {div}",
                self.width, self.height
            ));
        }
        if self.base_channels < 8 || self.base_channels % GROUP_SIZE != 0 {
            return bad(format!(
                "base_channels must be at least 8 and a multiple of {GROUP_SIZE}, got {}",
                self.base_channels
            ));
        }
        if self.growth < 1 {
            return bad("growth must be at least 1".into());
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.growth.pow(level as u32)
    }
}

/// Layer kinds, for introspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3 { cin: usize, cout: usize },
    Conv1x1 { cin: usize, cout: usize },
    GroupNorm { channels: usize, groups: usize },
    Elu,
    AvgPool2,
    UpsampleNearest2,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

/// Conv (no bias) → group norm → ELU.
#[derive(Debug, Clone)]
struct Unit {
    cin: usize,
    cout: usize,
    weight: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct UnitCache {
    col: Vec<f32>,
    in_shape: (usize, usize, usize),
    norm: NormCache,
    out: Vec<f32>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    enc: Vec<[UnitCache; 2]>,
    up: Vec<UnitCache>,
    dec: Vec<[UnitCache; 2]>,
    head_in: Tensor,
}

#[derive(Debug, Clone)]
pub struct DepthNet {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    /// Per-channel input standardization.
    pub image_mean: [f32; 3],
    pub image_std: [f32; 3],
    enc: Vec<[Unit; 2]>,
    up: Vec<Unit>,
    dec: Vec<[Unit; 2]>,
    head_w: usize,
    head_b: usize,
}

struct Builder {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, value: Vec<f32>) -> usize {
        self.params.push(Param { name, shape, value });
        self.params.len() - 1
    }

    fn normal(&mut self, n: usize, std: f32) -> Vec<f32> {
        (0..n)
            .map(|_| std * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut self.rng))
            .collect()
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize) -> Unit {
        let fan_in = cin * 9;
        let w = self.normal(cout * fan_in, (2.0 / fan_in as f32).sqrt());
        let weight = self.add(format!("{name}.conv.weight"), vec![cout, cin, 3, 3], w);
        let gamma = self.add(format!("{name}.norm.gamma"), vec![cout], vec![1.0; cout]);
        let beta = self.add(format!("{name}.norm.beta"), vec![cout], vec![0.0; cout]);
        Unit {
            cin,
            cout,
            weight,
            gamma,
            beta,
        }
    }
}

impl DepthNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let levels = config.levels;
        let mut enc = Vec::new();
        let mut cin = 3;
        for l in 0..=levels {
            let c = config.channels(l);
            enc.push([b.unit(&format!("enc{l}.0"), cin, c), b.unit(&format!("enc{l}.1"), c, c)]);
            cin = c;
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in (0..levels).rev() {
            let c = config.channels(l);
            up.push(b.unit(&format!("up{l}"), config.channels(l + 1), c));
            dec.push([b.unit(&format!("dec{l}.0"), 2 * c, c), b.unit(&format!("dec{l}.1"), c, c)]);
        }
        let c0 = config.channels(0);
        let hw = b.normal(c0, OUTPUT_WEIGHT_STD);
        let head_w = b.add("head.weight".into(), vec![1, c0, 1, 1], hw);
        let head_b = b.add("head.bias".into(), vec![1], vec![OUTPUT_BIAS_INIT]);
        Ok(Self {
            config,
            params: b.params,
            image_mean: [0.0; 3],
            image_std: [1.0; 3],
            enc,
            up,
            dec,
            head_w,
            head_b,
        })
    }

    pub fn with_normalization(mut self, mean: [f64; 3], std: [f64; 3]) -> Self {
        self.image_mean = mean.map(|v| v as f32);
        self.image_std = std.map(|v| v as f32);
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f32>> {
        self.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
    }

    /// Layer sequence in execution order.
    pub fn layers(&self) -> Vec<LayerKind> {
        let unit = |u: &Unit, out: &mut Vec<LayerKind>| {
            out.push(LayerKind::Conv3x3 {
                cin: u.cin,
                cout: u.cout,
            });
            out.push(LayerKind::GroupNorm {
                channels: u.cout,
                groups: u.cout / GROUP_SIZE,
            });
            out.push(LayerKind::Elu);
        };
        let mut out = Vec::new();
        for (l, block) in self.enc.iter().enumerate() {
            if l > 0 {
                out.push(LayerKind::AvgPool2);
            }
            block.iter().for_each(|u| unit(u, &mut out));
        }
        for (u, block) in self.up.iter().zip(&self.dec) {
            out.push(LayerKind::UpsampleNearest2);
            unit(u, &mut out);
            out.push(LayerKind::Concat);
            block.iter().for_each(|u| unit(u, &mut out));
        }
        out.push(LayerKind::Conv1x1 {
            cin: self.config.channels(0),
            cout: 1,
        });
        out
    }

    fn unit_forward(&self, u: &Unit, x: &Tensor) -> (Tensor, UnitCache) {
        let col = im2col3(x);
        let hw = x.hw();
        let mut y = Tensor::zeros(u.cout, x.h, x.w);
        gemm(u.cout, u.cin * 9, hw, &self.params[u.weight].value, false, &col, false, &mut y.data, 0.0);
        let norm = group_norm(
            &mut y,
            u.cout / GROUP_SIZE,
            &self.params[u.gamma].value,
            &self.params[u.beta].value,
        );
        elu(&mut y.data);
        let cache = UnitCache {
            col,
            in_shape: (x.c, x.h, x.w),
            norm,
            out: y.data.clone(),
        };
        (y, cache)
    }

    fn unit_backward(
        &self,
        u: &Unit,
        cache: &UnitCache,
        mut grad: Tensor,
        grads: &mut [Vec<f32>],
        need_input: bool,
    ) -> Option<Tensor> {
        elu_backward(&cache.out, &mut grad.data);
        let (d_gamma, d_beta) = pair_mut(grads, u.gamma, u.beta);
        let g = group_norm_backward(
            &grad,
            &cache.norm,
            u.cout / GROUP_SIZE,
            &self.params[u.gamma].value,
            d_gamma,
            d_beta,
        );
        let (cin, h, w) = cache.in_shape;
        let hw = h * w;
        gemm(u.cout, hw, cin * 9, &g.data, false, &cache.col, true, &mut grads[u.weight], 1.0);
        need_input.then(|| {
            let mut dcol = vec![0.0f32; cin * 9 * hw];
            gemm(cin * 9, u.cout, hw, &self.params[u.weight].value, true, &g.data, false, &mut dcol, 0.0);
            col2im3(&dcol, cin, h, w)
        })
    }

    fn block_forward(&self, block: &[Unit; 2], x: &Tensor) -> (Tensor, [UnitCache; 2]) {
        let (a, ca) = self.unit_forward(&block[0], x);
        let (b, cb) = self.unit_forward(&block[1], &a);
        (b, [ca, cb])
    }

    fn block_backward(
        &self,
        block: &[Unit; 2],
        cache: &[UnitCache; 2],
        grad: Tensor,
        grads: &mut [Vec<f32>],
        need_input: bool,
    ) -> Option<Tensor> {
        let g = self.unit_backward(&block[1], &cache[1], grad, grads, true).unwrap();
        self.unit_backward(&block[0], &cache[0], g, grads, need_input)
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            height: self.config.height,
            width: self.config.width,
            mean: self.image_mean,
            std: self.image_std,
        }
    }

    /// Standardizes an image into network input.
    pub fn input_tensor(&self, image: &RgbImage) -> Result<Tensor> {
        self.normalizer().apply(image)
    }

    /// Forward pass on a standardized input, returning the `1 × H × W`
    /// output and the trace needed by [`DepthNet::backward`].
    pub fn forward(&self, x: &Tensor) -> (Tensor, Trace) {
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut enc_cache = Vec::with_capacity(self.enc.len());
        let mut cur = x.clone();
        for (l, block) in self.enc.iter().enumerate() {
            if l > 0 {
                cur = avg_pool2(&cur);
            }
            let (y, c) = self.block_forward(block, &cur);
            enc_cache.push(c);
            skips.push(y.clone());
            cur = y;
        }
        let levels = self.config.levels;
        let mut up_cache = Vec::with_capacity(levels);
        let mut dec_cache = Vec::with_capacity(levels);
        for (i, (u, block)) in self.up.iter().zip(&self.dec).enumerate() {
            let l = levels - 1 - i;
            let (a, ca) = self.unit_forward(u, &upsample2(&cur));
            up_cache.push(ca);
            let (y, cd) = self.block_forward(block, &concat(&a, &skips[l]));
            dec_cache.push(cd);
            cur = y;
        }
        let c0 = cur.c;
        let mut out = Tensor::zeros(1, cur.h, cur.w);
        gemm(1, c0, cur.hw(), &self.params[self.head_w].value, false, &cur.data, false, &mut out.data, 0.0);
        let bias = self.params[self.head_b].value[0];
        out.data.iter_mut().for_each(|v| *v += bias);
        (
            out,
            Trace {
                enc: enc_cache,
                up: up_cache,
                dec: dec_cache,
                head_in: cur,
            },
        )
    }

    /// Accumulates parameter gradients for an output gradient of shape
    /// `1 × H × W`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f32], grads: &mut [Vec<f32>]) {
        let head = &trace.head_in;
        let hw = head.hw();
        assert_eq!(grad_out.len(), hw);
        grads[self.head_b][0] += grad_out.iter().map(|&g| g as f64).sum::<f64>() as f32;
        gemm(1, hw, head.c, grad_out, false, &head.data, true, &mut grads[self.head_w], 1.0);
        let mut g = Tensor::zeros(head.c, head.h, head.w);
        gemm(head.c, 1, hw, &self.params[self.head_w].value, true, grad_out, false, &mut g.data, 0.0);

        let levels = self.config.levels;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; levels + 1];
        for i in (0..levels).rev() {
            let l = levels - 1 - i;
            let dcat = self
                .block_backward(&self.dec[i], &trace.dec[i], g, grads, true)
                .unwrap();
            let (du, dskip) = split(&dcat, self.config.channels(l));
            skip_grads[l] = Some(dskip);
            let dup = self.unit_backward(&self.up[i], &trace.up[i], du, grads, true).unwrap();
            g = upsample2_backward(&dup);
        }
        for l in (0..=levels).rev() {
            if let Some(s) = skip_grads[l].take() {
                add_assign(&mut g, &s);
            }
            let need = l > 0;
            let dx = self.block_backward(&self.enc[l], &trace.enc[l], g, grads, need);
            if !need {
                break;
            }
            g = avg_pool2_backward(&dx.unwrap());
        }
    }

    /// Unscaled depth prediction for one image.
    pub fn predict(&self, image: &RgbImage) -> Result<Grid<f64>> {
        let x = self.input_tensor(image)?;
        let (out, _) = self.forward(&x);
        Ok(output_grid(&out))
    }

    pub fn predict_batch(&self, images: &[RgbImage]) -> Result<Vec<Grid<f64>>> {
        images.iter().map(|im| self.predict(im)).collect()
    }
}

/// Input size and per-channel standardization of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub height: usize,
    pub width: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalizer {
    pub fn apply(&self, image: &RgbImage) -> Result<Tensor> {
        let (h, w) = (self.height, self.width);
        if (image.height, image.width) != (h, w) {
            return Err(Error::Config(format!(
                "image is {}x{}, model expects {w}x{h}",
                image.width, image.height
            )));
        }
        let mut t = Tensor::zeros(3, h, w);
        for (i, px) in image.data.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                t.data[ch * h * w + i] = (px[ch] - self.mean[ch]) / self.std[ch];
            }
        }
        Ok(t)
    }
}

pub fn output_grid(out: &Tensor) -> Grid<f64> {
    Grid::from_vec(out.h, out.w, out.data.iter().map(|&v| v as f64).collect()).expect("output shape")
}

fn pair_mut(v: &mut [Vec<f32>], a: usize, b: usize) -> (&mut [f32], &mut [f32]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
