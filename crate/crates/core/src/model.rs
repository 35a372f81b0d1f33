//! Encoder/classifier contract and the built-in toy vision transformer.
//!
//! Any image encoder that maps a normalized `C×S×S` tensor to a pooled
//! feature vector plus one feature per token can be plugged in through
//! [`Encoder`]. The shipped [`ToyVit`] is a small pre-norm transformer with
//! hand-written reverse-mode gradients so it can be fine-tuned end to end.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{ensure_finite, Tensor};

const LN_EPS: f64 = 1e-5;

/// Architecture of an encoder plus its freezing policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub image_size: usize,
    pub channels: usize,
    pub token_patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_ratio: usize,
    pub output_dim: usize,
    /// Freeze every encoder parameter (linear-probe setting).
    pub frozen: bool,
    /// Parameter-name prefixes to freeze in addition to `frozen`.
    #[serde(default)]
    pub freeze: Vec<String>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            image_size: 224,
            channels: 3,
            token_patch_size: 16,
            depth: 4,
            heads: 4,
            width: 128,
            mlp_ratio: 4,
            output_dim: 128,
            frozen: false,
            freeze: Vec::new(),
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.output_dim == 0 || self.width == 0 || self.heads == 0 || self.channels == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if self.token_patch_size == 0 || self.image_size % self.token_patch_size != 0 {
            return bad(format!(
                "token_patch_size {} must divide image_size {}",
                self.token_patch_size, self.image_size
            ));
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.token_patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.token_patch_size * self.token_patch_size
    }

    /// Whether encoder parameter `name` receives updates.
    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen && !self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// Pooled feature plus the per-token features it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub feature: Array1<f64>,
    /// `tokens × output_dim`, row-major over the token grid.
    pub tokens: Array2<f64>,
    pub grid: (usize, usize),
}

/// Anything that can embed a normalized image tensor.
pub trait Encoder {
    fn output_dim(&self) -> usize;
    fn image_size(&self) -> usize;
    fn encode(&self, x: &Tensor) -> Result<EncoderOutput>;
    /// Stable identifier recorded in feature dumps.
    fn id(&self) -> String;
}

/// Adapter for an externally provided forward function (e.g. a pretrained
/// encoder evaluated elsewhere). Used for inference only.
pub struct ExternalEncoder<F> {
    pub name: String,
    pub image_size: usize,
    pub output_dim: usize,
    pub forward: F,
}

impl<F> Encoder for ExternalEncoder<F>
where
    F: Fn(&Tensor) -> Result<EncoderOutput>,
{
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn image_size(&self) -> usize {
        self.image_size
    }

    fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        ensure_finite(x, "encoder input")?;
        let out = (self.forward)(x)?;
        if out.feature.len() != self.output_dim || out.tokens.ncols() != self.output_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature dims", self.output_dim),
                actual: format!("{}", out.feature.len()),
            });
        }
        Ok(out)
    }

    fn id(&self) -> String {
        self.name.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2: LayerNorm,
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    pub w_2: Array2<f64>,
    pub b_2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitParams {
    pub patch_w: Array2<f64>,
    pub patch_b: Array1<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

/// Linear head producing one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: Array1::zeros(dim),
            bias: 0.0,
        }
    }

    pub fn logit(&self, feature: &Array1<f64>) -> Result<f64> {
        if feature.len() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature dims", self.weights.len()),
                actual: format!("{}", feature.len()),
            });
        }
        Ok(self.weights.dot(feature) + self.bias)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(w·f + b)`.
pub fn classify(head: &ClassifierHead, feature: &Array1<f64>) -> Result<f64> {
    Ok(sigmoid(head.logit(feature)?))
}

/// Encoder and head parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: VitParams,
    pub head: ClassifierHead,
}

fn trunc_normal<R: Rng + ?Sized>(shape: (usize, usize), std: f64, rng: &mut R) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn(shape, |_| loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

impl ModelParams {
    /// Truncated-normal(0, 0.02) projections, unit layer norms, zero biases
    /// and a zero head.
    pub fn init(spec: &EncoderSpec, seed_value: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::derived_rng(seed_value, &[0x1417]);
        let (d, m) = (spec.width, spec.width * spec.mlp_ratio);
        let std = 0.02;
        let blocks = (0..spec.depth)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                w_qkv: trunc_normal((d, 3 * d), std, &mut rng),
                b_qkv: Array1::zeros(3 * d),
                w_o: trunc_normal((d, d), std, &mut rng),
                b_o: Array1::zeros(d),
                ln2: LayerNorm::new(d),
                w_1: trunc_normal((d, m), std, &mut rng),
                b_1: Array1::zeros(m),
                w_2: trunc_normal((m, d), std, &mut rng),
                b_2: Array1::zeros(d),
            })
            .collect();
        Ok(Self {
            encoder: VitParams {
                patch_w: trunc_normal((spec.patch_dim(), d), std, &mut rng),
                patch_b: Array1::zeros(d),
                pos: trunc_normal((spec.tokens(), d), std, &mut rng),
                blocks,
                ln_f: LayerNorm::new(d),
                proj_w: trunc_normal((d, spec.output_dim), std, &mut rng),
                proj_b: Array1::zeros(spec.output_dim),
            },
            head: ClassifierHead::zeros(spec.output_dim),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, v| v.fill(0.0));
        z
    }

    /// Visits every parameter tensor with its unique dotted name, in a fixed
    /// order.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[f64], &[usize])) {
        let e = &self.encoder;
        let a1 = |f: &mut dyn FnMut(&str, &[f64], &[usize]), n: &str, a: &Array1<f64>| {
            f(n, a.as_slice().expect("contiguous"), &[a.len()])
        };
        let a2 = |f: &mut dyn FnMut(&str, &[f64], &[usize]), n: &str, a: &Array2<f64>| {
            f(n, a.as_slice().expect("contiguous"), &[a.nrows(), a.ncols()])
        };
        a2(&mut f, "encoder.patch.weight", &e.patch_w);
        a1(&mut f, "encoder.patch.bias", &e.patch_b);
        a2(&mut f, "encoder.pos", &e.pos);
        for (i, b) in e.blocks.iter().enumerate() {
            let p = format!("encoder.blocks.{i}");
            a1(&mut f, &format!("{p}.ln1.gamma"), &b.ln1.gamma);
            a1(&mut f, &format!("{p}.ln1.beta"), &b.ln1.beta);
            a2(&mut f, &format!("{p}.attn.qkv.weight"), &b.w_qkv);
            a1(&mut f, &format!("{p}.attn.qkv.bias"), &b.b_qkv);
            a2(&mut f, &format!("{p}.attn.out.weight"), &b.w_o);
            a1(&mut f, &format!("{p}.attn.out.bias"), &b.b_o);
            a1(&mut f, &format!("{p}.ln2.gamma"), &b.ln2.gamma);
            a1(&mut f, &format!("{p}.ln2.beta"), &b.ln2.beta);
            a2(&mut f, &format!("{p}.mlp.fc1.weight"), &b.w_1);
            a1(&mut f, &format!("{p}.mlp.fc1.bias"), &b.b_1);
            a2(&mut f, &format!("{p}.mlp.fc2.weight"), &b.w_2);
            a1(&mut f, &format!("{p}.mlp.fc2.bias"), &b.b_2);
        }
        a1(&mut f, "encoder.ln_f.gamma", &e.ln_f.gamma);
        a1(&mut f, "encoder.ln_f.beta", &e.ln_f.beta);
        a2(&mut f, "encoder.proj.weight", &e.proj_w);
        a1(&mut f, "encoder.proj.bias", &e.proj_b);
        a1(&mut f, "head.weight", &self.head.weights);
        f("head.bias", std::slice::from_ref(&self.head.bias), &[1]);
    }

    /// Mutable counterpart of [`ModelParams::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        let e = &mut self.encoder;
        let mut g = |n: &str, s: &mut [f64]| f(n, s);
        macro_rules! v {
            ($n:expr, $a:expr) => {
                g($n, $a.as_slice_mut().expect("contiguous"))
            };
        }
        v!("encoder.patch.weight", e.patch_w);
        v!("encoder.patch.bias", e.patch_b);
        v!("encoder.pos", e.pos);
        for (i, b) in e.blocks.iter_mut().enumerate() {
            let p = format!("encoder.blocks.{i}");
            v!(&format!("{p}.ln1.gamma"), b.ln1.gamma);
            v!(&format!("{p}.ln1.beta"), b.ln1.beta);
            v!(&format!("{p}.attn.qkv.weight"), b.w_qkv);
            v!(&format!("{p}.attn.qkv.bias"), b.b_qkv);
            v!(&format!("{p}.attn.out.weight"), b.w_o);
            v!(&format!("{p}.attn.out.bias"), b.b_o);
            v!(&format!("{p}.ln2.gamma"), b.ln2.gamma);
            v!(&format!("{p}.ln2.beta"), b.ln2.beta);
            v!(&format!("{p}.mlp.fc1.weight"), b.w_1);
            v!(&format!("{p}.mlp.fc1.bias"), b.b_1);
            v!(&format!("{p}.mlp.fc2.weight"), b.w_2);
            v!(&format!("{p}.mlp.fc2.bias"), b.b_2);
        }
        v!("encoder.ln_f.gamma", e.ln_f.gamma);
        v!("encoder.ln_f.beta", e.ln_f.beta);
        v!("encoder.proj.weight", e.proj_w);
        v!("encoder.proj.bias", e.proj_b);
        v!("head.weight", self.head.weights);
        g("head.bias", std::slice::from_mut(&mut self.head.bias));
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(|n, _, _| out.push(n.to_string()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, v, _| n += v.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, v, _| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// SHA-256 over names and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.for_each(|n, v, _| {
            h.update(n.as_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rv = *r;
        row.mapv_inplace(|v| v * rv);
    }
    let y = &xhat * &ln.gamma + &ln.beta;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, ln: &LayerNorm, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.rstd[i];
        dx.row_mut(i)
            .assign(&((&g - mean_g - &(&xh * mean_gx)) * r));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    m: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

struct ForwardCache {
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
    z: Array2<f64>,
}

/// The built-in trainable vision transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVit {
    pub spec: EncoderSpec,
    pub params: ModelParams,
}

impl ToyVit {
    pub fn new(spec: EncoderSpec, seed_value: u64) -> Result<Self> {
        let params = ModelParams::init(&spec, seed_value)?;
        Ok(Self { spec, params })
    }

    /// Splits `x` into row-major tokens, channel-major within each token.
    fn patchify(&self, x: &Tensor) -> Result<Array2<f64>> {
        let s = &self.spec;
        let expect = (s.channels, s.image_size, s.image_size);
        if x.dim() != expect {
            return Err(Error::ShapeMismatch {
                expected: format!("{expect:?}"),
                actual: format!("{:?}", x.dim()),
            });
        }
        let (p, side) = (s.token_patch_size, s.grid_side());
        let mut out = Array2::zeros((s.tokens(), s.patch_dim()));
        for t in 0..s.tokens() {
            let (ty, tx) = (t / side, t % side);
            let mut k = 0;
            for c in 0..s.channels {
                for py in 0..p {
                    for px in 0..p {
                        out[[t, k]] = x[[c, ty * p + py, tx * p + px]];
                        k += 1;
                    }
                }
            }
        }
        Ok(out)
    }

    fn forward_cached(&self, params: &VitParams, x: &Tensor) -> Result<(EncoderOutput, ForwardCache)> {
        ensure_finite(x, "encoder input")?;
        let patches = self.patchify(x)?;
        let mut h = patches.dot(&params.patch_w) + &params.patch_b + &params.pos;
        let d = self.spec.width;
        let dh = d / self.spec.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(params.blocks.len());
        for b in &params.blocks {
            let (a, ln1) = layer_norm(&h, &b.ln1);
            let qkv = a.dot(&b.w_qkv) + &b.b_qkv;
            let mut o = Array2::zeros((h.nrows(), d));
            let mut probs = Vec::with_capacity(self.spec.heads);
            for head in 0..self.spec.heads {
                let q = qkv.slice(s![.., head * dh..(head + 1) * dh]);
                let k = qkv.slice(s![.., d + head * dh..d + (head + 1) * dh]);
                let v = qkv.slice(s![.., 2 * d + head * dh..2 * d + (head + 1) * dh]);
                let mut sc = q.dot(&k.t()) * scale;
                softmax_rows(&mut sc);
                o.slice_mut(s![.., head * dh..(head + 1) * dh]).assign(&sc.dot(&v));
                probs.push(sc);
            }
            h = h + o.dot(&b.w_o) + &b.b_o;
            let (m, ln2) = layer_norm(&h, &b.ln2);
            let u = m.dot(&b.w_1) + &b.b_1;
            let g = u.mapv(gelu);
            h = h + g.dot(&b.w_2) + &b.b_2;
            caches.push(BlockCache { ln1, a, qkv, probs, o, ln2, m, u, g });
        }
        let (z, ln_f) = layer_norm(&h, &params.ln_f);
        let tokens = z.dot(&params.proj_w) + &params.proj_b;
        let feature = tokens.mean_axis(Axis(0)).expect("at least one token");
        let side = self.spec.grid_side();
        Ok((
            EncoderOutput { feature, tokens, grid: (side, side) },
            ForwardCache { patches, blocks: caches, ln_f, z },
        ))
    }

    /// Backpropagates `dfeature` (gradient w.r.t. the pooled feature) into
    /// `grad.encoder`.
    fn backward(&self, params: &VitParams, cache: &ForwardCache, dfeature: &Array1<f64>, grad: &mut VitParams) {
        let t = cache.z.nrows();
        let d = self.spec.width;
        let dh = d / self.spec.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dtok = Array2::from_shape_fn((t, dfeature.len()), |(_, j)| dfeature[j] / t as f64);
        grad.proj_w += &cache.z.t().dot(&dtok);
        grad.proj_b += dfeature;
        let dz = dtok.dot(&params.proj_w.t());
        let mut dh_res = layer_norm_backward(&dz, &cache.ln_f, &params.ln_f, &mut grad.ln_f);

        for (i, b) in params.blocks.iter().enumerate().rev() {
            let c = &cache.blocks[i];
            let gb = &mut grad.blocks[i];
            // MLP branch
            gb.w_2 += &c.g.t().dot(&dh_res);
            gb.b_2 += &dh_res.sum_axis(Axis(0));
            let mut du = dh_res.dot(&b.w_2.t());
            ndarray::Zip::from(&mut du).and(&c.u).for_each(|g, &u| *g *= gelu_grad(u));
            gb.w_1 += &c.m.t().dot(&du);
            gb.b_1 += &du.sum_axis(Axis(0));
            let dm = du.dot(&b.w_1.t());
            dh_res += &layer_norm_backward(&dm, &c.ln2, &b.ln2, &mut gb.ln2);
            // attention branch
            gb.w_o += &c.o.t().dot(&dh_res);
            gb.b_o += &dh_res.sum_axis(Axis(0));
            let d_o = dh_res.dot(&b.w_o.t());
            let mut dqkv = Array2::zeros(c.qkv.dim());
            for head in 0..self.spec.heads {
                let cols = head * dh..(head + 1) * dh;
                let q = c.qkv.slice(s![.., cols.clone()]);
                let k = c.qkv.slice(s![.., d + cols.start..d + cols.end]);
                let v = c.qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]);
                let p = &c.probs[head];
                let d_oh = d_o.slice(s![.., cols.clone()]);
                let dp = d_oh.dot(&v.t());
                let dv = p.t().dot(&d_oh);
                let ds = softmax_backward(p.view(), dp.view()) * scale;
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![.., cols.clone()]).assign(&dq);
                dqkv.slice_mut(s![.., d + cols.start..d + cols.end]).assign(&dk);
                dqkv.slice_mut(s![.., 2 * d + cols.start..2 * d + cols.end]).assign(&dv);
            }
            gb.w_qkv += &c.a.t().dot(&dqkv);
            gb.b_qkv += &dqkv.sum_axis(Axis(0));
            let da = dqkv.dot(&b.w_qkv.t());
            dh_res += &layer_norm_backward(&da, &c.ln1, &b.ln1, &mut gb.ln1);
        }
        grad.patch_w += &cache.patches.t().dot(&dh_res);
        grad.patch_b += &dh_res.sum_axis(Axis(0));
        grad.pos += &dh_res;
    }

    /// Mean binary cross-entropy over `batch` and its exact gradient for every
    /// parameter. Frozen parameters get a zero gradient.
    pub fn loss_and_grads(&self, batch: &[Tensor], labels: &[u8]) -> Result<(f64, ModelParams)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if batch.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", batch.len()),
                actual: format!("{}", labels.len()),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        let mut grad = self.params.zeros_like();
        let encoder_trainable = self.any_encoder_trainable();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            let (out, cache) = self.forward_cached(&self.params.encoder, x)?;
            let z = self.params.head.logit(&out.feature)?;
            if !z.is_finite() {
                return Err(Error::InvalidInput("non-finite logit".into()));
            }
            loss += bce_with_logit(z, y) / n;
            let dz = (sigmoid(z) - f64::from(y)) / n;
            grad.head.weights.scaled_add(dz, &out.feature);
            grad.head.bias += dz;
            if encoder_trainable {
                let dfeat = &self.params.head.weights * dz;
                self.backward(&self.params.encoder, &cache, &dfeat, &mut grad.encoder);
            }
        }
        let spec = &self.spec;
        grad.for_each_mut(|name, g| {
            if name.starts_with("encoder.") && !spec.is_trainable(name) {
                g.fill(0.0);
            }
        });
        Ok((loss, grad))
    }

    pub fn any_encoder_trainable(&self) -> bool {
        let mut any = false;
        self.params.for_each(|n, _, _| {
            any |= n.starts_with("encoder.") && self.spec.is_trainable(n)
        });
        any
    }

    /// Probability that `x` is generated.
    pub fn predict(&self, x: &Tensor) -> Result<f64> {
        let out = self.encode(x)?;
        classify(&self.params.head, &out.feature)
    }
}

fn softmax_backward(p: ArrayView2<'_, f64>, dp: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(p.dim());
    for i in 0..p.nrows() {
        let pr = p.row(i);
        let dr = dp.row(i);
        let inner = pr.dot(&dr);
        ds.row_mut(i).assign(&(&pr * &(&dr - inner)));
    }
    ds
}

/// Numerically stable `BCE(sigmoid(z), y)`.
pub fn bce_with_logit(z: f64, y: u8) -> f64 {
    // log(1 + e^z) - y z
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - f64::from(y) * z
}

impl Encoder for ToyVit {
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn image_size(&self) -> usize {
        self.spec.image_size
    }

    fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        Ok(self.forward_cached(&self.params.encoder, x)?.0)
    }

    fn id(&self) -> String {
        format!(
            "toy-vit-d{}-w{}-h{}-p{}-{}",
            self.spec.depth,
            self.spec.width,
            self.spec.heads,
            self.spec.token_patch_size,
            &self.params.digest()[..12]
        )
    }
}

/// Metadata block stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub architecture: EncoderSpec,
    pub seed: u64,
    pub step: usize,
    pub config_hash: String,
    pub mode: String,
}

const META_KEY: &str = "mpft";

/// Writes named `f64` parameter arrays plus the JSON metadata block as one
/// safetensors archive.
pub fn save_checkpoint(path: &Path, model: &ToyVit, meta: &CheckpointMeta) -> Result<()> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    model.params.for_each(|name, values, shape| {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        buffers.push((name.to_string(), shape.to_vec(), bytes));
    });
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            safetensors::tensor::TensorView::new(safetensors::Dtype::F64, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut md = HashMap::new();
    md.insert(META_KEY.to_string(), serde_json::to_string(meta)?);
    let bytes = safetensors::serialize(views, &Some(md)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ToyVit, CheckpointMeta)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("missing metadata block".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(meta_json)?;
    let tensors = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = ToyVit::new(meta.architecture.clone(), 0)?;
    let mut failure = None;
    model.params.for_each_mut(|name, dst| {
        match tensors.tensor(name) {
            Ok(view) if view.dtype() == safetensors::Dtype::F64 && view.data().len() == dst.len() * 8 => {
                for (d, chunk) in dst.iter_mut().zip(view.data().chunks_exact(8)) {
                    *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                }
            }
            _ => failure = Some(name.to_string()),
        }
    });
    if let Some(name) = failure {
        return Err(Error::Checkpoint(format!("tensor {name} missing or malformed")));
    }
    if !model.params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameters".into()));
    }
    Ok((model, meta))
}
