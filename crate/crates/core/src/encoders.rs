//! Small transformer encoders for captions and images.
//!
//! Both encoders prepend a classification row, add learned position
//! embeddings, run pre-LN transformer blocks, and finish with a layer norm.
//! The pooled feature is row 0 of the final sequence.

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::fusion::attention::{key_mask, multi_head_attention};
use crate::nn::{Bound, Dropout, Init, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 4,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_hidden: 128,
            max_len: 32,
            dropout_rate: 0.0,
        }
    }
}

fn check_block_dims(d_model: usize, n_heads: usize, ffn_hidden: usize) -> Result<()> {
    if d_model == 0 || n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::config(format!(
            "d_model {d_model} is not divisible by n_heads {n_heads}"
        )));
    }
    if ffn_hidden < d_model {
        return Err(Error::config(format!(
            "ffn_hidden {ffn_hidden} must be at least d_model {d_model}"
        )));
    }
    Ok(())
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_block_dims(self.d_model, self.n_heads, self.ffn_hidden)?;
        if self.vocab_size < 4 {
            return Err(Error::config("vocabulary must hold the four special tokens"));
        }
        if self.max_len < 3 {
            return Err(Error::config("max_len must be at least 3"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        ImageEncoderConfig {
            height: 64,
            width: 64,
            channels: 3,
            patch_size: 8,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_hidden: 128,
        }
    }
}

impl ImageEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_block_dims(self.d_model, self.n_heads, self.ffn_hidden)?;
        check_patch_grid(self.height, self.width, self.patch_size)?;
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    /// `N = H·W / P²`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    /// Same encoder on a `floor(W/2)` or `W - floor(W/2)` wide half.
    pub fn half(&self, right: bool) -> Self {
        let left = self.width / 2;
        ImageEncoderConfig {
            width: if right { self.width - left } else { left },
            ..self.clone()
        }
    }
}

fn check_patch_grid(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || h == 0 || w == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::shape(format!(
            "image of H={h}, W={w} cannot be tiled by patches of P={p}"
        )));
    }
    Ok(())
}

/// `C×H×W` image to `N×(C·P²)` rows: patches in row-major order, each
/// flattened channel-major.
pub fn patchify<T: Scalar>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::shape(format!("expected C×H×W, got {:?}", image.shape())));
    };
    check_patch_grid(h, w, p)?;
    let (gh, gw) = (h / p, w / p);
    let src = image.data();
    let mut data = Vec::with_capacity(c * h * w);
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for y in 0..p {
                    let start = (ch * h + py * p + y) * w + px * p;
                    data.extend_from_slice(&src[start..start + p]);
                }
            }
        }
    }
    Tensor::new(&[gh * gw, c * p * p], data)
}

/// Pre-LN block: `h = x + MHA(LN(x))`, `out = h + FFN(LN(h))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    ln_ffn: LayerNorm,
    ffn: Mlp,
    n_heads: usize,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        check_block_dims(d_model, n_heads, ffn_hidden)?;
        Ok(TransformerBlock {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d_model)?,
            query: Linear::new(store, init, &format!("{name}.query"), d_model, d_model)?,
            key: Linear::new(store, init, &format!("{name}.key"), d_model, d_model)?,
            value: Linear::new(store, init, &format!("{name}.value"), d_model, d_model)?,
            output: Linear::new(store, init, &format!("{name}.output"), d_model, d_model)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d_model)?,
            ffn: Mlp::new(
                store,
                init,
                &format!("{name}.ffn"),
                (d_model, ffn_hidden, d_model),
                Activation::Gelu,
            )?,
            n_heads,
        })
    }

    pub fn output_projection(&self) -> &Linear {
        &self.output
    }

    pub fn ffn_output(&self) -> &Linear {
        &self.ffn.second
    }

    /// Returns the block output and the per-head attention weights.
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mask: Option<Var>,
        drop: &mut Dropout,
    ) -> Result<(Var, Vec<Var>)> {
        let h = self.ln_attn.forward(g, p, x)?;
        let q = self.query.forward(g, p, h)?;
        let k = self.key.forward(g, p, h)?;
        let v = self.value.forward(g, p, h)?;
        let (att, weights) = multi_head_attention(g, q, k, v, self.n_heads, mask)?;
        let att = self.output.forward(g, p, att)?;
        let att = drop.apply(g, att)?;
        let x = g.add(x, att)?;
        let h = self.ln_ffn.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        let f = drop.apply(g, f)?;
        Ok((g.add(x, f)?, weights))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mask: Option<Var>,
        drop: &mut Dropout,
    ) -> Result<Var> {
        Ok(self.forward_traced(g, p, x, mask, drop)?.0)
    }
}

/// Per-position features `L×d` and the pooled row-0 vector `d`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub features: Var,
    pub pooled: Var,
}

fn finish<T: Scalar>(g: &mut Graph<T>, p: &Bound, ln: &LayerNorm, x: Var) -> Result<EncoderOutput> {
    let features = ln.forward(g, p, x)?;
    let d = g.value(features).dims2()?.1;
    let first = g.slice_rows(features, 0, 1)?;
    let pooled = g.reshape(first, &[d])?;
    Ok(EncoderOutput { features, pooled })
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
}

impl TextEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cfg: &TextEncoderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let token_embedding = store.add(format!("{name}.token_embedding"), init.embedding(&[cfg.vocab_size, d])?)?;
        let position_embedding =
            store.add(format!("{name}.position_embedding"), init.embedding(&[cfg.max_len, d])?)?;
        let blocks = (0..cfg.n_layers)
            .map(|i| TransformerBlock::new(store, init, &format!("{name}.block{i}"), d, cfg.n_heads, cfg.ffn_hidden))
            .collect::<Result<_>>()?;
        Ok(TextEncoder {
            cfg: cfg.clone(),
            token_embedding,
            position_embedding,
            blocks,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), d)?,
        })
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    /// Padded positions are masked out as attention keys.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        seq: &TokenSequence,
        drop: &mut Dropout,
    ) -> Result<EncoderOutput> {
        Ok(self.encode_traced(g, p, seq, drop)?.0)
    }

    /// Like [`TextEncoder::encode`], also returning every block's per-head
    /// attention weights.
    pub fn encode_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        seq: &TokenSequence,
        drop: &mut Dropout,
    ) -> Result<(EncoderOutput, Vec<Var>)> {
        let len = seq.ids.len();
        if len == 0 || len > self.cfg.max_len || seq.mask.len() != len {
            return Err(Error::shape(format!(
                "token sequence of length {len} (mask {}) for max_len {}",
                seq.mask.len(),
                self.cfg.max_len
            )));
        }
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let tokens = g.embedding_lookup(p.var(self.token_embedding), &ids)?;
        let positions = g.slice_rows(p.var(self.position_embedding), 0, len)?;
        let mut x = g.add(tokens, positions)?;
        x = drop.apply(g, x)?;
        let keep: Vec<bool> = seq.mask.iter().map(|&m| m == 1).collect();
        let mask = if keep.iter().all(|&k| k) {
            None
        } else {
            Some(g.constant(key_mask(&keep)?))
        };
        let mut traces = Vec::new();
        for block in &self.blocks {
            let (y, w) = block.forward_traced(g, p, x, mask, drop)?;
            x = y;
            traces.extend(w);
        }
        Ok((finish(g, p, &self.ln_final, x)?, traces))
    }
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub cfg: ImageEncoderConfig,
    projection: Linear,
    cls: ParamId,
    position_embedding: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
}

impl ImageEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cfg: &ImageEncoderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let projection = Linear::new(store, init, &format!("{name}.patch_projection"), cfg.patch_dim(), d)?;
        let cls = store.add(format!("{name}.cls"), init.embedding(&[1, d])?)?;
        let position_embedding = store.add(
            format!("{name}.position_embedding"),
            init.embedding(&[cfg.num_patches() + 1, d])?,
        )?;
        let blocks = (0..cfg.n_layers)
            .map(|i| TransformerBlock::new(store, init, &format!("{name}.block{i}"), d, cfg.n_heads, cfg.ffn_hidden))
            .collect::<Result<_>>()?;
        Ok(ImageEncoder {
            cfg: cfg.clone(),
            projection,
            cls,
            position_embedding,
            blocks,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), d)?,
        })
    }

    pub fn projection(&self) -> &Linear {
        &self.projection
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, image: &Tensor<T>) -> Result<EncoderOutput> {
        let expected = [self.cfg.channels, self.cfg.height, self.cfg.width];
        if image.shape() != expected {
            return Err(Error::shape(format!(
                "image {:?} does not match encoder geometry {expected:?}",
                image.shape()
            )));
        }
        let patches = g.constant(patchify(image, self.cfg.patch_size)?);
        let tokens = self.projection.forward(g, p, patches)?;
        let x = g.concat(&[p.var(self.cls), tokens], 0)?;
        let mut x = g.add(x, p.var(self.position_embedding))?;
        let mut no_drop = Dropout::disabled();
        for block in &self.blocks {
            x = block.forward(g, p, x, None, &mut no_drop)?;
        }
        finish(g, p, &self.ln_final, x)
    }
}
