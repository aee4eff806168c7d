//! Fusion heads mapping encoder outputs to a troll probability.

pub mod attention;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Activation, Graph, Var};
use crate::encoders::EncoderOutput;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNorm, Linear, Mlp, ParamStore};
use crate::scalar::Scalar;

use attention::{attention, multi_head_attention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    TextOnly,
    Concat,
    Embrace,
    Crossmodal,
    Adversarial,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::TextOnly,
        Architecture::Concat,
        Architecture::Embrace,
        Architecture::Crossmodal,
        Architecture::Adversarial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::TextOnly => "text_only",
            Architecture::Concat => "concat",
            Architecture::Embrace => "embrace",
            Architecture::Crossmodal => "crossmodal",
            Architecture::Adversarial => "adversarial",
        }
    }

    /// Whether inference needs the image. The adversarial model predicts with
    /// its text-only generator.
    pub fn uses_image(self) -> bool {
        matches!(
            self,
            Architecture::Concat | Architecture::Embrace | Architecture::Crossmodal
        )
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub arch: Architecture,
    pub d_text: usize,
    pub d_image: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub adv_lambda: f64,
    /// Embrace only: encode both image halves with one encoder.
    pub shared_half_encoders: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            arch: Architecture::TextOnly,
            d_text: 64,
            d_image: 64,
            n_heads: 4,
            ffn_hidden: 128,
            adv_lambda: 0.5,
            shared_half_encoders: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_text == 0 || self.d_image == 0 || self.ffn_hidden == 0 {
            return Err(Error::config("fusion widths must be positive"));
        }
        if !(self.adv_lambda >= 0.0 && self.adv_lambda.is_finite()) {
            return Err(Error::config(format!(
                "adv_lambda must be a finite value ≥ 0, got {}",
                self.adv_lambda
            )));
        }
        if self.arch == Architecture::Embrace
            && (self.n_heads == 0 || !self.d_text.is_multiple_of(self.n_heads))
        {
            return Err(Error::config(format!(
                "fusion n_heads {} does not divide d_text {}",
                self.n_heads, self.d_text
            )));
        }
        Ok(())
    }
}

/// `p` is a length-1 probability; `aux` is the discriminator's output when
/// one was evaluated.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub p: Var,
    pub aux: Option<Var>,
}

fn probability<T: Scalar>(g: &mut Graph<T>, logit: Var) -> Result<FusionOutput> {
    let p = g.sigmoid(logit)?;
    let p = g.reshape(p, &[1])?;
    Ok(FusionOutput { p, aux: None })
}

fn as_row<T: Scalar>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    if g.value(v).rank() == 1 {
        let n = g.value(v).numel();
        g.reshape(v, &[1, n])
    } else {
        Ok(v)
    }
}

/// Pooled text and pooled image stacked side by side, then one linear map.
#[derive(Clone, Debug)]
pub struct ConcatHead {
    pub linear: Linear,
    pub d_text: usize,
    pub d_image: usize,
}

impl ConcatHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &FusionConfig) -> Result<Self> {
        Ok(ConcatHead {
            linear: Linear::new(store, init, "head.linear", cfg.d_text + cfg.d_image, 1)?,
            d_text: cfg.d_text,
            d_image: cfg.d_image,
        })
    }

    pub fn joint_width(&self) -> usize {
        self.linear.fan_in
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        text: &EncoderOutput,
        image: &EncoderOutput,
    ) -> Result<FusionOutput> {
        let t = as_row(g, text.pooled)?;
        let i = as_row(g, image.pooled)?;
        let joint = g.concat(&[t, i], 1)?;
        let logit = self.linear.forward(g, p, joint)?;
        probability(g, logit)
    }
}

/// Pooled text attends over the two pooled image halves.
#[derive(Clone, Debug)]
pub struct EmbraceHead {
    pub project: Option<Linear>,
    pub mlp: Mlp,
    pub n_heads: usize,
}

/// Intermediate values of [`EmbraceHead::forward_traced`].
#[derive(Clone, Debug)]
pub struct EmbraceTrace {
    pub attended: Var,
    pub weights: Vec<Var>,
}

impl EmbraceHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &FusionConfig) -> Result<Self> {
        let project = if cfg.d_image != cfg.d_text {
            Some(Linear::new(store, init, "head.project", cfg.d_image, cfg.d_text)?)
        } else {
            None
        };
        Ok(EmbraceHead {
            project,
            mlp: Mlp::new(store, init, "head.mlp", (cfg.d_text, cfg.ffn_hidden, 1), Activation::Relu)?,
            n_heads: cfg.n_heads,
        })
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        text: &EncoderOutput,
        left: &EncoderOutput,
        right: &EncoderOutput,
    ) -> Result<(FusionOutput, EmbraceTrace)> {
        let query = as_row(g, text.pooled)?;
        let l = as_row(g, left.pooled)?;
        let r = as_row(g, right.pooled)?;
        let mut halves = g.concat(&[l, r], 0)?;
        if let Some(proj) = &self.project {
            halves = proj.forward(g, p, halves)?;
        }
        if g.value(halves).dims2()?.1 != g.value(query).dims2()?.1 {
            return Err(Error::config("image halves and text differ in width and no projection is configured"));
        }
        let (attended, weights) = multi_head_attention(g, query, halves, halves, self.n_heads, None)?;
        let logit = self.mlp.forward(g, p, attended)?;
        Ok((probability(g, logit)?, EmbraceTrace { attended, weights }))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        text: &EncoderOutput,
        left: &EncoderOutput,
        right: &EncoderOutput,
    ) -> Result<FusionOutput> {
        Ok(self.forward_traced(g, p, text, left, right)?.0)
    }
}

/// Two-directional cross attention with post-LN residuals:
///
/// ```text
/// A = LN(Q + Attention(Q, K, K))    R = LN(A + FFN(A))
/// Z = LN(K + Attention(K, Q, Q))    I = LN(Z + FFN(Z))
/// ```
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub ln_a: LayerNorm,
    pub ffn_text: Mlp,
    pub ln_r: LayerNorm,
    pub ln_z: LayerNorm,
    pub ffn_image: Mlp,
    pub ln_i: LayerNorm,
}

impl CrossAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        d: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        Ok(CrossAttention {
            ln_a: LayerNorm::new(store, &format!("{name}.ln_a"), d)?,
            ffn_text: Mlp::new(store, init, &format!("{name}.ffn_text"), (d, ffn_hidden, d), Activation::Relu)?,
            ln_r: LayerNorm::new(store, &format!("{name}.ln_r"), d)?,
            ln_z: LayerNorm::new(store, &format!("{name}.ln_z"), d)?,
            ffn_image: Mlp::new(store, init, &format!("{name}.ffn_image"), (d, ffn_hidden, d), Activation::Relu)?,
            ln_i: LayerNorm::new(store, &format!("{name}.ln_i"), d)?,
        })
    }

    /// Returns `(R, I)` with the row counts of `text` and `image`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, text: Var, image: Var) -> Result<(Var, Var)> {
        let (_, dt) = g.value(text).dims2()?;
        let (_, di) = g.value(image).dims2()?;
        if dt != di {
            return Err(Error::shape(format!(
                "cross attention: text width {dt} vs image width {di}"
            )));
        }
        let att = attention(g, text, image, image, None)?;
        let a = g.add(text, att)?;
        let a = self.ln_a.forward(g, p, a)?;
        let f = self.ffn_text.forward(g, p, a)?;
        let r = g.add(a, f)?;
        let r = self.ln_r.forward(g, p, r)?;

        let att = attention(g, image, text, text, None)?;
        let z = g.add(image, att)?;
        let z = self.ln_z.forward(g, p, z)?;
        let f = self.ffn_image.forward(g, p, z)?;
        let i = g.add(z, f)?;
        let i = self.ln_i.forward(g, p, i)?;
        Ok((r, i))
    }
}

/// Image features projected to the text width, cross attended with the
/// caption's real tokens, mean pooled over both sequences.
#[derive(Clone, Debug)]
pub struct CrossmodalHead {
    pub project: Linear,
    pub cross: CrossAttention,
    pub linear: Linear,
}

impl CrossmodalHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &FusionConfig) -> Result<Self> {
        Ok(CrossmodalHead {
            project: Linear::new(store, init, "head.project", cfg.d_image, cfg.d_text)?,
            cross: CrossAttention::new(store, init, "head.cross", cfg.d_text, cfg.ffn_hidden)?,
            linear: Linear::new(store, init, "head.linear", cfg.d_text, 1)?,
        })
    }

    /// `text_len` is the number of unpadded text positions; padded rows are
    /// dropped before attention.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        text: &EncoderOutput,
        text_len: usize,
        image: &EncoderOutput,
    ) -> Result<FusionOutput> {
        let rows = g.value(text.features).dims2()?.0;
        if text_len == 0 || text_len > rows {
            return Err(Error::shape(format!("text length {text_len} for {rows} feature rows")));
        }
        let words = if text_len < rows {
            g.slice_rows(text.features, 0, text_len)?
        } else {
            text.features
        };
        let visual = self.project.forward(g, p, image.features)?;
        let (r, i) = self.cross.forward(g, p, words, visual)?;
        let joint = g.concat(&[r, i], 0)?;
        let pooled = g.mean_pool_rows(joint)?;
        let logit = self.linear.forward(g, p, pooled)?;
        probability(g, logit)
    }
}

/// Generator head: pooled text → linear → ReLU → linear → sigmoid. The
/// text-only baseline uses the same head.
#[derive(Clone, Debug)]
pub struct GeneratorHead {
    pub mlp: Mlp,
}

impl GeneratorHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &FusionConfig) -> Result<Self> {
        Ok(GeneratorHead {
            mlp: Mlp::new(store, init, "head.mlp", (cfg.d_text, cfg.ffn_hidden, 1), Activation::Relu)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, text: &EncoderOutput) -> Result<FusionOutput> {
        let logit = self.mlp.forward(g, p, text.pooled)?;
        probability(g, logit)
    }
}

/// Discriminator head over `[pooled image, p_G]`, estimating whether the
/// generator's call was right.
#[derive(Clone, Debug)]
pub struct DiscriminatorHead {
    pub mlp: Mlp,
}

impl DiscriminatorHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &FusionConfig) -> Result<Self> {
        Ok(DiscriminatorHead {
            mlp: Mlp::new(store, init, "head.mlp", (cfg.d_image + 1, cfg.ffn_hidden, 1), Activation::Relu)?,
        })
    }

    pub fn input_width(&self) -> usize {
        self.mlp.first.fan_in
    }

    /// `p_g` must be a length-1 probability strictly inside (0, 1).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        image: &EncoderOutput,
        p_g: Var,
    ) -> Result<Var> {
        let v = g.value(p_g);
        if v.numel() != 1 {
            return Err(Error::shape(format!("p_G must hold one value, got {:?}", v.shape())));
        }
        let pv = v.data()[0];
        if !(pv > T::zero() && pv < T::one()) {
            return Err(Error::Precondition(format!("p_G = {pv} is outside (0, 1)")));
        }
        let img = as_row(g, image.pooled)?;
        let pg = g.reshape(p_g, &[1, 1])?;
        let joint = g.concat(&[img, pg], 1)?;
        let logit = self.mlp.forward(g, p, joint)?;
        Ok(probability(g, logit)?.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pooled<T: Scalar>(g: &mut Graph<T>, v: &[f64]) -> EncoderOutput {
        let t = g.constant(Tensor::from_f64(&[v.len()], v).unwrap());
        let f = g.constant(Tensor::from_f64(&[1, v.len()], v).unwrap());
        EncoderOutput { features: f, pooled: t }
    }

    fn cfg(arch: Architecture, d_text: usize, d_image: usize) -> FusionConfig {
        FusionConfig {
            arch,
            d_text,
            d_image,
            n_heads: 2,
            ffn_hidden: 6,
            ..Default::default()
        }
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.as_str().parse::<Architecture>().unwrap(), a);
        }
        assert!("late".parse::<Architecture>().is_err());
    }

    #[test]
    fn zero_concat_head_gives_one_half() {
        let mut store = ParamStore::<f64>::new();
        let head = ConcatHead::new(&mut store, &mut Init::new(1), &cfg(Architecture::Concat, 3, 5)).unwrap();
        assert_eq!(head.joint_width(), 8);
        store.get_mut(head.linear.weight).data_mut().fill(0.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let t = pooled(&mut g, &[1.0, 2.0, 3.0]);
        let i = pooled(&mut g, &[0.5; 5]);
        let out = head.forward(&mut g, &p, &t, &i).unwrap();
        assert_eq!(g.value(out.p).data(), &[0.5]);
    }

    #[test]
    fn identical_halves_attend_to_the_shared_embedding() {
        let mut store = ParamStore::<f64>::new();
        let head = EmbraceHead::new(&mut store, &mut Init::new(2), &cfg(Architecture::Embrace, 4, 4)).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let t = pooled(&mut g, &[0.3, -1.0, 2.0, 0.1]);
        let half = [0.9, 0.2, -0.4, 1.5];
        let l = pooled(&mut g, &half);
        let r = pooled(&mut g, &half);
        let (out, trace) = head.forward_traced(&mut g, &p, &t, &l, &r).unwrap();
        for (a, b) in g.value(trace.attended).data().iter().zip(half) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(trace.weights.len(), 2);
        for w in trace.weights {
            assert!((g.value(w).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let pv = g.value(out.p).data()[0];
        assert!(pv > 0.0 && pv < 1.0);
    }

    #[test]
    fn embrace_projects_mismatched_widths() {
        let mut store = ParamStore::<f64>::new();
        let head = EmbraceHead::new(&mut store, &mut Init::new(2), &cfg(Architecture::Embrace, 4, 6)).unwrap();
        assert!(head.project.is_some());
        let bad = FusionConfig { n_heads: 3, ..cfg(Architecture::Embrace, 4, 4) };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn cross_attention_shapes_and_zero_keys() {
        let mut store = ParamStore::<f64>::new();
        let cross = CrossAttention::new(&mut store, &mut Init::new(3), "c", 8, 16).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let mut init = Init::new(9);
        let q = g.constant(init.linear(1, &[4, 8]).unwrap());
        let k = g.constant(init.linear(1, &[9, 8]).unwrap());
        let (r, i) = cross.forward(&mut g, &p, q, k).unwrap();
        assert_eq!(g.shape(r), &[4, 8]);
        assert_eq!(g.shape(i), &[9, 8]);

        let zeros = g.constant(Tensor::zeros(&[3, 8]).unwrap());
        let att = attention(&mut g, q, zeros, zeros, None).unwrap();
        assert!(g.value(att).data().iter().all(|&v| v == 0.0));

        let narrow = g.constant(Tensor::zeros(&[3, 6]).unwrap());
        assert!(matches!(cross.forward(&mut g, &p, q, narrow), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_contract() {
        let c = cfg(Architecture::Adversarial, 4, 5);
        let mut store = ParamStore::<f64>::new();
        let d = DiscriminatorHead::new(&mut store, &mut Init::new(4), &c).unwrap();
        assert_eq!(d.input_width(), 6);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let img = pooled(&mut g, &[0.1, 0.2, 0.3, 0.4, 0.5]);
        for bad in [0.0, 1.0, -0.2] {
            let pg = g.constant(Tensor::vector(vec![bad]).unwrap());
            assert!(matches!(d.forward(&mut g, &p, &img, pg), Err(Error::Precondition(_))));
        }
        let pg = g.constant(Tensor::vector(vec![0.7]).unwrap());
        let out = d.forward(&mut g, &p, &img, pg).unwrap();
        let v = g.value(out).data()[0];
        assert!(v > 0.0 && v < 1.0);

        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let img = pooled(&mut g, &[9.0, -3.0, 0.3, 0.4, 7.5]);
        let pg = g.constant(Tensor::vector(vec![0.01]).unwrap());
        let out = d.forward(&mut g, &p, &img, pg).unwrap();
        assert_eq!(g.value(out).data(), &[0.5]);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let c = FusionConfig { adv_lambda: -0.1, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
