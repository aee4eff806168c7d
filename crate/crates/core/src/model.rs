//! Complete classifiers: encoders plus one fusion head, with their parameters.

use crate::autodiff::gradcheck::{grad_check, GradCheckReport};
use crate::autodiff::{Graph, Var};
use crate::data::{split_vertical, Label};
use crate::encoders::{EncoderOutput, ImageEncoder, ImageEncoderConfig, TextEncoder, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    Architecture, ConcatHead, CrossmodalHead, DiscriminatorHead, EmbraceHead, FusionConfig, FusionOutput,
    GeneratorHead,
};
use crate::nn::{Bound, Dropout, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSequence, CLS, PAD, SEP};

/// Mixed into the seed of a discriminator so it does not share an
/// initialisation stream with its generator.
const DISCRIMINATOR_SALT: u64 = 0x5EED_D15C;

/// Samples per graph when scoring without gradients.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub text: TextEncoderConfig,
    pub image: ImageEncoderConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn arch(&self) -> Architecture {
        self.fusion.arch
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.fusion.validate()?;
        if self.fusion.d_text != self.text.d_model {
            return Err(Error::config(format!(
                "fusion d_text {} differs from text d_model {}",
                self.fusion.d_text, self.text.d_model
            )));
        }
        let arch = self.arch();
        if arch.uses_image() || arch == Architecture::Adversarial {
            self.image.validate()?;
            if self.fusion.d_image != self.image.d_model {
                return Err(Error::config(format!(
                    "fusion d_image {} differs from image d_model {}",
                    self.fusion.d_image, self.image.d_model
                )));
            }
        }
        if arch == Architecture::Embrace {
            let (left, right) = (self.image.half(false), self.image.half(true));
            left.validate()?;
            right.validate()?;
            if self.fusion.shared_half_encoders && left != right {
                return Err(Error::config("a shared half encoder needs an even image width"));
            }
        }
        Ok(())
    }
}

/// One model input. `image` is `C×H×W` at the encoder's geometry.
#[derive(Clone, Copy, Debug)]
pub struct Input<'a, T> {
    pub tokens: &'a TokenSequence,
    pub image: Option<&'a Tensor<T>>,
}

#[derive(Clone, Debug)]
enum Head {
    Generator(GeneratorHead),
    Concat(ConcatHead),
    Embrace(EmbraceHead),
    Crossmodal(CrossmodalHead),
}

/// Text encoder, optional image encoder(s), and a fusion head. For the
/// adversarial architecture this is the generator; see [`Discriminator`].
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    text: TextEncoder,
    images: Vec<ImageEncoder>,
    head: Head,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let text = TextEncoder::new(&mut params, &mut init, "text", &cfg.text)?;
        let mut images = Vec::new();
        let head = match cfg.arch() {
            Architecture::TextOnly | Architecture::Adversarial => {
                Head::Generator(GeneratorHead::new(&mut params, &mut init, &cfg.fusion)?)
            }
            Architecture::Concat => {
                images.push(ImageEncoder::new(&mut params, &mut init, "image", &cfg.image)?);
                Head::Concat(ConcatHead::new(&mut params, &mut init, &cfg.fusion)?)
            }
            Architecture::Crossmodal => {
                images.push(ImageEncoder::new(&mut params, &mut init, "image", &cfg.image)?);
                Head::Crossmodal(CrossmodalHead::new(&mut params, &mut init, &cfg.fusion)?)
            }
            Architecture::Embrace => {
                if cfg.fusion.shared_half_encoders {
                    images.push(ImageEncoder::new(&mut params, &mut init, "image_half", &cfg.image.half(false))?);
                } else {
                    images.push(ImageEncoder::new(&mut params, &mut init, "image_left", &cfg.image.half(false))?);
                    images.push(ImageEncoder::new(&mut params, &mut init, "image_right", &cfg.image.half(true))?);
                }
                Head::Embrace(EmbraceHead::new(&mut params, &mut init, &cfg.fusion)?)
            }
        };
        Ok(Model {
            cfg: cfg.clone(),
            params,
            text,
            images,
            head,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.cfg.arch()
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn concat_head(&self) -> Option<&ConcatHead> {
        match &self.head {
            Head::Concat(h) => Some(h),
            _ => None,
        }
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            text: self.text.clone(),
            images: self.images.clone(),
            head: self.head.clone(),
        }
    }

    fn image<'a>(&self, input: &Input<'a, T>) -> Result<&'a Tensor<T>> {
        input.image.ok_or_else(|| {
            Error::Input(format!("architecture {} needs an image", self.arch()))
        })
    }

    fn encode_text(&self, g: &mut Graph<T>, p: &Bound, input: &Input<'_, T>, drop: &mut Dropout) -> Result<EncoderOutput> {
        self.text.encode(g, p, input.tokens, drop)
    }

    /// Records the forward pass on `g` against parameters bound as `p`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, input: &Input<'_, T>, drop: &mut Dropout) -> Result<FusionOutput> {
        match &self.head {
            Head::Generator(head) => {
                let text = self.encode_text(g, p, input, drop)?;
                head.forward(g, p, &text)
            }
            Head::Concat(head) => {
                let image = self.image(input)?;
                let text = self.encode_text(g, p, input, drop)?;
                let image = self.images[0].encode(g, p, image)?;
                head.forward(g, p, &text, &image)
            }
            Head::Crossmodal(head) => {
                let image = self.image(input)?;
                let text = self.encode_text(g, p, input, drop)?;
                let image = self.images[0].encode(g, p, image)?;
                head.forward(g, p, &text, input.tokens.real_len(), &image)
            }
            Head::Embrace(head) => {
                let (left, right) = split_vertical(self.image(input)?)?;
                let text = self.encode_text(g, p, input, drop)?;
                let right_encoder = self.images.last().expect("embrace has an image encoder");
                let left = self.images[0].encode(g, p, &left)?;
                let right = right_encoder.encode(g, p, &right)?;
                head.forward(g, p, &text, &left, &right)
            }
        }
    }

    /// Troll probabilities without recording gradients.
    pub fn probabilities(&self, inputs: &[Input<'_, T>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            for input in chunk {
                let o = self.forward(&mut g, &p, input, &mut Dropout::disabled())?;
                out.push(g.value(o.p).data()[0].as_f64());
            }
        }
        Ok(out)
    }

    pub fn probability(&self, input: &Input<'_, T>) -> Result<f64> {
        Ok(self.probabilities(std::slice::from_ref(input))?[0])
    }

    /// Troll iff `p ≥ 0.5`.
    pub fn predict(&self, input: &Input<'_, T>) -> Result<Label> {
        Ok(Label::from_probability(self.probability(input)?))
    }
}

/// Adversary of the generator: pooled image features plus the generator's
/// probability, mapped to the belief that the generator is right.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub params: ParamStore<T>,
    image: ImageEncoder,
    head: DiscriminatorHead,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.image.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed ^ DISCRIMINATOR_SALT);
        let image = ImageEncoder::new(&mut params, &mut init, "image", &cfg.image)?;
        let head = DiscriminatorHead::new(&mut params, &mut init, &cfg.fusion)?;
        Ok(Discriminator { params, image, head })
    }

    pub fn input_width(&self) -> usize {
        self.head.input_width()
    }

    pub fn encode_image(&self, g: &mut Graph<T>, p: &Bound, image: &Tensor<T>) -> Result<EncoderOutput> {
        self.image.encode(g, p, image)
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        image: &EncoderOutput,
        p_g: Var,
    ) -> Result<Var> {
        self.head.forward(g, p, image, p_g)
    }
}

/// Toy dimensions for the architecture gradient checks.
pub fn toy_config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        text: TextEncoderConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_hidden: 8,
            max_len: 5,
            dropout_rate: 0.0,
        },
        image: ImageEncoderConfig {
            height: 4,
            width: 8,
            channels: 1,
            patch_size: 2,
            d_model: 6,
            n_layers: 1,
            n_heads: 2,
            ffn_hidden: 6,
        },
        fusion: FusionConfig {
            arch,
            d_text: 8,
            d_image: 6,
            n_heads: 2,
            ffn_hidden: 5,
            adv_lambda: 0.5,
            shared_half_encoders: false,
        },
    }
}

/// Checks the gradient of the training loss with respect to every parameter
/// of each architecture at toy dimensions. The adversarial graph covers the
/// generator loss including the frozen-discriminator term, differentiated
/// through both parameter sets.
pub fn architecture_suite(seed: u64, tol: f64) -> Result<Vec<GradCheckReport>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tokens = TokenSequence {
        ids: vec![CLS, 4, 7, SEP, PAD],
        mask: vec![1, 1, 1, 1, 0],
    };
    let image = Tensor::<f64>::new(&[1, 4, 8], (0..32).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let input = Input {
        tokens: &tokens,
        image: Some(&image),
    };
    let mut reports = Vec::new();
    for arch in Architecture::ALL {
        let cfg = toy_config(arch);
        let model = Model::<f64>::new(&cfg, seed)?;
        let mut point = model.params.tensors().to_vec();
        let split = point.len();
        let disc = (arch == Architecture::Adversarial)
            .then(|| Discriminator::<f64>::new(&cfg, seed))
            .transpose()?;
        if let Some(d) = &disc {
            point.extend(d.params.tensors().iter().cloned());
        }
        let lambda = cfg.fusion.adv_lambda;
        let f = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
            let p = Bound::from_vars(vars[..split].to_vec());
            let out = model.forward(g, &p, &input, &mut Dropout::disabled())?;
            let loss = g.bce_loss(out.p, &[1.0])?;
            let Some(d) = &disc else {
                return Ok(loss);
            };
            let dp = Bound::from_vars(vars[split..].to_vec());
            let img = d.encode_image(g, &dp, &image)?;
            let belief = d.forward(g, &dp, &img, out.p)?;
            let fool = g.bce_loss(belief, &[1.0])?;
            let fool = g.scale(fool, lambda)?;
            g.add(loss, fool)
        };
        reports.push(grad_check(arch.as_str(), f, &point, tol)?);
    }
    Ok(reports)
}
