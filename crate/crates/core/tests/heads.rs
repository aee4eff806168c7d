use mflab::encoders::{patchify, EncoderOutput, ImageEncoderConfig};
use mflab::fusion::{ConcatHead, CrossmodalHead, DiscriminatorHead, EmbraceHead};
use mflab::model::toy_config;
use mflab::nn::{Init, ParamStore};
use mflab::{Architecture, FusionConfig, Graph, Input, Model, Tensor, TokenSequence};
use proptest::prelude::*;

fn fusion(arch: Architecture, d_text: usize, d_image: usize) -> FusionConfig {
    FusionConfig {
        arch,
        d_text,
        d_image,
        n_heads: 1,
        ffn_hidden: 4,
        adv_lambda: 0.5,
        shared_half_encoders: false,
    }
}

fn encoded(g: &mut Graph<f64>, rows: &[&[f64]]) -> EncoderOutput {
    let features = g.constant(Tensor::from_rows(rows).unwrap());
    let pooled = g.constant(Tensor::vector(rows[0].to_vec()).unwrap());
    EncoderOutput { features, pooled }
}

#[test]
fn vit_base_geometry_has_196_patches() {
    let cfg = ImageEncoderConfig {
        height: 224,
        width: 224,
        channels: 3,
        patch_size: 16,
        ..ImageEncoderConfig::default()
    };
    assert_eq!(cfg.num_patches(), 196);
    assert_eq!(cfg.patch_dim(), 768);
    let image = Tensor::<f32>::zeros(&[3, 224, 224]).unwrap();
    assert_eq!(patchify(&image, 16).unwrap().shape(), &[196, 768]);
}

#[test]
fn patchify_rejects_ragged_grids() {
    let image = Tensor::<f64>::zeros(&[1, 10, 12]).unwrap();
    assert!(patchify(&image, 4).is_err());
}

proptest! {
    #[test]
    fn patchify_conserves_pixels(gh in 1usize..5, gw in 1usize..5, p in 1usize..5, c in 1usize..4) {
        let (h, w) = (gh * p, gw * p);
        let data: Vec<f64> = (0..c * h * w).map(|i| i as f64).collect();
        let image = Tensor::new(&[c, h, w], data).unwrap();
        let patches = patchify(&image, p).unwrap();
        let (n, dim) = patches.dims2().unwrap();
        prop_assert_eq!(n * p * p, h * w);
        prop_assert_eq!(dim, c * p * p);
        let mut seen = patches.to_f64_vec();
        seen.sort_by(f64::total_cmp);
        let all: Vec<f64> = (0..c * h * w).map(|i| i as f64).collect();
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn concat_joint_width_is_the_sum(d_text in 1usize..40, d_image in 1usize..40) {
        let mut store = ParamStore::<f64>::new();
        let head = ConcatHead::new(&mut store, &mut Init::new(0), &fusion(Architecture::Concat, d_text, d_image)).unwrap();
        prop_assert_eq!(head.joint_width(), d_text + d_image);
    }

    #[test]
    fn discriminator_sees_image_plus_one(d_image in 1usize..40) {
        let mut store = ParamStore::<f64>::new();
        let head = DiscriminatorHead::new(&mut store, &mut Init::new(0), &fusion(Architecture::Adversarial, 8, d_image)).unwrap();
        prop_assert_eq!(head.input_width(), d_image + 1);
    }
}

#[test]
fn embrace_attends_over_halves_by_hand() {
    let mut store = ParamStore::<f64>::new();
    let head = EmbraceHead::new(&mut store, &mut Init::new(3), &fusion(Architecture::Embrace, 2, 2)).unwrap();
    assert!(head.project.is_none());
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let text = encoded(&mut g, &[&[1.0, 2.0]]);
    let left = encoded(&mut g, &[&[1.0, 0.0]]);
    let right = encoded(&mut g, &[&[0.0, 1.0]]);
    let (_, trace) = head.forward_traced(&mut g, &p, &text, &left, &right).unwrap();
    // scores 1/√2 and 2/√2
    let s = 1.0 / 2f64.sqrt();
    let wl = 1.0 / (1.0 + s.exp());
    let want = [wl, 1.0 - wl];
    let got = g.value(trace.attended).to_f64_vec();
    assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
    let w = g.value(trace.weights[0]).to_f64_vec();
    assert!((w[0] - wl).abs() < 1e-15);
}

#[test]
fn concat_ignores_the_image_once_its_weights_are_zero() {
    let cfg = toy_config(Architecture::Concat);
    let mut model = Model::<f64>::new(&cfg, 9).unwrap();
    let head = model.concat_head().unwrap().clone();
    let w = model.params.get_mut(head.linear.weight);
    // Rows d_text.. of the joint-input weight read the pooled image.
    for x in &mut w.data_mut()[cfg.fusion.d_text..] {
        *x = 0.0;
    }
    let tokens = TokenSequence {
        ids: vec![2, 5, 6, 3, 0],
        mask: vec![1, 1, 1, 1, 0],
    };
    let (c, h, wd) = (cfg.image.channels, cfg.image.height, cfg.image.width);
    let a = Tensor::new(&[c, h, wd], (0..c * h * wd).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let b = Tensor::new(&[c, h, wd], (0..c * h * wd).map(|i| (i as f64 * 1.91).cos()).collect()).unwrap();
    let pa = model.probability(&Input { tokens: &tokens, image: Some(&a) }).unwrap();
    let pb = model.probability(&Input { tokens: &tokens, image: Some(&b) }).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn crossmodal_is_invariant_to_image_row_order() {
    let mut store = ParamStore::<f64>::new();
    let head = CrossmodalHead::new(&mut store, &mut Init::new(4), &fusion(Architecture::Crossmodal, 4, 3)).unwrap();
    let text_rows: [&[f64]; 3] = [&[0.1, -0.4, 0.9, 0.3], &[1.2, 0.0, -0.5, 0.2], &[0.0, 0.0, 0.0, 0.0]];
    let img: [&[f64]; 3] = [&[0.5, -1.0, 0.3], &[0.2, 0.8, -0.6], &[-0.9, 0.1, 0.4]];
    let permuted: [&[f64]; 3] = [img[2], img[0], img[1]];
    let run = |image: &[&[f64]]| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let text = encoded(&mut g, &text_rows);
        let image = encoded(&mut g, image);
        let out = head.forward(&mut g, &p, &text, 2, &image).unwrap();
        g.value(out.p).data()[0]
    };
    assert!((run(&img) - run(&permuted)).abs() < 1e-14);
}

#[test]
fn crossmodal_ignores_padded_text_rows() {
    let mut store = ParamStore::<f64>::new();
    let head = CrossmodalHead::new(&mut store, &mut Init::new(4), &fusion(Architecture::Crossmodal, 2, 2)).unwrap();
    let img: [&[f64]; 2] = [&[0.5, -1.0], &[0.2, 0.8]];
    let run = |pad: f64| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let text = encoded(&mut g, &[&[0.3, 0.7], &[-0.2, 0.4], &[pad, -pad]]);
        let image = encoded(&mut g, &img);
        let out = head.forward(&mut g, &p, &text, 2, &image).unwrap();
        g.value(out.p).data()[0]
    };
    assert_eq!(run(0.0), run(5.0));
}

#[test]
fn discriminator_rejects_saturated_probabilities() {
    let mut store = ParamStore::<f64>::new();
    let head = DiscriminatorHead::new(&mut store, &mut Init::new(0), &fusion(Architecture::Adversarial, 2, 2)).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let image = encoded(&mut g, &[&[0.1, 0.2]]);
    let one = g.constant(Tensor::vector(vec![1.0]).unwrap());
    let err = head.forward(&mut g, &p, &image, one).unwrap_err();
    assert!(err.is_validation());
}
