//! Supervised and adversarial training loops.
//!
//! Each sample gets its own graph; per-sample gradients of `loss / B` are
//! summed in batch order, so results do not depend on the thread count.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var, PROB_CLAMP};
use crate::data::{Label, Sample};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Discriminator, Input, Model};
use crate::nn::{Bound, Dropout, ParamStore};
use crate::optim::{warmup_lr, Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSequence, Vocab};

pub const BATCH_SIZES: [usize; 3] = [16, 32, 64];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub seed: u64,
    pub shuffle: bool,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Lifts the restriction of `batch_size` to 16, 32 or 64.
    pub allow_any_batch_size: bool,
    /// Worker threads for per-sample gradients. Does not change results.
    pub threads: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 30,
            batch_size: 32,
            warmup_steps: 100,
            seed: 0,
            shuffle: true,
            lr: 2e-5,
            adam: AdamConfig::default(),
            allow_any_batch_size: false,
            threads: 1,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !self.allow_any_batch_size && !BATCH_SIZES.contains(&self.batch_size) {
            return Err(Error::config(format!(
                "batch_size {} is not one of 16, 32, 64 (set train.allow_any_batch_size to override)",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} is invalid", self.lr)));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::config("adam needs 0 ≤ beta < 1 and eps > 0"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }
}

/// A tokenized sample ready for the model.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub id: String,
    pub tokens: TokenSequence,
    pub image: Option<Tensor<T>>,
    pub label: Label,
}

impl<T: Scalar> Example<T> {
    pub fn input(&self) -> Input<'_, T> {
        Input {
            tokens: &self.tokens,
            image: self.image.as_ref(),
        }
    }

    pub fn target(&self) -> T {
        T::of(self.label.target())
    }
}

/// Tokenizes captions; images are kept only when `with_image` is set.
pub fn prepare<T: Scalar>(
    samples: &[Sample<T>],
    vocab: &Vocab,
    max_len: usize,
    with_image: bool,
) -> Result<Vec<Example<T>>> {
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                id: s.id.clone(),
                tokens: vocab.encode(&s.caption, max_len)?,
                image: with_image.then(|| s.image.clone()),
                label: s.label,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Per-epoch loss and metrics, written as
/// `epoch,split,loss,accuracy,weighted_f1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<HistoryRecord>,
}

impl History {
    fn push(&mut self, epoch: usize, split: &str, loss: f64, report: &EvalReport) {
        self.records.push(HistoryRecord {
            epoch,
            split: split.to_string(),
            loss,
            accuracy: report.accuracy,
            weighted_f1: report.weighted_f1,
        });
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a HistoryRecord> + 'a {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy,weighted_f1\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.epoch, r.split, r.loss, r.accuracy, r.weighted_f1
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn bce_value(p: f64, y: f64) -> f64 {
    let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Probabilities, mean loss, and metrics of `model` on `examples`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub probabilities: Vec<f64>,
    pub loss: f64,
    pub report: EvalReport,
}

impl Evaluation {
    pub fn predictions(&self) -> Vec<Label> {
        self.probabilities.iter().map(|&p| Label::from_probability(p)).collect()
    }
}

fn summarize(examples_labels: &[Label], probabilities: Vec<f64>, losses: &[f64]) -> Result<Evaluation> {
    let pred: Vec<Label> = probabilities.iter().map(|&p| Label::from_probability(p)).collect();
    let report = EvalReport::from_labels(examples_labels, &pred)?;
    Ok(Evaluation {
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        probabilities,
        report,
    })
}

pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let inputs: Vec<Input<'_, T>> = examples.iter().map(Example::input).collect();
    let probabilities = model.probabilities(&inputs)?;
    let losses: Vec<f64> = probabilities
        .iter()
        .zip(examples)
        .map(|(&p, e)| bce_value(p, e.label.target()))
        .collect();
    let labels: Vec<Label> = examples.iter().map(|e| e.label).collect();
    summarize(&labels, probabilities, &losses)
}

/// Per-sample loss and the probability that goes with it.
type SampleResult = Result<(Var, f64)>;

struct SampleGrad<T> {
    grads: Vec<Tensor<T>>,
    loss: f64,
    prob: f64,
}

fn sample_gradient<T: Scalar>(
    params: &ParamStore<T>,
    scale: T,
    index: usize,
    f: &(impl Fn(&mut Graph<T>, &Bound, usize) -> SampleResult + Sync),
) -> Result<SampleGrad<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let (loss, prob) = f(&mut g, &p, index)?;
    let value = g.value(loss).data()[0].as_f64();
    let scaled = g.scale(loss, scale)?;
    g.backward(scaled)?;
    Ok(SampleGrad {
        grads: params.collect_grads(&mut g, &p),
        loss: value,
        prob,
    })
}

/// Gradient of the mean per-sample loss over `batch`, plus each sample's
/// `(loss, probability)`.
fn batch_gradients<T: Scalar>(
    params: &ParamStore<T>,
    batch: &[usize],
    threads: usize,
    f: impl Fn(&mut Graph<T>, &Bound, usize) -> SampleResult + Sync,
) -> Result<(Vec<Tensor<T>>, Vec<(f64, f64)>)> {
    let scale = T::one() / T::of(batch.len() as f64);
    let mut total: Vec<Tensor<T>> = params.tensors().iter().map(Tensor::zeros_like).collect();
    let mut stats = Vec::with_capacity(batch.len());
    let mut absorb = |s: SampleGrad<T>| -> Result<()> {
        for (acc, g) in total.iter_mut().zip(&s.grads) {
            acc.add_assign(g);
        }
        stats.push((s.loss, s.prob));
        Ok(())
    };
    if threads <= 1 || batch.len() < 2 {
        for &i in batch {
            absorb(sample_gradient(params, scale, i, &f)?)?;
        }
    } else {
        let per = batch.len().div_ceil(threads);
        let results: Vec<Result<Vec<SampleGrad<T>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|chunk| {
                    let f = &f;
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&i| sample_gradient(params, scale, i, f))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
        });
        for chunk in results {
            for s in chunk? {
                absorb(s)?;
            }
        }
    }
    Ok((total, stats))
}

fn epoch_order(n: usize, spec: &TrainSpec, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(epoch as u64)));
    }
    order
}

fn dropout_for(spec: &TrainSpec, rate: f64, epoch: usize, index: usize) -> Dropout {
    let stream = spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 32)
        .wrapping_add(index as u64);
    Dropout::training(rate, stream)
}

fn check_classes<T>(train: &[Example<T>]) -> Result<()> {
    let trolls = train.iter().filter(|e| e.label == Label::Troll).count();
    if train.is_empty() || trolls == 0 || trolls == train.len() {
        return Err(Error::config(format!(
            "training split needs both classes ({trolls} troll of {})",
            train.len()
        )));
    }
    Ok(())
}

fn train_summary(train: &[Example<impl Scalar>], order: &[usize], stats: &[(f64, f64)]) -> Result<(f64, EvalReport)> {
    let gold: Vec<Label> = order.iter().map(|&i| train[i].label).collect();
    let pred: Vec<Label> = stats.iter().map(|&(_, p)| Label::from_probability(p)).collect();
    let loss = stats.iter().map(|s| s.0).sum::<f64>() / stats.len() as f64;
    Ok((loss, EvalReport::from_labels(&gold, &pred)?))
}

/// Best-by-validation snapshot tracking.
struct Best<T> {
    params: Option<ParamStore<T>>,
    f1: f64,
    epoch: usize,
}

impl<T: Scalar> Best<T> {
    fn new() -> Self {
        Best {
            params: None,
            f1: f64::NEG_INFINITY,
            epoch: 0,
        }
    }

    fn offer(&mut self, epoch: usize, f1: f64, params: &ParamStore<T>) {
        if f1 > self.f1 {
            self.f1 = f1;
            self.epoch = epoch;
            self.params = Some(params.clone());
        }
    }
}

/// The best-validation model (the final one without a validation split)
/// and the per-epoch history.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: History,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: ParamStore<T>,
}

fn finish<T: Scalar>(mut model: Model<T>, best: Best<T>, history: History, epochs: usize) -> TrainOutcome<T> {
    let last = model.params.clone();
    let best_epoch = match best.params {
        Some(p) => {
            model.params = p;
            best.epoch
        }
        None => epochs,
    };
    TrainOutcome {
        model,
        history,
        best_epoch,
        last,
    }
}

/// Minimises mean BCE with Adam. `on_epoch` sees each finished epoch's
/// history rows.
pub fn train_supervised<T: Scalar>(
    model: Model<T>,
    train: &[Example<T>],
    validation: &[Example<T>],
    spec: &TrainSpec,
) -> Result<TrainOutcome<T>> {
    train_supervised_with(model, train, validation, spec, |_| {})
}

pub fn train_supervised_with<T: Scalar>(
    mut model: Model<T>,
    train: &[Example<T>],
    validation: &[Example<T>],
    spec: &TrainSpec,
    mut on_epoch: impl FnMut(&[HistoryRecord]),
) -> Result<TrainOutcome<T>> {
    spec.validate()?;
    check_classes(train)?;
    let rate = model.cfg.text.dropout_rate;
    let mut adam = Adam::new(spec.adam, model.params.tensors());
    let mut history = History::default();
    let mut best = Best::new();
    for epoch in 1..=spec.epochs {
        let order = epoch_order(train.len(), spec, epoch);
        let mut stats = Vec::with_capacity(train.len());
        for batch in order.chunks(spec.batch_size) {
            let lr = warmup_lr(adam.steps() + 1, spec.lr, spec.warmup_steps);
            let (grads, s) = batch_gradients(&model.params, batch, spec.threads, |g, p, i| {
                let ex = &train[i];
                let out = model.forward(g, p, &ex.input(), &mut dropout_for(spec, rate, epoch, i))?;
                let prob = g.value(out.p).data()[0].as_f64();
                Ok((g.bce_loss(out.p, &[ex.target()])?, prob))
            })?;
            stats.extend(s);
            step(&mut adam, &mut model.params, &grads, lr)?;
        }
        let mark = history.records.len();
        let (loss, report) = train_summary(train, &order, &stats)?;
        history.push(epoch, "train", loss, &report);
        if !validation.is_empty() {
            let eval = evaluate(&model, validation)?;
            history.push(epoch, "validation", eval.loss, &eval.report);
            best.offer(epoch, eval.report.weighted_f1, &model.params);
        }
        on_epoch(&history.records[mark..]);
    }
    Ok(finish(model, best, history, spec.epochs))
}

/// A zero learning rate leaves parameters bitwise untouched.
fn step<T: Scalar>(adam: &mut Adam<T>, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
    if lr == 0.0 {
        // Keep the step counter moving so the schedule stays aligned.
        let mut scratch: Vec<Tensor<T>> = params.tensors().to_vec();
        return adam.step(&mut scratch, grads, 0.0);
    }
    adam.step(params.tensors_mut(), grads, lr)
}

#[derive(Clone, Debug)]
pub struct AdversarialOutcome<T> {
    pub generator: TrainOutcome<T>,
    pub discriminator: Discriminator<T>,
}

/// Alternates, per batch, one discriminator step with the generator frozen
/// and one generator step with the discriminator frozen.
///
/// The discriminator sees `[pooled image, p_G]` and learns whether the
/// generator's call (`p_G ≥ 0.5`) matches the gold label. The generator
/// minimises `BCE(p_G, y) − λ·ln D(image, p_G)`; with `λ = 0` the second
/// term is not built at all.
pub fn train_adversarial<T: Scalar>(
    generator: Model<T>,
    discriminator: Discriminator<T>,
    train: &[Example<T>],
    validation: &[Example<T>],
    spec: &TrainSpec,
    lambda: f64,
) -> Result<AdversarialOutcome<T>> {
    train_adversarial_with(generator, discriminator, train, validation, spec, lambda, |_| {})
}

pub fn train_adversarial_with<T: Scalar>(
    mut gen: Model<T>,
    mut disc: Discriminator<T>,
    train: &[Example<T>],
    validation: &[Example<T>],
    spec: &TrainSpec,
    lambda: f64,
    mut on_epoch: impl FnMut(&[HistoryRecord]),
) -> Result<AdversarialOutcome<T>> {
    spec.validate()?;
    check_classes(train)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("adv_lambda must be finite and ≥ 0, got {lambda}")));
    }
    if train.iter().any(|e| e.image.is_none()) {
        return Err(Error::Input("adversarial training needs every image".into()));
    }
    let rate = gen.cfg.text.dropout_rate;
    let t_lambda = T::of(lambda);
    let mut adam_g = Adam::new(spec.adam, gen.params.tensors());
    let mut adam_d = Adam::new(spec.adam, disc.params.tensors());
    let mut history = History::default();
    let mut best = Best::new();
    for epoch in 1..=spec.epochs {
        let order = epoch_order(train.len(), spec, epoch);
        let mut g_stats = Vec::with_capacity(train.len());
        let mut d_stats = Vec::with_capacity(train.len());
        let mut d_gold = Vec::with_capacity(train.len());
        for batch in order.chunks(spec.batch_size) {
            let lr = warmup_lr(adam_g.steps() + 1, spec.lr, spec.warmup_steps);

            let inputs: Vec<Input<'_, T>> = batch.iter().map(|&i| train[i].input()).collect();
            let p_g = gen.probabilities(&inputs)?;
            let correct: Vec<bool> = batch
                .iter()
                .zip(&p_g)
                .map(|(&i, &p)| Label::from_probability(p) == train[i].label)
                .collect();
            let slot = |i: usize| batch.iter().position(|&b| b == i).expect("index in batch");
            let (grads, s) = batch_gradients(&disc.params, batch, spec.threads, |g, p, i| {
                let k = slot(i);
                let img = disc.encode_image(g, p, train[i].image.as_ref().expect("checked above"))?;
                let pg = g.constant(Tensor::vector(vec![T::of(p_g[k])])?);
                let belief = disc.forward(g, p, &img, pg)?;
                let prob = g.value(belief).data()[0].as_f64();
                let c = if correct[k] { T::one() } else { T::zero() };
                Ok((g.bce_loss(belief, &[c])?, prob))
            })?;
            d_stats.extend(s);
            d_gold.extend(correct.iter().map(|&c| Label::from_bool(c)));
            step(&mut adam_d, &mut disc.params, &grads, lr)?;

            let (grads, s) = batch_gradients(&gen.params, batch, spec.threads, |g, p, i| {
                let ex = &train[i];
                let out = gen.forward(g, p, &ex.input(), &mut dropout_for(spec, rate, epoch, i))?;
                let prob = g.value(out.p).data()[0].as_f64();
                let loss = g.bce_loss(out.p, &[ex.target()])?;
                if lambda == 0.0 {
                    return Ok((loss, prob));
                }
                let dp = disc.params.bind(g, false);
                let img = disc.encode_image(g, &dp, ex.image.as_ref().expect("checked above"))?;
                let belief = disc.forward(g, &dp, &img, out.p)?;
                // −ln D is the BCE of D's output against 1.
                let fool = g.bce_loss(belief, &[T::one()])?;
                let fool = g.scale(fool, t_lambda)?;
                Ok((g.add(loss, fool)?, prob))
            })?;
            g_stats.extend(s);
            step(&mut adam_g, &mut gen.params, &grads, lr)?;
        }
        let mark = history.records.len();
        let (loss, report) = train_summary(train, &order, &g_stats)?;
        history.push(epoch, "train", loss, &report);
        let d_pred: Vec<Label> = d_stats.iter().map(|&(_, p)| Label::from_probability(p)).collect();
        let d_loss = d_stats.iter().map(|s| s.0).sum::<f64>() / d_stats.len() as f64;
        history.push(epoch, "train_d", d_loss, &EvalReport::from_labels(&d_gold, &d_pred)?);
        if !validation.is_empty() {
            let eval = evaluate(&gen, validation)?;
            history.push(epoch, "validation", eval.loss, &eval.report);
            best.offer(epoch, eval.report.weighted_f1, &gen.params);
        }
        on_epoch(&history.records[mark..]);
    }
    Ok(AdversarialOutcome {
        generator: finish(gen, best, history, spec.epochs),
        discriminator: disc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Architecture;
    use crate::model::toy_config;
    use crate::tokenizer::{CLS, PAD, SEP};

    /// Token 4 marks trolls, token 5 marks the rest; everything else is
    /// filler drawn from 6..10.
    fn separable(n: usize) -> Vec<Example<f64>> {
        (0..n)
            .map(|i| {
                let troll = i % 2 == 0;
                let marker = if troll { 4 } else { 5 };
                let filler = 6 + (i as u32 * 7) % 4;
                let image = Tensor::full(&[1, 4, 8], (i % 3) as f64 / 3.0).unwrap();
                Example {
                    id: format!("s{i}"),
                    tokens: TokenSequence {
                        ids: vec![CLS, filler, marker, SEP, PAD],
                        mask: vec![1, 1, 1, 1, 0],
                    },
                    image: Some(image),
                    label: Label::from_bool(troll),
                }
            })
            .collect()
    }

    fn spec(epochs: usize, lr: f64) -> TrainSpec {
        TrainSpec {
            epochs,
            batch_size: 4,
            warmup_steps: 0,
            seed: 3,
            lr,
            allow_any_batch_size: true,
            ..Default::default()
        }
    }

    #[test]
    fn batch_size_menu() {
        let s = TrainSpec { batch_size: 20, ..Default::default() };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let s = TrainSpec { allow_any_batch_size: true, ..s };
        assert!(s.validate().is_ok());
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = separable(8);
        let model = Model::new(&toy_config(Architecture::TextOnly), 1).unwrap();
        let out = train_supervised(model, &data, &[], &spec(200, 1e-2)).unwrap();
        let acc = out.history.split("train").last().unwrap().accuracy;
        let eval = evaluate(&out.model, &data).unwrap();
        assert_eq!(eval.report.accuracy, 1.0, "last train accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = separable(8);
        let model = Model::<f32>::new(&toy_config(Architecture::Concat), 1).unwrap();
        let before = model.params.clone();
        let data: Vec<Example<f32>> = data
            .into_iter()
            .map(|e| Example { image: e.image.map(|t| t.cast()), id: e.id, tokens: e.tokens, label: e.label })
            .collect();
        let out = train_supervised(model, &data, &data, &spec(3, 0.0)).unwrap();
        assert_eq!(out.last, before);
    }

    #[test]
    fn single_class_training_split_is_rejected() {
        let data: Vec<_> = separable(8).into_iter().filter(|e| e.label == Label::Troll).collect();
        let model = Model::new(&toy_config(Architecture::TextOnly), 1).unwrap();
        assert!(matches!(train_supervised(model, &data, &[], &spec(1, 1e-3)), Err(Error::Config(_))));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = separable(8);
        let run = |threads| {
            let model = Model::new(&toy_config(Architecture::Crossmodal), 1).unwrap();
            let s = TrainSpec { threads, ..spec(2, 1e-2) };
            train_supervised(model, &data, &data, &s).unwrap()
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.last, b.last);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn zero_lambda_generator_follows_text_only() {
        let data = separable(8);
        let cfg = toy_config(Architecture::Adversarial);
        let gen = Model::new(&cfg, 4).unwrap();
        let disc = Discriminator::new(&cfg, 4).unwrap();
        let adv = train_adversarial(gen, disc, &data, &data, &spec(3, 1e-2), 0.0).unwrap();
        let text = Model::new(&toy_config(Architecture::TextOnly), 4).unwrap();
        let sup = train_supervised(text, &data, &data, &spec(3, 1e-2)).unwrap();
        assert_eq!(adv.generator.last, sup.last);
        let strip = |h: &History| h.records.iter().filter(|r| r.split != "train_d").cloned().collect::<Vec<_>>();
        assert_eq!(strip(&adv.generator.history), strip(&sup.history));
        assert_eq!(adv.generator.history.split("train_d").count(), 3);
    }

    #[test]
    fn history_csv_header() {
        let mut h = History::default();
        let r = EvalReport::from_labels(&[Label::Troll], &[Label::Troll]).unwrap();
        h.push(1, "train", 0.25, &r);
        assert_eq!(h.to_csv(), "epoch,split,loss,accuracy,weighted_f1\n1,train,0.250000,1.000000,1.000000\n");
    }
}
