//! Central-difference gradient verification at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Activation, Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coordinates: usize,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// Builds a scalar loss from leaves bound to the supplied points.
pub trait LossFn: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> LossFn for F {}

fn evaluate(f: &impl LossFn, point: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).data()[0])
}

/// Compares reverse-mode gradients of `f` at `point` with central differences
/// over every coordinate of every input.
pub fn grad_check(
    name: &str,
    f: impl LossFn,
    point: &[Tensor<f64>],
    tol: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(point)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| t.zeros_like()))
        .collect();

    let mut max_rel_err = 0.0f64;
    let mut coordinates = 0;
    let mut shifted = point.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        for k in 0..grads.numel() {
            let orig = point[which].data()[k];
            shifted[which].data_mut()[k] = orig + STEP;
            let up = evaluate(&f, &shifted)?;
            shifted[which].data_mut()[k] = orig - STEP;
            let down = evaluate(&f, &shifted)?;
            shifted[which].data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * STEP);
            if !numeric.is_finite() {
                return Ok(GradCheckReport {
                    name: name.to_string(),
                    max_rel_err: f64::INFINITY,
                    coordinates,
                    pass: false,
                    diagnostic: Some(format!(
                        "non-finite finite-difference estimate at input {which}, coordinate {k}"
                    )),
                });
            }
            let exact = grads.data()[k];
            let denom = exact.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            max_rel_err = max_rel_err.max((exact - numeric).abs() / denom);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err,
        coordinates,
        pass: max_rel_err <= tol,
        diagnostic: None,
    })
}

/// `sum(out ⊙ weights)`: reduces any output to a scalar with non-uniform
/// sensitivities.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

pub(crate) fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("valid random shape")
}

type Case = (&'static str, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>, Vec<Tensor<f64>>);

/// Every differentiable primitive, each reduced to a scalar through a random
/// projection, evaluated at a seeded random point.
pub fn op_suite(seed: u64, tol: f64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<Case> = Vec::new();

    macro_rules! case {
        ($name:expr, [$($shape:expr),*], $out_shape:expr, |$g:ident, $v:ident| $body:expr) => {{
            let proj = random_tensor(&mut rng, &$out_shape, -1.0, 1.0);
            let inputs = vec![$(random_tensor(&mut rng, &$shape, -1.0, 1.0)),*];
            cases.push((
                $name,
                Box::new(move |$g: &mut Graph<f64>, $v: &[Var]| {
                    let out = $body?;
                    weighted_sum($g, out, &proj)
                }),
                inputs,
            ));
        }};
    }

    case!("matmul", [[3, 3], [3, 3]], [3, 3], |g, v| g.matmul(v[0], v[1]));
    case!("matmul_a_bt", [[2, 4], [3, 4]], [2, 3], |g, v| g.matmul_t(v[0], v[1], false, true));
    case!("matmul_at_b", [[4, 2], [4, 3]], [2, 3], |g, v| g.matmul_t(v[0], v[1], true, false));
    case!("matmul_at_bt", [[4, 2], [3, 4]], [2, 3], |g, v| g.matmul_t(v[0], v[1], true, true));
    case!("add", [[2, 3], [2, 3]], [2, 3], |g, v| g.add(v[0], v[1]));
    case!("sub", [[2, 3], [2, 3]], [2, 3], |g, v| g.sub(v[0], v[1]));
    case!("mul", [[2, 3], [2, 3]], [2, 3], |g, v| g.mul(v[0], v[1]));
    case!("add_row", [[3, 4], [4]], [3, 4], |g, v| g.add_row(v[0], v[1]));
    case!("scale", [[2, 2]], [2, 2], |g, v| g.scale(v[0], -1.7));
    case!("softmax_rows", [[3, 4]], [3, 4], |g, v| g.softmax_rows(v[0]));
    case!("layer_norm", [[3, 5], [5], [5]], [3, 5], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    case!("relu", [[3, 4]], [3, 4], |g, v| g.activation(v[0], Activation::Relu));
    case!("gelu", [[3, 4]], [3, 4], |g, v| g.activation(v[0], Activation::Gelu));
    case!("sigmoid", [[3, 4]], [3, 4], |g, v| g.activation(v[0], Activation::Sigmoid));
    case!("concat_rows", [[2, 3], [1, 3]], [3, 3], |g, v| g.concat(&[v[0], v[1]], 0));
    case!("concat_cols", [[2, 3], [2, 2]], [2, 5], |g, v| g.concat(&[v[0], v[1]], 1));
    case!("concat_vectors", [[3], [2]], [5], |g, v| g.concat(&[v[0], v[1]], 0));
    case!("split", [[3, 4]], [3, 1], |g, v| {
        let (_, right) = g.split(v[0], 1, 3)?;
        Ok::<Var, crate::Error>(right)
    });
    case!("slice_rows", [[4, 3]], [2, 3], |g, v| g.slice_rows(v[0], 1, 3));
    case!("transpose", [[2, 3]], [3, 2], |g, v| g.transpose(v[0]));
    case!("mean_pool_rows", [[4, 3]], [3], |g, v| g.mean_pool_rows(v[0]));
    case!("embedding_lookup", [[5, 3]], [4, 3], |g, v| g.embedding_lookup(v[0], &[4, 0, 4, 2]));
    case!("reshape", [[2, 3]], [6], |g, v| g.reshape(v[0], &[6]));
    case!("dropout", [[2, 3]], [2, 3], |g, v| {
        g.dropout(v[0], &[true, false, true, true, false, true], 0.25)
    });

    let probs = random_tensor(&mut rng, &[4], 0.1, 0.9);
    cases.push((
        "bce_loss",
        Box::new(|g: &mut Graph<f64>, v: &[Var]| g.bce_loss(v[0], &[1.0, 0.0, 0.0, 1.0])),
        vec![probs],
    ));
    let point = random_tensor(&mut rng, &[2, 2], -1.0, 1.0);
    cases.push((
        "constant",
        Box::new(|g: &mut Graph<f64>, _: &[Var]| {
            let c = g.constant(Tensor::scalar(3.0));
            g.sum(c)
        }),
        vec![point],
    ));

    cases
        .into_iter()
        .map(|(name, f, point)| grad_check(name, f, &point, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_op_passes() {
        for report in op_suite(7, 1e-4).unwrap() {
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let reports = op_suite(1, 1e-4).unwrap();
        let constant = reports.iter().find(|r| r.name == "constant").unwrap();
        assert_eq!(constant.max_rel_err, 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu has zero gradient left of the origin; evaluating exactly at a
        // kink is where finite differences and the analytic rule disagree.
        let point = vec![Tensor::vector(vec![0.0]).unwrap()];
        let report = grad_check(
            "relu_kink",
            |g: &mut Graph<f64>, v: &[Var]| {
                let r = g.relu(v[0])?;
                g.sum(r)
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass);
    }
}
