//! Scaled dot-product attention, `softmax(Q·Kᵀ / sqrt(d_k))·V`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pre-softmax score assigned to masked keys.
pub const MASKED_SCORE: f64 = -1e9;

/// Additive key mask: 0 for attendable keys, [`MASKED_SCORE`] otherwise.
pub fn key_mask<T: Scalar>(keep: &[bool]) -> Result<Tensor<T>> {
    Tensor::vector(
        keep.iter()
            .map(|&k| if k { T::zero() } else { T::of(MASKED_SCORE) })
            .collect(),
    )
}

fn check_shapes<T: Scalar>(g: &Graph<T>, q: Var, k: Var, v: Var) -> Result<(usize, usize, usize)> {
    let (_, dq) = g.value(q).dims2()?;
    let (n, dk) = g.value(k).dims2()?;
    let (nv, dv) = g.value(v).dims2()?;
    if dq != dk || n != nv {
        return Err(Error::shape(format!(
            "attention: Q {:?}, K {:?}, V {:?} are incompatible",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    Ok((n, dk, dv))
}

/// Attention weights `softmax(Q·Kᵀ / sqrt(d_k) + mask)`, one row per query.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let (_, dk) = g.value(k).dims2()?;
    let scores = g.matmul_t(q, k, false, true)?;
    let scores = g.scale(scores, T::one() / T::of(dk as f64).sqrt())?;
    let scores = match mask {
        Some(m) => g.add_row(scores, m)?,
        None => scores,
    };
    g.softmax_rows(scores)
}

/// Single-head attention. Output rows are convex combinations of `v`'s rows.
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<Var> {
    check_shapes(g, q, k, v)?;
    let w = attention_weights(g, q, k, mask)?;
    g.matmul(w, v)
}

/// Runs [`attention`] independently on `n_heads` equal column blocks of
/// `q`, `k` and `v` and concatenates the head outputs. Returns the output and
/// each head's weight matrix.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let (_, dk, dv) = check_shapes(g, q, k, v)?;
    if n_heads == 0 || dk % n_heads != 0 || dv % n_heads != 0 {
        return Err(Error::config(format!(
            "{n_heads} heads do not divide widths {dk}/{dv}"
        )));
    }
    if n_heads == 1 {
        let w = attention_weights(g, q, k, mask)?;
        return Ok((g.matmul(w, v)?, vec![w]));
    }
    let (hk, hv) = (dk / n_heads, dv / n_heads);
    let mut outs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * hk, (h + 1) * hk)?;
        let kh = g.slice_cols(k, h * hk, (h + 1) * hk)?;
        let vh = g.slice_cols(v, h * hv, (h + 1) * hv)?;
        let w = attention_weights(g, qh, kh, mask)?;
        outs.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    Ok((g.concat(&outs, 1)?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(q: &[&[f64]], k: &[&[f64]], v: &[&[f64]]) -> Tensor<f64> {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(q).unwrap());
        let k = g.constant(Tensor::from_rows(k).unwrap());
        let v = g.constant(Tensor::from_rows(v).unwrap());
        let out = attention(&mut g, q, k, v, None).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn single_key_returns_its_value() {
        let out = run(&[&[0.3, -2.0], &[5.0, 1.0]], &[&[1.0, 1.0]], &[&[7.0, -3.0, 2.0]]);
        assert_eq!(out.data(), &[7.0, -3.0, 2.0, 7.0, -3.0, 2.0]);
    }

    #[test]
    fn identical_values_pass_through() {
        let out = run(&[&[0.3, -2.0]], &[&[1.0, 0.0], &[0.0, 4.0], &[2.0, 2.0]], &[&[1.5, 2.5], &[1.5, 2.5], &[1.5, 2.5]]);
        for (a, b) in out.data().iter().zip([1.5, 2.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_key_case() {
        // scores (1/sqrt2, 0) → weights (e^a, 1)/(e^a + 1) with a = 1/sqrt2.
        let out = run(&[&[1.0, 0.0]], &[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((out.data()[0] - 0.6698).abs() < 1e-4);
        assert!((out.data()[1] - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros(&[1, 2]).unwrap());
        let k = g.constant(Tensor::zeros(&[3, 3]).unwrap());
        let v = g.constant(Tensor::zeros(&[3, 2]).unwrap());
        assert!(matches!(attention(&mut g, q, k, v, None), Err(Error::Shape(_))));
        let k = g.constant(Tensor::zeros(&[3, 2]).unwrap());
        let v = g.constant(Tensor::zeros(&[2, 2]).unwrap());
        assert!(matches!(attention(&mut g, q, k, v, None), Err(Error::Shape(_))));
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut g = Graph::<f32>::new();
        let q = g.constant(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[9.0, 9.0]]).unwrap());
        let m = g.constant(key_mask(&[true, false]).unwrap());
        let w = attention_weights(&mut g, q, k, Some(m)).unwrap();
        assert_eq!(g.value(w).data(), &[1.0, 0.0]);
    }
}
