//! Straight-line reference evaluations on nested `Vec<f64>` matrices. Nothing
//! here goes through the tensor library or the graph.

#![allow(dead_code)]

use mflab::fusion::CrossAttention;
use mflab::nn::{Linear, LayerNorm, Mlp, ParamStore, LAYER_NORM_EPS};
use mflab::Tensor;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
    Tensor::from_rows(&rows).unwrap()
}

pub fn from_tensor<T: mflab::Scalar>(t: &Tensor<T>) -> Mat {
    let (m, n) = t.dims2().unwrap();
    let d = t.to_f64_vec();
    (0..m).map(|i| d[i * n..(i + 1) * n].to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// softmax(Q·Kᵀ/√d_k)·V, one query row at a time.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    attention_with_weights(q, k, v).0
}

pub fn attention_with_weights(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let dk = k[0].len() as f64;
    let mut out = Vec::new();
    let mut weights = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let z: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut row = vec![0.0; v[0].len()];
        for (wj, vj) in w.iter().zip(v) {
            for (r, x) in row.iter_mut().zip(vj) {
                *r += wj * x;
            }
        }
        out.push(row);
        weights.push(w);
    }
    (out, weights)
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn param(store: &ParamStore<f64>, id: mflab::nn::ParamId) -> Vec<f64> {
    store.get(id).to_f64_vec()
}

pub fn layer_norm(x: &Mat, ln: &LayerNorm, store: &ParamStore<f64>) -> Mat {
    let gain = param(store, ln.gain);
    let bias = param(store, ln.bias);
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + LAYER_NORM_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

pub fn linear(x: &Mat, l: &Linear, store: &ParamStore<f64>) -> Mat {
    let w = param(store, l.weight);
    let b = param(store, l.bias);
    x.iter()
        .map(|row| {
            (0..l.fan_out)
                .map(|o| b[o] + (0..l.fan_in).map(|i| row[i] * w[i * l.fan_out + o]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Two layers with ReLU between.
pub fn relu_mlp(x: &Mat, m: &Mlp, store: &ParamStore<f64>) -> Mat {
    let h: Mat = linear(x, &m.first, store)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    linear(&h, &m.second, store)
}

/// The four cross attention equations written out one after another.
pub fn cross_attend(q: &Mat, k: &Mat, ca: &CrossAttention, store: &ParamStore<f64>) -> (Mat, Mat) {
    let a = layer_norm(&add(q, &attention(q, k, k)), &ca.ln_a, store);
    let r = layer_norm(&add(&a, &relu_mlp(&a, &ca.ffn_text, store)), &ca.ln_r, store);
    let z = layer_norm(&add(k, &attention(k, q, q)), &ca.ln_z, store);
    let i = layer_norm(&add(&z, &relu_mlp(&z, &ca.ffn_image, store)), &ca.ln_i, store);
    (r, i)
}

/// Whether `point` is a convex combination of `vertices` with weights
/// `w` (non-negative, summing to one) within `tol`.
pub fn in_hull(point: &[f64], vertices: &Mat, w: &[f64], tol: f64) -> bool {
    if w.iter().any(|&x| x < -tol) || (w.iter().sum::<f64>() - 1.0).abs() > tol {
        return false;
    }
    (0..point.len()).all(|c| {
        let lo = vertices.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
        let hi = vertices.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
        let comb: f64 = w.iter().zip(vertices).map(|(a, v)| a * v[c]).sum();
        point[c] >= lo - tol && point[c] <= hi + tol && (comb - point[c]).abs() <= tol
    })
}
