#![allow(dead_code)]

use aim_core::{Activation, Checkpoint, LayerSpec, ModelSpec, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut StdRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, -1.0, 1.0)).unwrap()
}

/// Random stack of `layers` linear layers with dimensions in `1..=max_dim`.
pub fn random_model(
    rng: &mut StdRng,
    layers: usize,
    max_dim: usize,
    activations: &[Activation],
) -> (ModelSpec, Checkpoint) {
    let mut dims = vec![rng.random_range(1..=max_dim)];
    for _ in 0..layers {
        dims.push(rng.random_range(1..=max_dim));
    }
    let mut specs = Vec::new();
    let mut params = Checkpoint::new();
    for k in 0..layers {
        let act = activations[rng.random_range(0..activations.len())];
        let mut l = LayerSpec::new(format!("layer{k}"), dims[k], dims[k + 1]).with_activation(act);
        if rng.random_bool(0.5) {
            l = l.with_bias();
            params.insert(l.bias_name(), random_tensor(rng, &[dims[k + 1]]));
        }
        params.insert(l.weight_name(), random_tensor(rng, &[dims[k], dims[k + 1]]));
        specs.push(l);
    }
    (ModelSpec::new(specs).unwrap(), params)
}

/// Plain triple-loop forward pass returning the input of every layer,
/// written without the library's runtime.
pub fn naive_layer_inputs(spec: &ModelSpec, params: &Checkpoint, input: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = input.to_vec();
    let mut inputs = Vec::new();
    for l in &spec.layers {
        let w = params.get(&l.weight_name()).unwrap().data();
        let mut y = vec![0.0; l.out_dim];
        for j in 0..l.out_dim {
            let mut s = if l.has_bias {
                params.get(&l.bias_name()).unwrap().data()[j]
            } else {
                0.0
            };
            for i in 0..l.in_dim {
                s += x[i] * w[i * l.out_dim + j];
            }
            y[j] = match l.activation {
                Activation::Relu => s.max(0.0),
                Activation::Tanh => s.tanh(),
                Activation::Identity => s,
            };
        }
        inputs.push(std::mem::replace(&mut x, y));
    }
    (inputs, x)
}

/// Entropy of softmax(logits) via `log Z - E_p[z]` with compensated sums.
pub fn reference_entropy(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let z = neumaier(exps.iter().copied());
    let mean = neumaier(exps.iter().zip(logits).map(|(e, l)| e * (l - m))) / z;
    z.ln() - mean
}

pub fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
