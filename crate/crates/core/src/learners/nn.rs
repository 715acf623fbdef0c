//! Two-hidden-layer ReLU perceptron over a flat parameter slice.
//!
//! Parameters live in one `Vec<f64>` so the optimizer, checkpoints and
//! finite-difference checks all see the same layout:
//! `w1 (in x h), b1 (h), w2 (h x h), b2 (h), w3 (h x out), b3 (out)`.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpan {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: usize,
    pub b: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    pub fn layers(&self) -> [LayerSpan; 3] {
        let dims = [
            (self.input, self.hidden),
            (self.hidden, self.hidden),
            (self.hidden, self.output),
        ];
        let mut off = 0;
        dims.map(|(fan_in, fan_out)| {
            let w = off;
            let b = w + fan_in * fan_out;
            off = b + fan_out;
            LayerSpan {
                fan_in,
                fan_out,
                w,
                b,
            }
        })
    }

    pub fn len(&self) -> usize {
        let l = self.layers()[2];
        l.b + l.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LayerSpan {
    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_in, self.fan_out), &p[self.w..self.b]).expect("layer layout")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.b..self.b + self.fan_out])
    }

    fn weights_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.fan_in, self.fan_out), &mut p[self.w..self.b])
            .expect("layer layout")
    }

    fn bias_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.b..self.b + self.fan_out])
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
}

fn dense(x: &ArrayView2<f64>, layer: &LayerSpan, p: &[f64]) -> Array2<f64> {
    let mut z = x.dot(&layer.weights(p));
    z += &layer.bias(p);
    z
}

fn relu_in_place(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Batched forward pass, rows are samples.
pub fn forward(shape: &MlpShape, params: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
    let [l1, l2, l3] = shape.layers();
    let mut h1 = dense(&x, &l1, params);
    relu_in_place(&mut h1);
    let mut h2 = dense(&h1.view(), &l2, params);
    relu_in_place(&mut h2);
    let out = dense(&h2.view(), &l3, params);
    (
        out,
        MlpCache {
            x: x.to_owned(),
            h1,
            h2,
        },
    )
}

pub fn forward_only(shape: &MlpShape, params: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
    let [l1, l2, l3] = shape.layers();
    let mut h1 = dense(&x, &l1, params);
    relu_in_place(&mut h1);
    let mut h2 = dense(&h1.view(), &l2, params);
    relu_in_place(&mut h2);
    dense(&h2.view(), &l3, params)
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d out`.
pub fn backward(
    shape: &MlpShape,
    params: &[f64],
    cache: &MlpCache,
    d_out: ArrayView2<f64>,
    grad: &mut [f64],
) {
    let [l1, l2, l3] = shape.layers();

    l3.weights_mut(grad).scaled_add(1.0, &cache.h2.t().dot(&d_out));
    l3.bias_mut(grad).scaled_add(1.0, &d_out.sum_axis(Axis(0)));
    let mut d_h2 = d_out.dot(&l3.weights(params).t());
    d_h2.zip_mut_with(&cache.h2, |d, &h| {
        if h <= 0.0 {
            *d = 0.0
        }
    });

    l2.weights_mut(grad).scaled_add(1.0, &cache.h1.t().dot(&d_h2));
    l2.bias_mut(grad).scaled_add(1.0, &d_h2.sum_axis(Axis(0)));
    let mut d_h1 = d_h2.dot(&l2.weights(params).t());
    d_h1.zip_mut_with(&cache.h1, |d, &h| {
        if h <= 0.0 {
            *d = 0.0
        }
    });

    l1.weights_mut(grad).scaled_add(1.0, &cache.x.t().dot(&d_h1));
    l1.bias_mut(grad).scaled_add(1.0, &d_h1.sum_axis(Axis(0)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-implementation with explicit loops.
    fn oracle_forward(shape: &MlpShape, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        for (k, l) in shape.layers().iter().enumerate() {
            let mut next = vec![0.0; l.fan_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = p[l.b + o];
                for (i, a) in act.iter().enumerate() {
                    s += a * p[l.w + i * l.fan_out + o];
                }
                *slot = if k < 2 { s.max(0.0) } else { s };
            }
            act = next;
        }
        act
    }

    #[test]
    fn matches_loop_oracle() {
        let shape = MlpShape::new(5, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xa = ArrayView2::from_shape((2, 5), &x).unwrap();
        let out = forward_only(&shape, &p, xa);
        for r in 0..2 {
            let o = oracle_forward(&shape, &p, &x[r * 5..r * 5 + 5]);
            for c in 0..3 {
                assert!((out[[r, c]] - o[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let shape = MlpShape::new(4, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xa = ArrayView2::from_shape((3, 4), &x).unwrap();
        // loss = sum(out * c) for fixed c
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ca = ArrayView2::from_shape((3, 2), &c).unwrap();
        let loss = |p: &[f64]| (forward_only(&shape, p, xa) * ca).sum();
        let (_, cache) = forward(&shape, &p, xa);
        let mut g = vec![0.0; shape.len()];
        backward(&shape, &p, &cache, ca, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let up = loss(&pp);
            pp[i] -= 2.0 * h;
            let dn = loss(&pp);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 + 1e-5 * fd.abs(), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn layout_length() {
        let s = MlpShape::new(10, 64, 2);
        assert_eq!(s.len(), 10 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
    }
}
