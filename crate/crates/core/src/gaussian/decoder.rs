//! Per-pixel MLP decoder with tanh hidden layers and a linear output layer.
//!
//! Rows are processed in fixed-size chunks so that parallel evaluation and the
//! reduction of weight gradients do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

const ROW_CHUNK: usize = 256;

/// Scale applied to the initial output layer so that a fresh network starts
/// close to the template surface with mid-grey colors.
const OUTPUT_INIT_GAIN: f64 = 0.1;

/// Fully connected layer. `weights` is `inputs × outputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    #[inline]
    fn forward_row(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(&self.bias);
        for (k, &xk) in x.iter().enumerate() {
            let w = &self.weights[k * self.outputs..(k + 1) * self.outputs];
            for (yo, &wo) in y.iter_mut().zip(w) {
                *yo += xk * wo;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet<T> {
    pub layers: Vec<Dense<T>>,
}

/// Gradients shaped like the layers of a [`DecoderNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderGradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

/// Activations of one forward pass, kept for [`DecoderNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    rows: usize,
    /// Per chunk, the input followed by each layer's output.
    chunks: Vec<Vec<Vec<T>>>,
}

impl<T> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(invalid(format!("decoder widths must list at least two positive sizes, got {widths:?}")));
    }
    Ok(())
}

impl<T: Real> DecoderNet<T> {
    /// All weights and biases zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(DecoderNet { layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() })
    }

    /// Glorot-uniform weights and zero biases, the last layer scaled down.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let mut limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            if l == last {
                limit *= OUTPUT_INIT_GAIN;
            }
            for w in &mut layer.weights {
                *w = lit(rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zero_gradients(&self) -> DecoderGradients<T> {
        DecoderGradients {
            weights: self.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    fn forward_chunk(&self, input: &[T]) -> Vec<Vec<T>> {
        let rows = input.len() / self.input_width();
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &acts[l];
            let mut y = vec![T::zero(); rows * layer.outputs];
            for (xr, yr) in x.chunks_exact(layer.inputs).zip(y.chunks_exact_mut(layer.outputs)) {
                layer.forward_row(xr, yr);
                if l != last {
                    for v in yr.iter_mut() {
                        *v = v.tanh();
                    }
                }
            }
            acts.push(y);
        }
        acts
    }

    /// Evaluates `rows` input rows (row-major, `input_width` each).
    pub fn forward(&self, input: &[T], rows: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
        let width = self.input_width();
        if input.len() != rows * width {
            return Err(invalid(format!("decoder input has {} values, expected {rows}×{width}", input.len())));
        }
        let chunks: Vec<Vec<Vec<T>>> = input.par_chunks(ROW_CHUNK * width).map(|c| self.forward_chunk(c)).collect();
        let mut out = Vec::with_capacity(rows * self.output_width());
        for c in &chunks {
            out.extend_from_slice(c.last().expect("layers"));
        }
        Ok((out, ForwardCache { rows, chunks }))
    }

    /// Output only.
    pub fn evaluate(&self, input: &[T], rows: usize) -> Result<Vec<T>> {
        Ok(self.forward(input, rows)?.0)
    }

    fn backward_chunk(&self, acts: &[Vec<T>], d_out: &[T]) -> (DecoderGradients<T>, Vec<T>) {
        let mut grads = self.zero_gradients();
        let last = self.layers.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= T::one() - *a * *a;
                }
            }
            let x = &acts[l];
            let mut d_x = vec![T::zero(); x.len()];
            let (gw, gb) = (&mut grads.weights[l], &mut grads.bias[l]);
            for ((xr, dr), dxr) in x.chunks_exact(layer.inputs).zip(delta.chunks_exact(layer.outputs)).zip(d_x.chunks_exact_mut(layer.inputs)) {
                for (b, d) in gb.iter_mut().zip(dr) {
                    *b += *d;
                }
                for (k, (&xk, dxk)) in xr.iter().zip(dxr.iter_mut()).enumerate() {
                    let w = &layer.weights[k * layer.outputs..(k + 1) * layer.outputs];
                    let g = &mut gw[k * layer.outputs..(k + 1) * layer.outputs];
                    let mut acc = T::zero();
                    for ((gv, &wv), &dv) in g.iter_mut().zip(w).zip(dr) {
                        *gv += xk * dv;
                        acc += wv * dv;
                    }
                    *dxk = acc;
                }
            }
            delta = d_x;
        }
        (grads, delta)
    }

    /// Reverse pass. Returns parameter gradients and the gradient with respect
    /// to the input rows.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[T]) -> Result<(DecoderGradients<T>, Vec<T>)> {
        let ow = self.output_width();
        if d_out.len() != cache.rows * ow {
            return Err(invalid("output gradient does not match the cached forward pass"));
        }
        let parts: Vec<(DecoderGradients<T>, Vec<T>)> =
            cache.chunks.par_iter().zip(d_out.par_chunks(ROW_CHUNK * ow)).map(|(acts, d)| self.backward_chunk(acts, d)).collect();
        let mut total = self.zero_gradients();
        let mut d_in = Vec::with_capacity(cache.rows * self.input_width());
        for (g, d) in parts {
            for (t, p) in total.weights.iter_mut().chain(total.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)) {
                for (a, b) in t.iter_mut().zip(p) {
                    *a += *b;
                }
            }
            d_in.extend(d);
        }
        Ok((total, d_in))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = DecoderNet::<f64>::zeros(&[5, 8, 7]).unwrap();
        let out = net.evaluate(&[0.3; 10], 2).unwrap();
        assert_eq!(out, vec![0.0; 14]);
    }

    #[test]
    fn single_layer_matches_hand_evaluation() {
        let mut net = DecoderNet::<f64>::zeros(&[2, 3]).unwrap();
        net.layers[0].weights = vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0];
        net.layers[0].bias = vec![0.5, 0.0, 0.25];
        let out = net.evaluate(&[3.0, 4.0], 1).unwrap();
        let want = [3.5, 4.0, 6.0 - 4.0 + 0.25];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_widths_and_inputs() {
        assert!(DecoderNet::<f64>::zeros(&[4]).is_err());
        assert!(DecoderNet::<f64>::zeros(&[4, 0, 2]).is_err());
        let net = DecoderNet::<f64>::zeros(&[3, 2]).unwrap();
        assert!(net.forward(&[0.0; 5], 2).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = DecoderNet::<f64>::random(&[4, 6, 5, 3], 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = 300;
        let input: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..rows * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &DecoderNet<f64>, x: &[f64]| -> f64 { net.evaluate(x, rows).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let (_, cache) = net.forward(&input, rows).unwrap();
        let (g, d_in) = net.backward(&cache, &up).unwrap();
        let h = 1e-6;
        for l in 0..3 {
            for i in [0, net.layers[l].weights.len() / 2, net.layers[l].weights.len() - 1] {
                let mut p = net.clone();
                let mut m = net.clone();
                p.layers[l].weights[i] += h;
                m.layers[l].weights[i] -= h;
                let fd = (loss(&p, &input) - loss(&m, &input)) / (2.0 * h);
                assert!((fd - g.weights[l][i]).abs() < 1e-6 * (1.0 + fd.abs()), "w[{l}][{i}]");
            }
            let mut p = net.clone();
            let mut m = net.clone();
            p.layers[l].bias[1] += h;
            m.layers[l].bias[1] -= h;
            let fd = (loss(&p, &input) - loss(&m, &input)) / (2.0 * h);
            assert!((fd - g.bias[l][1]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        for i in [0, 7, rows * 4 - 1] {
            let mut xp = input.clone();
            let mut xm = input.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - d_in[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn chunked_evaluation_is_row_independent() {
        let net = DecoderNet::<f64>::random(&[3, 4, 2], 5).unwrap();
        let rows = ROW_CHUNK * 2 + 17;
        let input: Vec<f64> = (0..rows * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let all = net.evaluate(&input, rows).unwrap();
        let last = net.evaluate(&input[(rows - 1) * 3..], 1).unwrap();
        assert_eq!(&all[(rows - 1) * 2..], &last[..]);
    }
}
