//! A small fully connected denoiser `h_θ(x_t, σ_t)` with hand-written
//! backpropagation.
//!
//! Layout: `[x, fourier(σ)] → 128 → 128 → d`, SiLU activations, linear
//! output. Parameters live in one flat vector:
//! `W1 (H × (d+E)), b1 (H), W2 (H × H), b2 (H), W3 (d × H), b3 (d)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Result};
use crate::rng;

pub const HIDDEN: usize = 128;
pub const FOURIER_FREQS: usize = 8;
pub const EMBED: usize = 2 * FOURIER_FREQS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub dim: usize,
    pub embed: usize,
    pub hidden: [usize; 2],
}

impl Architecture {
    pub fn new(dim: usize) -> Self {
        Self { dim, embed: EMBED, hidden: [HIDDEN, HIDDEN] }
    }

    pub fn input(&self) -> usize {
        self.dim + self.embed
    }

    pub fn param_count(&self) -> usize {
        let [h1, h2] = self.hidden;
        h1 * self.input() + h1 + h2 * h1 + h2 + self.dim * h2 + self.dim
    }

    fn offsets(&self) -> Offsets {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.input();
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + self.dim * h2;
        Offsets { w1, b1, w2, b2, w3, b3 }
    }
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

/// Angular frequencies of the σ embedding, geometric from π to 8√2·π.
pub fn fourier_frequencies() -> [f64; FOURIER_FREQS] {
    std::array::from_fn(|j| std::f64::consts::PI * 2f64.powf(j as f64 / 2.0))
}

pub fn embed_sigma(sigma: f64, out: &mut [f64]) {
    for (j, w) in fourier_frequencies().iter().enumerate() {
        out[2 * j] = (w * sigma).sin();
        out[2 * j + 1] = (w * sigma).cos();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
struct Trace {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    out: Vec<f64>,
}

impl DenoiserNet {
    /// LeCun-normal weights (`std = 1/sqrt(fan_in)`), zero biases.
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return domain("network dimension must be positive");
        }
        let arch = Architecture::new(dim);
        let off = arch.offsets();
        let mut params = vec![0.0; arch.param_count()];
        let mut r = rng::stream(seed, 0);
        let [h1, h2] = arch.hidden;
        for (range, fan_in) in [
            (off.w1..off.b1, arch.input()),
            (off.w2..off.b2, h1),
            (off.w3..off.b3, h2),
        ] {
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[range] {
                *p = dist.sample(&mut r);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if arch.dim == 0 || arch.hidden.contains(&0) || arch.embed != EMBED {
            return domain("unsupported architecture");
        }
        if params.len() != arch.param_count() {
            return domain(format!("expected {} parameters, got {}", arch.param_count(), params.len()));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        self.trace(x, sigma).out
    }

    /// Accumulates `∂(g · h(x, σ))/∂θ` into `grad`, given the upstream
    /// gradient `g = ∂L/∂h`. Returns the forward output.
    pub fn backward(&self, x: &[f64], sigma: f64, upstream: impl FnOnce(&[f64]) -> Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
        let tr = self.trace(x, sigma);
        let g_out = upstream(&tr.out);
        let off = self.arch.offsets();
        let [h1, h2] = self.arch.hidden;
        let n_in = self.arch.input();
        let d = self.arch.dim;
        let p = &self.params;

        // Output layer.
        let mut g_act2 = vec![0.0; h2];
        for o in 0..d {
            let g = g_out[o];
            grad[off.b3 + o] += g;
            let row = off.w3 + o * h2;
            for j in 0..h2 {
                grad[row + j] += g * tr.act2[j];
                g_act2[j] += g * p[row + j];
            }
        }
        // Second hidden layer.
        let mut g_act1 = vec![0.0; h1];
        for j in 0..h2 {
            let g = g_act2[j] * silu_grad(tr.pre2[j]);
            grad[off.b2 + j] += g;
            let row = off.w2 + j * h1;
            for i in 0..h1 {
                grad[row + i] += g * tr.act1[i];
                g_act1[i] += g * p[row + i];
            }
        }
        // First hidden layer.
        for i in 0..h1 {
            let g = g_act1[i] * silu_grad(tr.pre1[i]);
            grad[off.b1 + i] += g;
            let row = off.w1 + i * n_in;
            for k in 0..n_in {
                grad[row + k] += g * tr.input[k];
            }
        }
        tr.out
    }

    /// Forward pass over a row-major `B × d` batch with one `σ` per row.
    pub fn forward_batch(&self, xs: &[f64], sigmas: &[f64]) -> Vec<f64> {
        self.batch_trace(xs, sigmas).out_rows()
    }

    /// Batched [`Self::backward`]: `upstream` maps the row-major `B × d`
    /// outputs to row-major gradients of the summed loss.
    pub fn backward_batch(
        &self,
        xs: &[f64],
        sigmas: &[f64],
        upstream: impl FnOnce(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let tr = self.batch_trace(xs, sigmas);
        let out = tr.out_rows();
        let g_rows = upstream(&out);
        let off = self.arch.offsets();
        let [h1, h2] = self.arch.hidden;
        let n_in = self.arch.input();
        let d = self.arch.dim;
        let b = sigmas.len();
        let w = &tr.weights;

        // Columns are samples throughout.
        let g_out = DMatrix::from_column_slice(d, b, &g_rows);
        add_outer(&mut grad[off.w3..off.b3], &tr.act2, &g_out);
        add_row_sums(&mut grad[off.b3..], &g_out);
        let mut g2 = w.w3.tr_mul(&g_out);
        g2.zip_apply(&tr.pre2, |g, z| *g *= silu_grad(z));
        add_outer(&mut grad[off.w2..off.b2], &tr.act1, &g2);
        add_row_sums(&mut grad[off.b2..off.w3], &g2);
        let mut g1 = w.w2.tr_mul(&g2);
        g1.zip_apply(&tr.pre1, |g, z| *g *= silu_grad(z));
        add_outer(&mut grad[off.w1..off.b1], &tr.input, &g1);
        add_row_sums(&mut grad[off.b1..off.w2], &g1);
        debug_assert_eq!((h1, h2, n_in), (g1.nrows(), g2.nrows(), tr.input.nrows()));
        out
    }

    fn weights(&self) -> Weights {
        let off = self.arch.offsets();
        let [h1, h2] = self.arch.hidden;
        let p = &self.params;
        Weights {
            w1: DMatrix::from_row_slice(h1, self.arch.input(), &p[off.w1..off.b1]),
            w2: DMatrix::from_row_slice(h2, h1, &p[off.w2..off.b2]),
            w3: DMatrix::from_row_slice(self.arch.dim, h2, &p[off.w3..off.b3]),
        }
    }

    fn batch_trace(&self, xs: &[f64], sigmas: &[f64]) -> BatchTrace {
        let off = self.arch.offsets();
        let d = self.arch.dim;
        let n_in = self.arch.input();
        let b = sigmas.len();
        assert_eq!(xs.len(), b * d, "batch shape mismatch");
        let p = &self.params;
        let w = self.weights();
        let mut input = DMatrix::zeros(n_in, b);
        for (c, (x, &s)) in xs.chunks_exact(d).zip(sigmas).enumerate() {
            let mut col = input.column_mut(c);
            let col = col.as_mut_slice();
            col[..d].copy_from_slice(x);
            embed_sigma(s, &mut col[d..]);
        }
        let pre1 = with_bias(&w.w1 * &input, &p[off.b1..off.w2]);
        let act1 = pre1.map(silu);
        let pre2 = with_bias(&w.w2 * &act1, &p[off.b2..off.w3]);
        let act2 = pre2.map(silu);
        let out = with_bias(&w.w3 * &act2, &p[off.b3..]);
        BatchTrace { weights: w, input, pre1, act1, pre2, act2, out }
    }

    fn trace(&self, x: &[f64], sigma: f64) -> Trace {
        let off = self.arch.offsets();
        let [h1, h2] = self.arch.hidden;
        let n_in = self.arch.input();
        let d = self.arch.dim;
        let p = &self.params;

        let mut input = vec![0.0; n_in];
        input[..d].copy_from_slice(x);
        embed_sigma(sigma, &mut input[d..]);

        let pre1 = affine(&p[off.w1..off.b1], &p[off.b1..off.w2], &input, h1);
        let act1: Vec<f64> = pre1.iter().map(|&v| silu(v)).collect();
        let pre2 = affine(&p[off.w2..off.b2], &p[off.b2..off.w3], &act1, h2);
        let act2: Vec<f64> = pre2.iter().map(|&v| silu(v)).collect();
        let out = affine(&p[off.w3..off.b3], &p[off.b3..], &act2, d);
        Trace { input, pre1, act1, pre2, act2, out }
    }
}

struct Weights {
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    w3: DMatrix<f64>,
}

struct BatchTrace {
    weights: Weights,
    input: DMatrix<f64>,
    pre1: DMatrix<f64>,
    act1: DMatrix<f64>,
    pre2: DMatrix<f64>,
    act2: DMatrix<f64>,
    out: DMatrix<f64>,
}

impl BatchTrace {
    /// Column-major `d × B` is row-major `B × d`.
    fn out_rows(&self) -> Vec<f64> {
        self.out.as_slice().to_vec()
    }
}

fn with_bias(mut m: DMatrix<f64>, bias: &[f64]) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        for (v, b) in col.iter_mut().zip(bias) {
            *v += b;
        }
    }
    m
}

/// Adds `g · aᵀ` (rows × cols, row-major) where columns of `a` and `g` are samples.
fn add_outer(dst: &mut [f64], a: &DMatrix<f64>, g: &DMatrix<f64>) {
    // Row-major (g aᵀ) is column-major (a gᵀ).
    let prod = a * g.transpose();
    for (d, v) in dst.iter_mut().zip(prod.as_slice()) {
        *d += v;
    }
}

fn add_row_sums(dst: &mut [f64], g: &DMatrix<f64>) {
    for col in g.column_iter() {
        for (d, v) in dst.iter_mut().zip(col.iter()) {
            *d += v;
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

fn silu_grad(v: f64) -> f64 {
    let s = sigmoid(v);
    s * (1.0 + v * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layout() {
        let a = Architecture::new(2);
        assert_eq!(a.param_count(), 18 * 128 + 128 + 128 * 128 + 128 + 2 * 128 + 2);
        let net = DenoiserNet::init(2, 0).unwrap();
        assert_eq!(net.params().len(), a.param_count());
        assert!(DenoiserNet::from_params(a, vec![0.0; 3]).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let net = DenoiserNet::init(3, 42).unwrap();
        let a = net.forward(&[0.1, -2.0, 5.0], 0.3);
        let b = net.forward(&[0.1, -2.0, 5.0], 0.3);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(DenoiserNet::init(3, 42).unwrap(), net);
    }

    #[test]
    fn batch_passes_match_single_sample() {
        let net = DenoiserNet::init(2, 5).unwrap();
        let xs = [0.3, -1.2, 2.0, 0.4, -0.7, 0.0];
        let sig = [0.1, 0.5, 0.9];
        let out = net.forward_batch(&xs, &sig);
        let mut g_single = vec![0.0; net.params().len()];
        for i in 0..3 {
            let o = net.backward(&xs[2 * i..2 * i + 2], sig[i], |h| h.iter().map(|v| 2.0 * v).collect(), &mut g_single);
            for k in 0..2 {
                assert!((o[k] - out[2 * i + k]).abs() < 1e-12);
            }
        }
        let mut g_batch = vec![0.0; net.params().len()];
        net.backward_batch(&xs, &sig, |h| h.iter().map(|v| 2.0 * v).collect(), &mut g_batch);
        for (a, b) in g_single.iter().zip(&g_batch) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for v in [-4.0, -0.5, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (silu(v + h) - silu(v - h)) / (2.0 * h);
            assert!((silu_grad(v) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let net = DenoiserNet::init(2, 7).unwrap();
        let x = [0.3, -0.8];
        let sigma = 0.45;
        let mut grad = vec![0.0; net.params().len()];
        // Scalar objective: first output coordinate.
        net.backward(&x, sigma, |_| vec![1.0, 0.0], &mut grad);
        let mut probe = net.clone();
        for idx in [0, 17, 2304, 2400, 2500, 10_000, 18_945, 19_000, 19_200, 19_201] {
            let orig = probe.params()[idx];
            let h = 1e-6;
            probe.params_mut()[idx] = orig + h;
            let up = probe.forward(&x, sigma)[0];
            probe.params_mut()[idx] = orig - h;
            let dn = probe.forward(&x, sigma)[0];
            probe.params_mut()[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((grad[idx] - fd).abs() <= 1e-6 * fd.abs().max(1e-4), "param {idx}: {} vs {fd}", grad[idx]);
        }
    }
}
