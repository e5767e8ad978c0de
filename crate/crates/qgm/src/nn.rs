//! Tiny multilayer perceptrons with explicit reverse-mode gradients, and
//! an Adam optimizer.
//!
//! The decoders in this crate are small enough (two hidden layers of 32)
//! that a hand-written forward/backward over flat parameter vectors beats
//! any general autodiff machinery while staying easy to verify with
//! finite differences (see the gradient-check tests here and in `train`).

use rand::Rng;

/// Activation applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// Raw output (SDF head).
    None,
    /// Elementwise sigmoid (color head); outputs in (0, 1).
    Sigmoid,
}

/// Fully connected network with ReLU hidden activations. Parameters are
/// stored flat as `[w0, b0, w1, b1, ...]` with each `w` row-major
/// `(out, in)`, so optimizer state and checkpoints treat the MLP as one
/// parameter vector.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    pub params: Vec<f64>,
    output_activation: OutputActivation,
    /// (weight offset, bias offset) per layer.
    offsets: Vec<(usize, usize)>,
}

/// Post-activation values of every layer from one forward pass; reusable
/// across samples.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Scratch for backward.
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    pub fn new(dims: Vec<usize>, output_activation: OutputActivation) -> Self {
        assert!(dims.len() >= 2);
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let w = dims[l] * dims[l + 1];
            offsets.push((off, off + w));
            off += w + dims[l + 1];
        }
        Mlp { params: vec![0.0; off], dims, output_activation, offsets }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    /// Xavier-uniform init for all layers except the last, which is zeroed
    /// so the network starts as the exact zero function (identity residual,
    /// sigmoid(0) = 0.5 color).
    pub fn init_xavier(&mut self, rng: &mut impl Rng) {
        let n_layers = self.dims.len() - 1;
        for l in 0..n_layers {
            let (w_off, b_off) = self.offsets[l];
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for i in 0..fan_in * fan_out {
                self.params[w_off + i] = if l + 1 == n_layers {
                    0.0
                } else {
                    (rng.gen::<f64>() * 2.0 - 1.0) * bound
                };
            }
            for i in 0..fan_out {
                self.params[b_off + i] = 0.0;
            }
        }
    }

    /// Forward pass recording activations; returns the output slice.
    pub fn forward_tape<'t>(&self, input: &[f64], tape: &'t mut MlpTape) -> &'t [f64] {
        assert_eq!(input.len(), self.dims[0]);
        let n_layers = self.dims.len() - 1;
        if tape.acts.len() != self.dims.len() {
            tape.acts = self.dims.iter().map(|&d| vec![0.0; d]).collect();
        }
        tape.acts[0].copy_from_slice(input);
        for l in 0..n_layers {
            let (w_off, b_off) = self.offsets[l];
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let (lo, hi) = tape.acts.split_at_mut(l + 1);
            let x = &lo[l];
            let out = &mut hi[0];
            let last = l + 1 == n_layers;
            for j in 0..dout {
                let row = &self.params[w_off + j * din..w_off + (j + 1) * din];
                let mut acc = self.params[b_off + j];
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                out[j] = if last {
                    match self.output_activation {
                        OutputActivation::None => acc,
                        OutputActivation::Sigmoid => sigmoid(acc),
                    }
                } else {
                    acc.max(0.0)
                };
            }
        }
        tape.acts.last().unwrap()
    }

    /// Backward pass from `d_output` (gradient w.r.t. the post-activation
    /// output). Accumulates parameter gradients into `grad_params` and, if
    /// provided, writes the input gradient into `d_input`.
    pub fn backward_tape(
        &self,
        tape: &mut MlpTape,
        d_output: &[f64],
        grad_params: &mut [f64],
        mut d_input: Option<&mut [f64]>,
    ) {
        let n_layers = self.dims.len() - 1;
        assert_eq!(d_output.len(), self.output_dim());
        assert_eq!(grad_params.len(), self.params.len());
        tape.delta.clear();
        tape.delta.extend_from_slice(d_output);
        // Chain through the output activation.
        match self.output_activation {
            OutputActivation::None => {}
            OutputActivation::Sigmoid => {
                let out = tape.acts.last().unwrap();
                for (d, &s) in tape.delta.iter_mut().zip(out.iter()) {
                    *d *= s * (1.0 - s);
                }
            }
        }
        for l in (0..n_layers).rev() {
            let (w_off, b_off) = self.offsets[l];
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let x = &tape.acts[l];
            tape.delta_prev.clear();
            tape.delta_prev.resize(din, 0.0);
            for j in 0..dout {
                let dj = tape.delta[j];
                if dj == 0.0 {
                    continue;
                }
                grad_params[b_off + j] += dj;
                let row = &self.params[w_off + j * din..w_off + (j + 1) * din];
                let grow = &mut grad_params[w_off + j * din..w_off + (j + 1) * din];
                for i in 0..din {
                    grow[i] += dj * x[i];
                    tape.delta_prev[i] += dj * row[i];
                }
            }
            if l > 0 {
                // ReLU mask of the previous layer's activation.
                for (d, &a) in tape.delta_prev.iter_mut().zip(x.iter()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut tape.delta, &mut tape.delta_prev);
            } else if let Some(di) = d_input.as_deref_mut() {
                di.copy_from_slice(&tape.delta_prev);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First and second moment accumulators for one parameter group.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Extends moment buffers with zeros when the parameter group grows
    /// (new octree vertices join mid-run).
    pub fn ensure_len(&mut self, len: usize) {
        if self.m.len() < len {
            self.m.resize(len, 0.0);
            self.v.resize(len, 0.0);
        }
    }
}

/// Hyperparameters shared by every group.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.99, eps: 1e-15 }
    }
}

/// One bias-corrected adaptive moment update over a parameter group.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient shape mismatch");
    state.ensure_len(params.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let mhat = m / bc1;
        let vhat = v / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + hp.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_initialized_output_layer_gives_zero_function() {
        let mut mlp = Mlp::new(vec![4, 8, 8, 1], OutputActivation::None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        mlp.init_xavier(&mut rng);
        let mut tape = MlpTape::default();
        let out = mlp.forward_tape(&[0.3, -0.2, 0.9, 0.1], &mut tape);
        assert_eq!(out, &[0.0]);

        let mut color = Mlp::new(vec![4, 8, 3], OutputActivation::Sigmoid);
        color.init_xavier(&mut rng);
        let out = color.forward_tape(&[1.0, 2.0, 3.0, 4.0], &mut tape);
        for &c in out {
            assert_relative_eq!(c, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = Mlp::new(vec![8, 32, 32, 1], OutputActivation::None);
        let mut b = Mlp::new(vec![8, 32, 32, 1], OutputActivation::None);
        a.init_xavier(&mut ChaCha8Rng::seed_from_u64(99));
        b.init_xavier(&mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn gradients_match_central_differences() {
        for act in [OutputActivation::None, OutputActivation::Sigmoid] {
            let mut mlp = Mlp::new(vec![3, 8, 8, 2], act);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            mlp.init_xavier(&mut rng);
            // Give the zeroed output layer some mass so its input gradient
            // is informative too.
            use rand::Rng;
            for p in mlp.params.iter_mut() {
                if *p == 0.0 {
                    *p = (rng.gen::<f64>() - 0.5) * 0.4;
                }
            }
            let input = [0.7, -0.3, 0.5];
            let upstream = [1.0, -2.0];
            // loss = dot(upstream, mlp(input))
            let mut tape = MlpTape::default();
            let mut grads = vec![0.0; mlp.param_count()];
            let mut d_input = [0.0; 3];
            mlp.forward_tape(&input, &mut tape);
            mlp.backward_tape(&mut tape, &upstream, &mut grads, Some(&mut d_input));

            let loss = |m: &Mlp, x: &[f64]| {
                let mut t = MlpTape::default();
                let out = m.forward_tape(x, &mut t);
                out.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
            };
            let h = 1e-6;
            for i in 0..mlp.param_count() {
                let mut mp = mlp.clone();
                mp.params[i] += h;
                let mut mm = mlp.clone();
                mm.params[i] -= h;
                let fd = (loss(&mp, &input) - loss(&mm, &input)) / (2.0 * h);
                assert!(
                    (fd - grads[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "param {i}: fd={fd} got={}",
                    grads[i]
                );
            }
            for i in 0..3 {
                let mut xp = input;
                xp[i] += h;
                let mut xm = input;
                xm[i] -= h;
                let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
                assert!(
                    (fd - d_input[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                    "input {i}: fd={fd} got={}",
                    d_input[i]
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = vec![0.5, -1.25, 3.0];
        let before = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state, 1e-2, AdamParams::default());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        let lr = 1e-2;
        adam_step(&mut params, &[1.0], &mut state, lr, AdamParams::default());
        // mhat = 1, vhat = 1 => step = lr / (1 + eps)
        assert_relative_eq!(1.0 - params[0], lr / (1.0 + 1e-15), epsilon = 1e-12);
    }

    #[test]
    fn adam_constant_gradient_moves_monotonically() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let mut prev = params[0];
        for _ in 0..50 {
            adam_step(&mut params, &[0.7], &mut state, 1e-3, AdamParams::default());
            assert!(params[0] < prev);
            prev = params[0];
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn adam_rejects_shape_mismatch() {
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[1.0; 2], &mut state, 1e-3, AdamParams::default());
    }
}
