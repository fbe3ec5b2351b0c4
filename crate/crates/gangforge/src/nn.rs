//! Shared neural-network plumbing: linear layers, MLPs, Xavier init, and
//! Adam with L2 weight decay, all over the tape autodiff engine.
//!
//! Parameter structs own plain matrices; `bind` registers them on a tape as
//! differentiable leaves (or constants, for frozen models) and returns
//! handles used to build the forward pass. Gradient extraction relies on
//! binding order, so every model exposes its parameters in one fixed order.

use ndarray::Array2;
use rand::Rng;
use tapegrad::{Tape, Var};

/// Xavier-uniform matrix with the given fan-in and fan-out.
pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

/// Dense layer storing weights as (in, out) and bias as (1, out).
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: xavier(rng, fan_in, fan_out),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundLinear {
        let reg = |m: &Array2<f64>| {
            if trainable {
                tape.var(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        BoundLinear {
            w: reg(&self.w),
            b: reg(&self.b),
        }
    }
}

#[derive(Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl BoundLinear {
    pub fn apply(&self, tape: &Tape, x: Var) -> Var {
        tape.add_row(tape.matmul(x, self.w), self.b)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. `[16, 64, 2]`.
    pub fn new<R: Rng>(rng: &mut R, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(Linear::params_mut).collect()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }
}

#[derive(Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn apply(&self, tape: &Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(BoundLinear::vars).collect()
    }
}

/// Adam with classic L2 weight decay folded into the gradient.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. `params` and `grads` must stay in the same order and
    /// shapes across calls.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.v = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.dim(), g.dim(), "param/grad shape mismatch");
            for ((pw, &gw), (mw, vw)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let grad = gw + self.weight_decay * *pw;
                *mw = self.beta1 * *mw + (1.0 - self.beta1) * grad;
                *vw = self.beta2 * *vw + (1.0 - self.beta2) * grad * grad;
                let m_hat = *mw / bc1;
                let v_hat = *vw / bc2;
                *pw -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn mlp_shapes_and_determinism() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut rng, &[4, 8, 2]);
        let tape = Tape::new();
        let x = tape.constant(Array2::from_elem((3, 4), 0.5));
        let bound = mlp.bind(&tape, true);
        let out = bound.apply(&tape, x);
        assert_eq!(tape.shape(out), (3, 2));

        let mut rng2 = ChaCha12Rng::seed_from_u64(1);
        let mlp2 = Mlp::new(&mut rng2, &[4, 8, 2]);
        assert_eq!(mlp.layers[0].w, mlp2.layers[0].w);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize sum(x^2): Adam should shrink the parameter toward zero.
        let mut x = Array2::from_elem((2, 2), 3.0);
        let mut opt = Adam::new(0.1, 0.0);
        for _ in 0..200 {
            let grad = 2.0 * &x;
            opt.step(&mut [&mut x], &[grad]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn weight_decay_pulls_unused_params_down() {
        let mut x = Array2::from_elem((1, 1), 1.0);
        let mut opt = Adam::new(0.01, 0.1);
        for _ in 0..100 {
            let grad = Array2::zeros((1, 1));
            opt.step(&mut [&mut x], &[grad]);
        }
        assert!(x[[0, 0]] < 1.0);
    }
}
