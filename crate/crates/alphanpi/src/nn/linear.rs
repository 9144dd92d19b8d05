//! Affine layers and small ReLU MLPs with accumulate-style backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::relu;
use super::tensor::{Matrix, Vector};

/// A dense affine layer `y = W x + b` with gradient buffers mirroring the
/// parameter shapes. Activations live in the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vector,
    pub grad_weight: Matrix,
    pub grad_bias: Vector,
}

impl LinearLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: Vector::zeros(out_dim),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let limit = 1.0 / (in_dim as f64).sqrt();
        for w in layer.weight.values.iter_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    /// Returns `W x + b`.
    pub fn forward(&self, x: &Vector) -> Vector {
        assert_eq!(
            x.len(),
            self.in_dim(),
            "linear_forward: input dim {} != {}",
            x.len(),
            self.in_dim()
        );
        let mut out = self.bias.clone();
        let mut tmp = vec![0.0; self.out_dim()];
        self.weight.matvec(&x.values, &mut tmp);
        for (o, t) in out.values.iter_mut().zip(tmp.iter()) {
            *o += t;
        }
        out
    }

    /// Accumulates `dW += d_out ⊗ x`, `db += d_out`; returns `dX = Wᵀ d_out`.
    pub fn backward(&mut self, x: &Vector, d_out: &Vector) -> Vector {
        assert_eq!(x.len(), self.in_dim(), "linear_backward: bad input dim");
        assert_eq!(
            d_out.len(),
            self.out_dim(),
            "linear_backward: bad upstream dim"
        );
        self.grad_weight.add_outer(&d_out.values, &x.values);
        for (g, d) in self.grad_bias.values.iter_mut().zip(d_out.values.iter()) {
            *g += d;
        }
        let mut dx = Vector::zeros(self.in_dim());
        self.weight
            .matvec_transpose_add(&d_out.values, &mut dx.values);
        dx
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// A fully-connected network with ReLU on hidden layers and an identity
/// output. Non-linearities on the output (softmax, tanh) belong to the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

/// Per-layer pre- and post-activation values cached by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input followed by each layer's post-activation output.
    pub activations: Vec<Vector>,
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::zeros(w[1], w[0]))
            .collect();
        Self { layers }
    }

    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::init(w[1], w[0], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn forward(&self, x: &Vector) -> (Vector, MlpCache) {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(activations.last().unwrap());
            if i != last {
                out.values.iter_mut().for_each(|v| *v = relu(*v));
            }
            activations.push(out);
        }
        (
            activations.last().unwrap().clone(),
            MlpCache { activations },
        )
    }

    /// Backward through all layers, accumulating gradients; returns dX.
    pub fn backward(&mut self, cache: &MlpCache, d_out: &Vector) -> Vector {
        let last = self.layers.len() - 1;
        let mut grad = d_out.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            if i != last {
                // ReLU gate: the cached activation is post-ReLU, so a zero
                // output means the unit was clamped.
                let act = &cache.activations[i + 1];
                for (g, a) in grad.values.iter_mut().zip(act.values.iter()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            grad = layer.backward(&cache.activations[i], &grad);
        }
        grad
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{central_diff, rel_err};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_identity_weight() {
        let mut l = LinearLayer::zeros(2, 2);
        l.weight.set(0, 0, 1.0);
        l.weight.set(1, 1, 1.0);
        let y = l.forward(&Vector::from_slice(&[1.0, 2.0]));
        assert_eq!(y.values, vec![1.0, 2.0]);
    }

    #[test]
    fn forward_bias_only() {
        let mut l = LinearLayer::zeros(1, 2);
        l.bias[0] = 3.0;
        let y = l.forward(&Vector::from_slice(&[9.0, -4.0]));
        assert_eq!(y.values, vec![3.0]);
    }

    #[test]
    fn forward_hand_example() {
        let mut l = LinearLayer::zeros(1, 2);
        l.weight.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        let y = l.forward(&Vector::from_slice(&[2.0, 5.0]));
        assert_eq!(y.values, vec![7.0]);
    }

    #[test]
    fn backward_zero_upstream_is_a_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = LinearLayer::init(3, 2, &mut rng);
        let dx = l.backward(&Vector::from_slice(&[1.0, -1.0]), &Vector::zeros(3));
        assert!(dx.values.iter().all(|&v| v == 0.0));
        assert!(l.grad_weight.values.iter().all(|&v| v == 0.0));
        assert!(l.grad_bias.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_hand_chain_rule() {
        let mut l = LinearLayer::zeros(1, 1);
        l.weight.set(0, 0, 2.0);
        let dx = l.backward(&Vector::from_slice(&[3.0]), &Vector::from_slice(&[1.0]));
        assert_eq!(l.grad_weight.get(0, 0), 3.0);
        assert_eq!(l.grad_bias[0], 1.0);
        assert_eq!(dx.values, vec![2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut layer = LinearLayer::init(4, 3, &mut rng);
        let x = Vector::from_slice(&[0.3, -0.7, 0.4]);
        // Scalar loss: sum of squares of the output.
        let d_out = {
            let y = layer.forward(&x);
            Vector::from_slice(&y.values.iter().map(|v| 2.0 * v).collect::<Vec<_>>())
        };
        layer.zero_grads();
        let dx = layer.backward(&x, &d_out);

        let step = 1e-5;
        let n = layer.weight.values.len();
        for p in 0..n {
            let analytic = layer.grad_weight.values[p];
            let x2 = x.clone();
            let layer_cell = std::cell::RefCell::new(&mut layer);
            let numeric = central_diff(
                || {
                    let y = layer_cell.borrow().forward(&x2);
                    y.values.iter().map(|v| v * v).sum()
                },
                || layer_cell.borrow().weight.values[p],
                |v| layer_cell.borrow_mut().weight.values[p] = v,
                step,
            );
            assert!(
                rel_err(analytic, numeric) < 1e-6,
                "weight {p}: {analytic} vs {numeric}"
            );
        }
        // Input gradient on one coordinate.
        let mut xv = x.clone();
        let layer_ref = &layer;
        for i in 0..xv.len() {
            let analytic = dx[i];
            let cell = std::cell::RefCell::new(&mut xv);
            let numeric = central_diff(
                || {
                    let y = layer_ref.forward(&cell.borrow());
                    y.values.iter().map(|v| v * v).sum()
                },
                || cell.borrow()[i],
                |v| cell.borrow_mut()[i] = v,
                step,
            );
            assert!(rel_err(analytic, numeric) < 1e-6, "input {i}");
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::init(&[3, 5, 2], &mut rng);
        let x = Vector::from_slice(&[0.2, -0.4, 0.9]);

        let loss = |m: &Mlp| {
            let (y, _) = m.forward(&x);
            y.values.iter().map(|v| v * v).sum::<f64>()
        };
        let (y, cache) = mlp.forward(&x);
        let d_out = Vector::from_slice(&y.values.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        mlp.zero_grads();
        mlp.backward(&cache, &d_out);

        let analytic: Vec<f64> = mlp
            .layers
            .iter()
            .flat_map(|l| {
                l.grad_weight
                    .values
                    .iter()
                    .copied()
                    .chain(l.grad_bias.values.iter().copied())
            })
            .collect();

        let mut numeric = Vec::new();
        let step = 1e-5;
        for li in 0..mlp.layers.len() {
            for p in 0..mlp.layers[li].weight.values.len() {
                let cell = std::cell::RefCell::new(&mut mlp);
                numeric.push(central_diff(
                    || loss(&cell.borrow()),
                    || cell.borrow().layers[li].weight.values[p],
                    |v| cell.borrow_mut().layers[li].weight.values[p] = v,
                    step,
                ));
            }
            for p in 0..mlp.layers[li].bias.len() {
                let cell = std::cell::RefCell::new(&mut mlp);
                numeric.push(central_diff(
                    || loss(&cell.borrow()),
                    || cell.borrow().layers[li].bias[p],
                    |v| cell.borrow_mut().layers[li].bias[p] = v,
                    step,
                ));
            }
        }
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!(rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }
}
