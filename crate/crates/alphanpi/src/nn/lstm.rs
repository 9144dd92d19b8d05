//! A single-step LSTM cell.
//!
//! The recurrent core is only ever unrolled one step at a time (minibatch
//! samples carry their own stored hidden state), so the backward pass here is
//! for one step: it accumulates gate-weight gradients and returns the
//! input-side gradients. Callers discard `d_h_prev`/`d_c_prev`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::sigmoid;
use super::tensor::{Matrix, Vector};

/// LSTM cell over the concatenated input `z = [x; h_prev]`.
///
/// Gate weights are `H × (input + H)` and biases `H`, one set per gate
/// (input, forget, candidate, output).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_g: Matrix,
    pub w_o: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_g: Vector,
    pub b_o: Vector,
    pub grad_w_i: Matrix,
    pub grad_w_f: Matrix,
    pub grad_w_g: Matrix,
    pub grad_w_o: Matrix,
    pub grad_b_i: Vector,
    pub grad_b_f: Vector,
    pub grad_b_g: Vector,
    pub grad_b_o: Vector,
}

/// Forward-pass intermediates needed by [`LstmCell::backward`].
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub z: Vector,
    pub c_prev: Vector,
    pub i: Vector,
    pub f: Vector,
    pub g: Vector,
    pub o: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let z = input_dim + hidden;
        Self {
            w_i: Matrix::zeros(hidden, z),
            w_f: Matrix::zeros(hidden, z),
            w_g: Matrix::zeros(hidden, z),
            w_o: Matrix::zeros(hidden, z),
            b_i: Vector::zeros(hidden),
            b_f: Vector::zeros(hidden),
            b_g: Vector::zeros(hidden),
            b_o: Vector::zeros(hidden),
            grad_w_i: Matrix::zeros(hidden, z),
            grad_w_f: Matrix::zeros(hidden, z),
            grad_w_g: Matrix::zeros(hidden, z),
            grad_w_o: Matrix::zeros(hidden, z),
            grad_b_i: Vector::zeros(hidden),
            grad_b_f: Vector::zeros(hidden),
            grad_b_g: Vector::zeros(hidden),
            grad_b_o: Vector::zeros(hidden),
        }
    }

    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_dim, hidden);
        let limit = 1.0 / ((input_dim + hidden) as f64).sqrt();
        for w in [&mut cell.w_i, &mut cell.w_f, &mut cell.w_g, &mut cell.w_o] {
            for v in w.values.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        // Forget gate biased open so the cell state persists across steps
        // from the start; distinguishing histories that share an observation
        // depends on it.
        cell.b_f.fill(1.0);
        cell
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_i.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols - self.hidden_dim()
    }

    /// Standard gate equations; returns `(h, c)` and the cache for backward.
    pub fn forward(
        &self,
        x: &Vector,
        h_prev: &Vector,
        c_prev: &Vector,
    ) -> (Vector, Vector, LstmCache) {
        let hidden = self.hidden_dim();
        assert_eq!(x.len(), self.input_dim(), "lstm_step: bad input dim");
        assert_eq!(h_prev.len(), hidden, "lstm_step: bad hidden dim");
        assert_eq!(c_prev.len(), hidden, "lstm_step: bad cell dim");

        let z = Vector::concat(x, h_prev);
        let gate = |w: &Matrix, b: &Vector| -> Vector {
            let mut out = vec![0.0; hidden];
            w.matvec(&z.values, &mut out);
            for (v, bv) in out.iter_mut().zip(b.values.iter()) {
                *v += bv;
            }
            Vector { values: out }
        };
        let mut i = gate(&self.w_i, &self.b_i);
        let mut f = gate(&self.w_f, &self.b_f);
        let mut g = gate(&self.w_g, &self.b_g);
        let mut o = gate(&self.w_o, &self.b_o);
        i.values.iter_mut().for_each(|v| *v = sigmoid(*v));
        f.values.iter_mut().for_each(|v| *v = sigmoid(*v));
        g.values.iter_mut().for_each(|v| *v = v.tanh());
        o.values.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut c = Vector::zeros(hidden);
        for k in 0..hidden {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
        }
        let tanh_c = Vector::from_slice(&c.values.iter().map(|v| v.tanh()).collect::<Vec<_>>());
        let mut h = Vector::zeros(hidden);
        for k in 0..hidden {
            h[k] = o[k] * tanh_c[k];
        }
        let cache = LstmCache {
            z,
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            c: c.clone(),
            tanh_c,
        };
        (h, c, cache)
    }

    /// Gate-wise analytic gradients for one step.
    ///
    /// Accumulates into the gradient buffers and returns
    /// `(d_x, d_h_prev, d_c_prev)`.
    pub fn backward(
        &mut self,
        cache: &LstmCache,
        d_h: &Vector,
        d_c: &Vector,
    ) -> (Vector, Vector, Vector) {
        let hidden = self.hidden_dim();
        assert_eq!(d_h.len(), hidden, "lstm_backward: bad d_h dim");
        assert_eq!(d_c.len(), hidden, "lstm_backward: bad d_c dim");

        let mut d_o = Vector::zeros(hidden);
        let mut d_c_total = Vector::zeros(hidden);
        for k in 0..hidden {
            d_o[k] = d_h[k] * cache.tanh_c[k];
            d_c_total[k] = d_c[k] + d_h[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        }
        let mut d_i = Vector::zeros(hidden);
        let mut d_f = Vector::zeros(hidden);
        let mut d_g = Vector::zeros(hidden);
        let mut d_c_prev = Vector::zeros(hidden);
        for k in 0..hidden {
            d_i[k] = d_c_total[k] * cache.g[k];
            d_f[k] = d_c_total[k] * cache.c_prev[k];
            d_g[k] = d_c_total[k] * cache.i[k];
            d_c_prev[k] = d_c_total[k] * cache.f[k];
        }
        // Pre-activation gradients.
        let mut dz_i = Vector::zeros(hidden);
        let mut dz_f = Vector::zeros(hidden);
        let mut dz_g = Vector::zeros(hidden);
        let mut dz_o = Vector::zeros(hidden);
        for k in 0..hidden {
            dz_i[k] = d_i[k] * cache.i[k] * (1.0 - cache.i[k]);
            dz_f[k] = d_f[k] * cache.f[k] * (1.0 - cache.f[k]);
            dz_g[k] = d_g[k] * (1.0 - cache.g[k] * cache.g[k]);
            dz_o[k] = d_o[k] * cache.o[k] * (1.0 - cache.o[k]);
        }

        let mut d_z = Vector::zeros(cache.z.len());
        self.grad_w_i.add_outer(&dz_i.values, &cache.z.values);
        self.grad_w_f.add_outer(&dz_f.values, &cache.z.values);
        self.grad_w_g.add_outer(&dz_g.values, &cache.z.values);
        self.grad_w_o.add_outer(&dz_o.values, &cache.z.values);
        for k in 0..hidden {
            self.grad_b_i[k] += dz_i[k];
            self.grad_b_f[k] += dz_f[k];
            self.grad_b_g[k] += dz_g[k];
            self.grad_b_o[k] += dz_o[k];
        }
        self.w_i.matvec_transpose_add(&dz_i.values, &mut d_z.values);
        self.w_f.matvec_transpose_add(&dz_f.values, &mut d_z.values);
        self.w_g.matvec_transpose_add(&dz_g.values, &mut d_z.values);
        self.w_o.matvec_transpose_add(&dz_o.values, &mut d_z.values);

        let input_dim = self.input_dim();
        let d_x = Vector::from_slice(&d_z.values[..input_dim]);
        let d_h_prev = Vector::from_slice(&d_z.values[input_dim..]);
        (d_x, d_h_prev, d_c_prev)
    }

    pub fn zero_grads(&mut self) {
        self.grad_w_i.fill(0.0);
        self.grad_w_f.fill(0.0);
        self.grad_w_g.fill(0.0);
        self.grad_w_o.fill(0.0);
        self.grad_b_i.fill(0.0);
        self.grad_b_f.fill(0.0);
        self.grad_b_g.fill(0.0);
        self.grad_b_o.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{central_diff, rel_err};
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_hidden_state() {
        let cell = LstmCell::zeros(3, 4);
        let (h, c, _) = cell.forward(
            &Vector::from_slice(&[1.0, -2.0, 0.5]),
            &Vector::zeros(4),
            &Vector::zeros(4),
        );
        // c' = sigma(0)*0 + sigma(0)*tanh(0) = 0, h = sigma(0)*tanh(0) = 0.
        assert!(h.values.iter().all(|&v| v == 0.0));
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_hand_computed_gates() {
        let mut cell = LstmCell::zeros(1, 1);
        cell.w_i.set(0, 0, 1.0); // input gate sees x
        cell.w_g.set(0, 0, 2.0); // candidate sees 2x
        cell.b_f[0] = 1.0; // forget gate biased open
        cell.b_o[0] = -1.0;
        let x = Vector::from_slice(&[0.5]);
        let h_prev = Vector::from_slice(&[0.0]);
        let c_prev = Vector::from_slice(&[0.3]);
        let (h, c, _) = cell.forward(&x, &h_prev, &c_prev);

        let i = sigmoid(0.5);
        let f = sigmoid(1.0);
        let g = (1.0f64).tanh();
        let o = sigmoid(-1.0);
        let c_expect = f * 0.3 + i * g;
        let h_expect = o * c_expect.tanh();
        assert!((c[0] - c_expect).abs() < 1e-12);
        assert!((h[0] - h_expect).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cell = LstmCell::init(2, 3, &mut rng);
        let (_, _, cache) = cell.forward(
            &Vector::from_slice(&[0.1, -0.2]),
            &Vector::from_slice(&[0.3, 0.0, -0.5]),
            &Vector::from_slice(&[0.2, 0.2, 0.2]),
        );
        let (dx, dh, dc) = cell.backward(&cache, &Vector::zeros(3), &Vector::zeros(3));
        assert!(dx.values.iter().all(|&v| v == 0.0));
        assert!(dh.values.iter().all(|&v| v == 0.0));
        assert!(dc.values.iter().all(|&v| v == 0.0));
        assert!(cell.grad_w_i.values.iter().all(|&v| v == 0.0));
        assert!(cell.grad_b_o.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_gate_bias_gradient_matches_hand_formula() {
        // For a 1-unit cell, dh/db_o = sigma'(z_o) * tanh(c).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cell = LstmCell::init(1, 1, &mut rng);
        cell.b_o[0] = 0.4;
        let x = Vector::from_slice(&[0.7]);
        let h_prev = Vector::from_slice(&[-0.2]);
        let c_prev = Vector::from_slice(&[0.1]);
        let (_h, _c, cache) = cell.forward(&x, &h_prev, &c_prev);
        cell.zero_grads();
        cell.backward(&cache, &Vector::from_slice(&[1.0]), &Vector::zeros(1));
        let expected = cache.o[0] * (1.0 - cache.o[0]) * cache.tanh_c[0];
        assert!((cell.grad_b_o[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hidden = 4;
        let input = 3;
        let mut cell = LstmCell::init(input, hidden, &mut rng);
        let x = Vector::from_slice(&[0.4, -0.6, 0.2]);
        let h_prev = Vector::from_slice(&[0.1, -0.3, 0.5, 0.0]);
        let c_prev = Vector::from_slice(&[-0.2, 0.4, 0.1, 0.3]);

        // Scalar loss: sum(h) + 0.5*sum(c).
        let loss = |cell: &LstmCell| {
            let (h, c, _) = cell.forward(&x, &h_prev, &c_prev);
            h.values.iter().sum::<f64>() + 0.5 * c.values.iter().sum::<f64>()
        };
        let (_, _, cache) = cell.forward(&x, &h_prev, &c_prev);
        cell.zero_grads();
        let d_h = Vector::from_slice(&vec![1.0; hidden]);
        let d_c = Vector::from_slice(&vec![0.5; hidden]);
        let (dx, dhp, dcp) = cell.backward(&cache, &d_h, &d_c);

        let step = 1e-5;
        // Check one full weight matrix and all biases plus input-side grads.
        for p in 0..cell.w_g.values.len() {
            let analytic = cell.grad_w_g.values[p];
            let cellref = std::cell::RefCell::new(&mut cell);
            let numeric = central_diff(
                || loss(&cellref.borrow()),
                || cellref.borrow().w_g.values[p],
                |v| cellref.borrow_mut().w_g.values[p] = v,
                step,
            );
            assert!(rel_err(analytic, numeric) < 1e-4, "w_g {p}");
        }
        for p in 0..hidden {
            let analytic = cell.grad_b_f[p];
            let cellref = std::cell::RefCell::new(&mut cell);
            let numeric = central_diff(
                || loss(&cellref.borrow()),
                || cellref.borrow().b_f[p],
                |v| cellref.borrow_mut().b_f[p] = v,
                step,
            );
            assert!(rel_err(analytic, numeric) < 1e-4, "b_f {p}");
        }
        // Input-side gradients via perturbing the inputs.
        let pairs: [(&Vector, &Vector); 3] = [(&x, &dx), (&h_prev, &dhp), (&c_prev, &dcp)];
        for (vec, grads) in pairs {
            for p in 0..vec.len() {
                let mut v2 = vec.clone();
                let analytic = grads[p];
                let cellref = &cell;
                let numeric = {
                    let orig = v2[p];
                    let eval = |vv: &Vector| {
                        // Re-dispatch on which input this is.
                        let (xx, hh, cc) = if std::ptr::eq(vec, &x) {
                            (vv, &h_prev, &c_prev)
                        } else if std::ptr::eq(vec, &h_prev) {
                            (&x, vv, &c_prev)
                        } else {
                            (&x, &h_prev, vv)
                        };
                        let (h, c, _) = cellref.forward(xx, hh, cc);
                        h.values.iter().sum::<f64>() + 0.5 * c.values.iter().sum::<f64>()
                    };
                    v2[p] = orig + step;
                    let plus = eval(&v2);
                    v2[p] = orig - step;
                    let minus = eval(&v2);
                    (plus - minus) / (2.0 * step)
                };
                assert!(rel_err(analytic, numeric) < 1e-4, "input grad {p}");
            }
        }
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(
            xs in proptest::collection::vec(-100.0f64..100.0, 3),
            seed in 0u64..50,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = LstmCell::init(3, 5, &mut rng);
            let (h, _, _) = cell.forward(
                &Vector::from_slice(&xs),
                &Vector::zeros(5),
                &Vector::zeros(5),
            );
            // h = sigmoid(.) * tanh(.) lies strictly inside (-1, 1).
            prop_assert!(h.values.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}
