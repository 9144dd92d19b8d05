//! The actor-critic interpreter network and its training loss.
//!
//! Five modules: an environment-specific observation encoder, a program
//! embedding matrix, a dense "key" layer applied to embedding rows, a
//! one-step LSTM core, and actor/value heads:
//!
//! ```text
//! s = enc(e)    p = key(M[i, :])    (h, c) = lstm([s; p], (h, c))
//! pi = softmax(actor(h))            value = tanh(critic(h))
//! ```
//!
//! Training minimizes `sum_batch [ -(pi*)^T log(pi) + (V - r)^2 ]` where
//! `pi*` is the tree policy stored with each sample. The stored hidden state
//! is treated as a constant input: gradients flow through exactly one LSTM
//! step and stop (no backpropagation through time).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::nn::{softmax, AdamState, LstmCell, Matrix, Mlp, Vector};
use crate::{Error, Result};

/// Network dimensions; defaults match the reference hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub observation_dim: usize,
    pub encoder_hidden: usize,
    pub encoding_dim: usize,      // S
    pub program_embedding: usize, // P
    pub lstm_hidden: usize,       // H
    pub n_programs: usize,
}

impl NetDims {
    pub fn new(observation_dim: usize, n_programs: usize) -> Self {
        Self {
            observation_dim,
            encoder_hidden: 100,
            encoding_dim: 32,
            program_embedding: 256,
            lstm_hidden: 128,
            n_programs,
        }
    }
}

/// LSTM hidden and cell state; zero-initialized whenever a program's tree is
/// created, restored to the caller's values when a sub-program returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpreterState {
    pub h: Vector,
    pub c: Vector,
}

impl InterpreterState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// One forward evaluation: full-library policy, value in [-1, 1], and the
/// post-step interpreter state.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub pi: Vec<f64>,
    pub value: f64,
    pub next_state: InterpreterState,
}

/// All learnable parameters plus the optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpiParams {
    pub dims: NetDims,
    pub encoder: Mlp,
    pub embeddings: Matrix, // n_programs x P
    pub grad_embeddings: Matrix,
    pub key_layer: crate::nn::LinearLayer,
    pub lstm: LstmCell,
    pub actor: Mlp,
    pub critic: Mlp,
    pub adam: AdamState,
}

/// One training sample drawn from the replay buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experience {
    pub observation: Observation,
    pub program: usize,
    pub state: InterpreterState,
    pub pi_mcts: Vec<f64>,
    pub reward: f64,
}

impl NpiParams {
    pub fn init<R: Rng>(dims: NetDims, lr: f64, rng: &mut R) -> Self {
        let head_hidden = (dims.lstm_hidden / 2).max(1);
        let mut embeddings = Matrix::zeros(dims.n_programs, dims.program_embedding);
        let limit = 1.0 / (dims.program_embedding as f64).sqrt();
        for v in embeddings.values.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
        Self {
            dims,
            encoder: Mlp::init(
                &[dims.observation_dim, dims.encoder_hidden, dims.encoding_dim],
                rng,
            ),
            grad_embeddings: Matrix::zeros(dims.n_programs, dims.program_embedding),
            embeddings,
            key_layer: crate::nn::LinearLayer::init(
                dims.program_embedding,
                dims.program_embedding,
                rng,
            ),
            lstm: LstmCell::init(
                dims.encoding_dim + dims.program_embedding,
                dims.lstm_hidden,
                rng,
            ),
            actor: Mlp::init(&[dims.lstm_hidden, head_hidden, dims.n_programs], rng),
            critic: Mlp::init(&[dims.lstm_hidden, head_hidden, 1], rng),
            adam: AdamState::new(lr),
        }
    }

    /// All-zero parameters; useful in tests (uniform policy, zero value).
    pub fn zeros(dims: NetDims, lr: f64) -> Self {
        let head_hidden = (dims.lstm_hidden / 2).max(1);
        Self {
            dims,
            encoder: Mlp::zeros(&[dims.observation_dim, dims.encoder_hidden, dims.encoding_dim]),
            embeddings: Matrix::zeros(dims.n_programs, dims.program_embedding),
            grad_embeddings: Matrix::zeros(dims.n_programs, dims.program_embedding),
            key_layer: crate::nn::LinearLayer::zeros(
                dims.program_embedding,
                dims.program_embedding,
            ),
            lstm: LstmCell::zeros(dims.encoding_dim + dims.program_embedding, dims.lstm_hidden),
            actor: Mlp::zeros(&[dims.lstm_hidden, head_hidden, dims.n_programs]),
            critic: Mlp::zeros(&[dims.lstm_hidden, head_hidden, 1]),
            adam: AdamState::new(lr),
        }
    }

    pub fn n_programs(&self) -> usize {
        self.dims.n_programs
    }

    pub fn zero_state(&self) -> InterpreterState {
        InterpreterState::zeros(self.dims.lstm_hidden)
    }

    /// Pure forward evaluation for program `program` on observation `obs`.
    pub fn forward(
        &self,
        obs: &Observation,
        program: usize,
        state: &InterpreterState,
    ) -> Result<NetOutput> {
        let (out, _) = self.forward_cached(obs, program, state)?;
        Ok(out)
    }

    fn forward_cached(
        &self,
        obs: &Observation,
        program: usize,
        state: &InterpreterState,
    ) -> Result<(NetOutput, ForwardCache)> {
        if obs.dim() != self.dims.observation_dim {
            return Err(Error::Shape {
                what: "observation",
                expected: self.dims.observation_dim,
                got: obs.dim(),
            });
        }
        if program >= self.dims.n_programs {
            return Err(Error::Usage(format!(
                "program index {} out of range ({} programs)",
                program, self.dims.n_programs
            )));
        }
        let input = Vector::from_slice(&obs.0);
        let (encoding, encoder_cache) = self.encoder.forward(&input);
        let embedding = Vector::from_slice(self.embeddings.row(program));
        let key = self.key_layer.forward(&embedding);
        let lstm_in = Vector::concat(&encoding, &key);
        let (h, c, lstm_cache) = self.lstm.forward(&lstm_in, &state.h, &state.c);
        let (logits, actor_cache) = self.actor.forward(&h);
        let (value_raw, critic_cache) = self.critic.forward(&h);
        let pi = softmax(&logits.values, 1.0);
        let value = value_raw[0].tanh();
        let out = NetOutput {
            pi,
            value,
            next_state: InterpreterState { h, c },
        };
        let cache = ForwardCache {
            program,
            encoder: encoder_cache,
            embedding,
            encoding_dim: encoding.len(),
            lstm: lstm_cache,
            actor: actor_cache,
            critic: critic_cache,
        };
        Ok((out, cache))
    }

    /// Loss and gradients of one batch; gradients accumulate into the
    /// parameter buffers (cleared by the optimizer step).
    pub fn compute_loss(&mut self, batch: &[Experience]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("compute_loss on empty batch".to_string()));
        }
        let mut total = 0.0;
        for sample in batch {
            if sample.pi_mcts.len() != self.dims.n_programs {
                return Err(Error::Shape {
                    what: "pi_mcts",
                    expected: self.dims.n_programs,
                    got: sample.pi_mcts.len(),
                });
            }
            let (out, cache) =
                self.forward_cached(&sample.observation, sample.program, &sample.state)?;
            let (policy_loss, value_loss) =
                loss_terms(&out.pi, &sample.pi_mcts, out.value, sample.reward);
            total += policy_loss + value_loss;
            self.backward(&out, &cache, &sample.pi_mcts, sample.reward);
        }
        Ok(total)
    }

    /// Backward pass for one sample; see [`loss_terms`] for the loss.
    fn backward(&mut self, out: &NetOutput, cache: &ForwardCache, pi_mcts: &[f64], reward: f64) {
        let n = self.dims.n_programs;
        // d(policy loss)/d(logits) through the softmax Jacobian, honouring
        // the clamp: clamped entries contribute no gradient.
        let mut d_pi = vec![0.0; n];
        for a in 0..n {
            if pi_mcts[a] != 0.0 && out.pi[a] > LOG_CLAMP {
                d_pi[a] = -pi_mcts[a] / out.pi[a];
            }
        }
        let mut d_logits = Vector::zeros(n);
        let dot: f64 = d_pi.iter().zip(out.pi.iter()).map(|(d, p)| d * p).sum();
        for k in 0..n {
            d_logits[k] = out.pi[k] * (d_pi[k] - dot);
        }
        // d(value loss)/d(critic raw output) through the tanh head.
        let dv = 2.0 * (out.value - reward) * (1.0 - out.value * out.value);
        let d_value = Vector::from_slice(&[dv]);

        let d_h_actor = self.actor.backward(&cache.actor, &d_logits);
        let d_h_critic = self.critic.backward(&cache.critic, &d_value);
        let mut d_h = d_h_actor;
        for (a, b) in d_h.values.iter_mut().zip(d_h_critic.values.iter()) {
            *a += b;
        }
        let d_c = Vector::zeros(self.dims.lstm_hidden);
        // Single-step backward; the stored previous state is a constant.
        let (d_lstm_in, _d_h_prev, _d_c_prev) = self.lstm.backward(&cache.lstm, &d_h, &d_c);

        let d_encoding = Vector::from_slice(&d_lstm_in.values[..cache.encoding_dim]);
        let d_key = Vector::from_slice(&d_lstm_in.values[cache.encoding_dim..]);
        self.encoder.backward(&cache.encoder, &d_encoding);
        let d_embedding = self.key_layer.backward(&cache.embedding, &d_key);
        let row = self.grad_embeddings.row_mut(cache.program);
        for (g, d) in row.iter_mut().zip(d_embedding.values.iter()) {
            *g += d;
        }
    }

    /// One optimizer update from the accumulated gradients.
    pub fn train_step(&mut self, batch: &[Experience]) -> Result<f64> {
        let loss = self.compute_loss(batch)?;
        self.apply_adam();
        Ok(loss)
    }

    fn apply_adam(&mut self) {
        let mut adam = std::mem::replace(&mut self.adam, AdamState::new(0.0));
        adam.step(self.tensors_mut().into_iter());
        self.adam = adam;
    }

    /// Every `(params, grads)` tensor pair in a fixed order.
    fn tensors_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut out: Vec<(&mut [f64], &mut [f64])> = Vec::new();
        for layer in self
            .encoder
            .layers
            .iter_mut()
            .chain(self.actor.layers.iter_mut())
            .chain(self.critic.layers.iter_mut())
            .chain(std::iter::once(&mut self.key_layer))
        {
            out.push((&mut layer.weight.values, &mut layer.grad_weight.values));
            out.push((&mut layer.bias.values, &mut layer.grad_bias.values));
        }
        out.push((
            &mut self.embeddings.values,
            &mut self.grad_embeddings.values,
        ));
        let l = &mut self.lstm;
        out.push((&mut l.w_i.values, &mut l.grad_w_i.values));
        out.push((&mut l.w_f.values, &mut l.grad_w_f.values));
        out.push((&mut l.w_g.values, &mut l.grad_w_g.values));
        out.push((&mut l.w_o.values, &mut l.grad_w_o.values));
        out.push((&mut l.b_i.values, &mut l.grad_b_i.values));
        out.push((&mut l.b_f.values, &mut l.grad_b_f.values));
        out.push((&mut l.b_g.values, &mut l.grad_b_g.values));
        out.push((&mut l.b_o.values, &mut l.grad_b_o.values));
        out
    }

    pub fn zero_grads(&mut self) {
        self.encoder.zero_grads();
        self.actor.zero_grads();
        self.critic.zero_grads();
        self.key_layer.zero_grads();
        self.lstm.zero_grads();
        self.grad_embeddings.fill(0.0);
    }

    /// Flattened copy of every parameter, in optimizer visitation order.
    /// Diagnostic surface for finite-difference checks.
    pub fn flat_params(&mut self) -> Vec<f64> {
        self.tensors_mut()
            .into_iter()
            .flat_map(|(p, _)| p.to_vec())
            .collect()
    }

    /// Flattened copy of every accumulated gradient, aligned with
    /// [`flat_params`].
    pub fn flat_grads(&mut self) -> Vec<f64> {
        self.tensors_mut()
            .into_iter()
            .flat_map(|(_, g)| g.to_vec())
            .collect()
    }

    /// Overwrites the parameter at a flat index.
    pub fn set_flat_param(&mut self, index: usize, value: f64) {
        let mut offset = 0;
        for (p, _) in self.tensors_mut() {
            if index < offset + p.len() {
                p[index - offset] = value;
                return;
            }
            offset += p.len();
        }
        panic!("flat parameter index {index} out of range");
    }

    /// Named tensor views for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let groups: [(&str, &Mlp); 3] = [
            ("encoder", &self.encoder),
            ("actor", &self.actor),
            ("critic", &self.critic),
        ];
        for (name, mlp) in groups {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((
                    format!("{name}.{i}.weight"),
                    vec![layer.weight.rows, layer.weight.cols],
                    &layer.weight.values,
                ));
                out.push((
                    format!("{name}.{i}.bias"),
                    vec![layer.bias.len()],
                    &layer.bias.values,
                ));
            }
        }
        out.push((
            "key_layer.weight".to_string(),
            vec![self.key_layer.weight.rows, self.key_layer.weight.cols],
            &self.key_layer.weight.values,
        ));
        out.push((
            "key_layer.bias".to_string(),
            vec![self.key_layer.bias.len()],
            &self.key_layer.bias.values,
        ));
        out.push((
            "embeddings".to_string(),
            vec![self.embeddings.rows, self.embeddings.cols],
            &self.embeddings.values,
        ));
        let l = &self.lstm;
        for (n, m) in [
            ("w_i", &l.w_i),
            ("w_f", &l.w_f),
            ("w_g", &l.w_g),
            ("w_o", &l.w_o),
        ] {
            out.push((format!("lstm.{n}"), vec![m.rows, m.cols], &m.values));
        }
        for (n, v) in [
            ("b_i", &l.b_i),
            ("b_f", &l.b_f),
            ("b_g", &l.b_g),
            ("b_o", &l.b_o),
        ] {
            out.push((format!("lstm.{n}"), vec![v.len()], &v.values));
        }
        out
    }

    /// Fills parameter values from blobs in [`named_tensors`] order. Callers
    /// validate names and shapes first.
    pub fn load_named_tensors(&mut self, blobs: &[crate::checkpoint::TensorBlob]) -> Result<()> {
        let mut slots: Vec<&mut Vec<f64>> = Vec::new();
        {
            let groups: [&mut Mlp; 3] = [&mut self.encoder, &mut self.actor, &mut self.critic];
            for mlp in groups {
                for layer in mlp.layers.iter_mut() {
                    slots.push(&mut layer.weight.values);
                    slots.push(&mut layer.bias.values);
                }
            }
        }
        slots.push(&mut self.key_layer.weight.values);
        slots.push(&mut self.key_layer.bias.values);
        slots.push(&mut self.embeddings.values);
        let l = &mut self.lstm;
        slots.push(&mut l.w_i.values);
        slots.push(&mut l.w_f.values);
        slots.push(&mut l.w_g.values);
        slots.push(&mut l.w_o.values);
        slots.push(&mut l.b_i.values);
        slots.push(&mut l.b_f.values);
        slots.push(&mut l.b_g.values);
        slots.push(&mut l.b_o.values);
        if slots.len() != blobs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                blobs.len()
            )));
        }
        for (slot, blob) in slots.into_iter().zip(blobs.iter()) {
            if slot.len() != blob.values.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} length mismatch",
                    blob.name
                )));
            }
            slot.copy_from_slice(&blob.values);
        }
        Ok(())
    }
}

const LOG_CLAMP: f64 = 1e-12;

/// Policy and value loss terms for one sample: cross-entropy of the tree
/// policy against the network policy (log clamped at 1e-12) and squared
/// value error.
pub fn loss_terms(pi: &[f64], pi_mcts: &[f64], value: f64, reward: f64) -> (f64, f64) {
    let mut policy = 0.0;
    for (p, t) in pi.iter().zip(pi_mcts.iter()) {
        if *t != 0.0 {
            policy -= t * p.max(LOG_CLAMP).ln();
        }
    }
    let dv = value - reward;
    (policy, dv * dv)
}


#[derive(Debug, Clone)]
struct ForwardCache {
    program: usize,
    encoder: crate::nn::MlpCache,
    embedding: Vector,
    encoding_dim: usize,
    lstm: crate::nn::LstmCache,
    actor: crate::nn::MlpCache,
    critic: crate::nn::MlpCache,
}
