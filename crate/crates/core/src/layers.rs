//! Reusable layer blocks: linear maps, batch normalization with running
//! statistics, and the shared linear → BN → LeakyReLU MLP used throughout the
//! networks.
//!
//! Each block owns its parameter *names* (under a dotted prefix), registers
//! values into a [`ParamSet`], and replays the forward pass on a [`Tape`].
//! Initialization draws happen in registration order from a caller-supplied
//! RNG and always sample in f64 before casting, so f32 and f64 models see the
//! same random stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::value::Value;

/// Default negative-side slope for LeakyReLU activations.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Batch-norm running-statistic momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Uniform fan-in initialization: U(−1/√fan_in, 1/√fan_in), drawn in f64.
fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

// ── linear ──────────────────────────────────────────────────────────────

/// y = x·W + b over the last axis. Parameter names: `{prefix}.w`, `{prefix}.b`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearLayer {
    pub fn new(prefix: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        LinearLayer {
            prefix: prefix.into(),
            d_in,
            d_out,
        }
    }

    fn w_name(&self) -> String {
        format!("{}.w", self.prefix)
    }
    fn b_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Registers W then b with fan-in uniform init (weight drawn row-major first).
    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        let w = uniform_fan_in(rng, self.d_in, self.d_in * self.d_out);
        let b = uniform_fan_in(rng, self.d_in, self.d_out);
        pset.register_trainable(&self.w_name(), Value::from_f64s(&[self.d_in, self.d_out], &w)?)?;
        pset.register_trainable(&self.b_name(), Value::from_f64s(&[self.d_out], &b)?)?;
        Ok(())
    }

    /// Registers with explicit values instead of random init (identity T-nets).
    pub fn register_explicit<S: Scalar>(
        &self,
        pset: &mut ParamSet<S>,
        w: Value<S>,
        b: Value<S>,
    ) -> Result<()> {
        pset.register_trainable(&self.w_name(), w)?;
        pset.register_trainable(&self.b_name(), b)?;
        Ok(())
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &ParamSet<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = tape.bind(pset, &self.w_name())?;
        let b = tape.bind(pset, &self.b_name())?;
        tape.linear(x, w, b)
    }

    /// Trainable scalar count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }
}

// ── batch norm ──────────────────────────────────────────────────────────

/// Channels-last batch normalization with running statistics.
/// Names: `{prefix}.gamma`, `{prefix}.beta` (trainable),
/// `{prefix}.run_mean`, `{prefix}.run_var` (buffers).
#[derive(Clone, Debug)]
pub struct BnLayer {
    pub prefix: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BnLayer {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        BnLayer {
            prefix: prefix.into(),
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{}", self.prefix, leaf)
    }

    /// γ=1, β=0, running mean 0 / var 1. Consumes no RNG draws.
    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>) -> Result<()> {
        let c = self.channels;
        pset.register_trainable(&self.name("gamma"), Value::full(&[c], S::ONE))?;
        pset.register_trainable(&self.name("beta"), Value::zeros(&[c]))?;
        pset.register_buffer(&self.name("run_mean"), Value::zeros(&[c]))?;
        pset.register_buffer(&self.name("run_var"), Value::full(&[c], S::ONE))?;
        Ok(())
    }

    /// Training mode normalizes with batch statistics and folds them into the
    /// running buffers (`run ← (1−m)·run + m·batch`, unbiased variance);
    /// evaluation mode normalizes with the stored running statistics and
    /// leaves the buffers untouched.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let gamma = tape.bind(pset, &self.name("gamma"))?;
        let beta = tape.bind(pset, &self.name("beta"))?;
        match tape.mode() {
            Mode::Train => {
                let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                {
                    let rm = pset.entry_mut(&self.name("run_mean"))?;
                    for (r, &b) in rm.value.data_mut().iter_mut().zip(&mean) {
                        *r = S::from_f64((1.0 - m) * r.to_f64() + m * b);
                    }
                }
                {
                    let rv = pset.entry_mut(&self.name("run_var"))?;
                    for (r, &b) in rv.value.data_mut().iter_mut().zip(&var) {
                        *r = S::from_f64((1.0 - m) * r.to_f64() + m * b);
                    }
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = pset.entry(&self.name("run_mean"))?.value.data().to_vec();
                let var = pset.entry(&self.name("run_var"))?.value.data().to_vec();
                tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels // gamma + beta; running stats are buffers
    }
}

// ── shared MLP block ────────────────────────────────────────────────────

/// The network's standard block: linear → batch norm → LeakyReLU(0.2),
/// applied over the last axis (shared across points/edges).
#[derive(Clone, Debug)]
pub struct SharedMlp {
    pub linear: LinearLayer,
    pub bn: BnLayer,
    pub slope: f64,
}

impl SharedMlp {
    pub fn new(prefix: &str, d_in: usize, d_out: usize) -> Self {
        SharedMlp {
            linear: LinearLayer::new(format!("{prefix}.lin"), d_in, d_out),
            bn: BnLayer::new(format!("{prefix}.bn"), d_out),
            slope: LEAKY_SLOPE,
        }
    }

    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.linear.register(pset, rng)?;
        self.bn.register(pset)
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let y = self.linear.forward(tape, pset, x)?;
        let n = self.bn.forward(tape, pset, y)?;
        tape.leaky_relu(n, self.slope)
    }

    pub fn param_count(&self) -> usize {
        self.linear.param_count() + self.bn.param_count()
    }
}
