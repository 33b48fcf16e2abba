//! Input-alignment network: predicts a 3×3 transform from the cloud itself
//! and applies it to the coordinates. The final projection starts at exactly
//! the identity (zero weights, identity bias), so an untrained network passes
//! coordinates through unchanged.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{LinearLayer, SharedMlp};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::value::{fmt_shape, Value};

/// Point-shared MLP stack → max pool → FC stack → linear to 9 → reshape 3×3.
#[derive(Clone, Debug)]
pub struct TNet {
    point_mlps: Vec<SharedMlp>,
    fc_mlps: Vec<SharedMlp>,
    final_lin: LinearLayer,
}

impl TNet {
    pub fn new(prefix: &str, point_widths: &[usize], fc_widths: &[usize]) -> Result<Self> {
        if point_widths.is_empty() || fc_widths.is_empty() {
            return Err(Error::Config(
                "transform net needs at least one point width and one FC width".into(),
            ));
        }
        let mut point_mlps = Vec::with_capacity(point_widths.len());
        let mut d = 3;
        for (i, &w) in point_widths.iter().enumerate() {
            point_mlps.push(SharedMlp::new(&format!("{prefix}.point{i}"), d, w));
            d = w;
        }
        let mut fc_mlps = Vec::with_capacity(fc_widths.len());
        for (i, &w) in fc_widths.iter().enumerate() {
            fc_mlps.push(SharedMlp::new(&format!("{prefix}.fc{i}"), d, w));
            d = w;
        }
        let final_lin = LinearLayer::new(format!("{prefix}.final"), d, 9);
        Ok(TNet {
            point_mlps,
            fc_mlps,
            final_lin,
        })
    }

    /// Registers parameters. The final projection is set explicitly (zero
    /// weights, identity bias) and draws nothing from `rng`.
    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        for m in &self.point_mlps {
            m.register(pset, rng)?;
        }
        for m in &self.fc_mlps {
            m.register(pset, rng)?;
        }
        let d = self.final_lin.d_in;
        let w = Value::zeros(&[d, 9]);
        let mut b = Value::zeros(&[9]);
        for i in 0..3 {
            b.data_mut()[i * 3 + i] = S::ONE;
        }
        self.final_lin.register_explicit(pset, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.point_mlps.iter().map(SharedMlp::param_count).sum::<usize>()
            + self.fc_mlps.iter().map(SharedMlp::param_count).sum::<usize>()
            + self.final_lin.param_count()
    }

    /// `x`: [B, N, 3] coordinates. Returns `(x · T, T)` where `T` is the
    /// predicted per-cloud [B, 3, 3] transform.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != 3 {
            return Err(Error::shape("transform net input", "[B, N, 3]", fmt_shape(&xs)));
        }
        let b = xs[0];
        let mut h = x;
        for m in &self.point_mlps {
            h = m.forward(tape, pset, h)?;
        }
        let mut pooled = tape.reduce_max(h, 1)?; // [B, C]
        for m in &self.fc_mlps {
            pooled = m.forward(tape, pset, pooled)?;
        }
        let t9 = self.final_lin.forward(tape, pset, pooled)?; // [B, 9]
        let t = tape.reshape(t9, &[b, 3, 3])?;
        let y = tape.bmm(x, t)?;
        Ok((y, t))
    }
}
