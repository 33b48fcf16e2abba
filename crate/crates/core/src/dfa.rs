//! The dynamic feature-aggregation layer.
//!
//! Each forward pass rebuilds a k-nearest-neighbor graph from the layer's own
//! *input features* (or, in the ablation mode, from the fixed 3-D coordinates),
//! then for every edge (i, j):
//!   - semantic encoding: f_i ⊕ (f_i − f_j), width 2D;
//!   - relative position encoding: MLP over the 10-dim raw vector
//!     x_i ⊕ x_j ⊕ (x_i − x_j) ⊕ ‖x_i − x_j‖, width P;
//!   - edge feature: MLP over the concatenation, width M;
//! and finally reduces the k edges per point with the configured aggregation.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{gather_neighbors, knn_batch, BatchGraph, Domain};
use crate::layers::{LinearLayer, SharedMlp};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::value::fmt_shape;

/// Width of the raw relative-position vector: x_i(3) ⊕ x_j(3) ⊕ (x_i−x_j)(3) ⊕ ‖·‖(1).
pub const POS_RAW_DIM: usize = 10;

/// Symmetric reduction over each point's k edge features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Sum,
    Mean,
    AttentionSum,
}

impl Aggregation {
    pub fn token(self) -> &'static str {
        match self {
            Aggregation::Max => "max",
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::AttentionSum => "attn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "attn" => Ok(Aggregation::AttentionSum),
            other => Err(Error::Config(format!(
                "unknown aggregation '{other}' (expected max|sum|mean|attn)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DfaConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub k: usize,
    /// Output width P of the position-encoding MLP.
    pub pos_dim: usize,
    pub aggregation: Aggregation,
    pub use_position_encoding: bool,
    pub graph_domain: Domain,
}

impl DfaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "dfa layer dims must be positive: d_in {}, d_out {}, k {}",
                self.d_in, self.d_out, self.k
            )));
        }
        if self.use_position_encoding && self.pos_dim == 0 {
            return Err(Error::Config(
                "position encoding enabled but pos_dim is 0".into(),
            ));
        }
        Ok(())
    }

    /// Input width of the edge MLP: (P +) 2D.
    pub fn edge_in_dim(&self) -> usize {
        let sem = 2 * self.d_in;
        if self.use_position_encoding {
            self.pos_dim + sem
        } else {
            sem
        }
    }
}

/// Semantic edge encoding (center ⊕ difference): out[i][m] = f_i ⊕ (f_i − f_j_m).
/// The self-loop at slot 0 contributes a zero difference block.
pub fn semantic_feature_encode<S: Scalar>(
    tape: &mut Tape<S>,
    f: NodeId,
    graph: &BatchGraph,
) -> Result<NodeId> {
    let nbrs = gather_neighbors(tape, f, graph)?;
    let center = tape.expand_dim(f, 2, graph.k)?;
    let diff = tape.sub(center, nbrs)?;
    tape.concat_last(&[center, diff])
}

/// Raw 10-dim relative-position table: x_i ⊕ x_j ⊕ (x_i − x_j) ⊕ ‖x_i − x_j‖.
pub fn relative_position_table<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    graph: &BatchGraph,
) -> Result<NodeId> {
    let shape = tape.shape(x);
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape(
            "relative_position_table: coordinates",
            "[B, N, 3]",
            fmt_shape(shape),
        ));
    }
    let xn = gather_neighbors(tape, x, graph)?;
    let xc = tape.expand_dim(x, 2, graph.k)?;
    let xd = tape.sub(xc, xn)?;
    let dist = tape.norm_last(xd)?;
    tape.concat_last(&[xc, xn, xd, dist])
}

/// One DFA layer: its configuration plus the parameter names it owns.
#[derive(Clone, Debug)]
pub struct DfaLayer {
    pub cfg: DfaConfig,
    pos_mlp: Option<SharedMlp>,
    edge_mlp: SharedMlp,
    att: Option<LinearLayer>,
}

impl DfaLayer {
    pub fn new(prefix: &str, cfg: DfaConfig) -> Result<Self> {
        cfg.validate()?;
        let pos_mlp = cfg
            .use_position_encoding
            .then(|| SharedMlp::new(&format!("{prefix}.pos"), POS_RAW_DIM, cfg.pos_dim));
        let edge_mlp = SharedMlp::new(&format!("{prefix}.edge"), cfg.edge_in_dim(), cfg.d_out);
        let att = matches!(cfg.aggregation, Aggregation::AttentionSum)
            .then(|| LinearLayer::new(format!("{prefix}.att"), cfg.d_out, 1));
        Ok(DfaLayer {
            cfg,
            pos_mlp,
            edge_mlp,
            att,
        })
    }

    /// Registration order: position MLP, edge MLP, attention scorer.
    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        if let Some(pos) = &self.pos_mlp {
            pos.register(pset, rng)?;
        }
        self.edge_mlp.register(pset, rng)?;
        if let Some(att) = &self.att {
            att.register(pset, rng)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.pos_mlp.as_ref().map_or(0, SharedMlp::param_count)
            + self.edge_mlp.param_count()
            + self.att.as_ref().map_or(0, LinearLayer::param_count)
    }

    /// Position encoding through the shared MLP: [B,N,k,10] raw → [B,N,k,P].
    pub fn relative_position_encode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        x: NodeId,
        graph: &BatchGraph,
    ) -> Result<NodeId> {
        let pos = self.pos_mlp.as_ref().ok_or_else(|| {
            Error::Config("position encoding is disabled for this layer".into())
        })?;
        let raw = relative_position_table(tape, x, graph)?;
        pos.forward(tape, pset, raw)
    }

    /// Edge features (Eq. 4 fusion): concat position (when enabled) with the
    /// semantic encoding, then the shared edge MLP to width M.
    pub fn edge_feature<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        pos: Option<NodeId>,
        sem: NodeId,
    ) -> Result<NodeId> {
        let fused = match (self.cfg.use_position_encoding, pos) {
            (true, Some(p)) => tape.concat_last(&[p, sem])?,
            (false, None) => sem,
            (true, None) => {
                return Err(Error::Config(
                    "edge_feature: position encoding enabled but no position tensor given".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Config(
                    "edge_feature: position tensor given but encoding is disabled".into(),
                ))
            }
        };
        self.edge_mlp.forward(tape, pset, fused)
    }

    /// Reduces edge features h [B,N,k,M] to per-point features [B,N,M].
    pub fn aggregate<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &ParamSet<S>,
        h: NodeId,
    ) -> Result<NodeId> {
        let shape = tape.shape(h);
        if shape.len() != 4 {
            return Err(Error::shape("aggregate: edge features", "[B, N, k, M]", fmt_shape(shape)));
        }
        match self.cfg.aggregation {
            Aggregation::Max => tape.reduce_max(h, 2),
            Aggregation::Sum => tape.sum_axis(h, 2),
            Aggregation::Mean => tape.mean_axis(h, 2),
            Aggregation::AttentionSum => {
                let att = self.att.as_ref().expect("attention layer exists for attention-sum");
                let scores = att.forward(tape, pset, h)?; // [B,N,k,1]
                let weights = tape.softmax(scores, 2)?;
                let weighted = tape.mul_bcast_last(h, weights)?;
                tape.sum_axis(weighted, 2)
            }
        }
    }

    /// Full layer: rebuild the graph from this layer's input features (or the
    /// coordinates in spatial mode), encode, fuse, aggregate.
    /// Returns the output node and the graph actually used.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        f: NodeId,
        x: NodeId,
    ) -> Result<(NodeId, BatchGraph)> {
        let fs = tape.shape(f);
        if fs.len() != 3 || fs[2] != self.cfg.d_in {
            return Err(Error::shape(
                "dfa_forward: features",
                format!("[B, N, {}]", self.cfg.d_in),
                fmt_shape(fs),
            ));
        }
        let graph = match self.cfg.graph_domain {
            Domain::Feature => knn_batch(tape.value(f), self.cfg.k, Domain::Feature)?,
            Domain::Spatial => knn_batch(tape.value(x), self.cfg.k, Domain::Spatial)?,
        };
        let sem = semantic_feature_encode(tape, f, &graph)?;
        let pos = if self.cfg.use_position_encoding {
            Some(self.relative_position_encode(tape, pset, x, &graph)?)
        } else {
            None
        };
        let h = self.edge_feature(tape, pset, pos, sem)?;
        let out = self.aggregate(tape, pset, h)?;
        Ok((out, graph))
    }
}
