//! The full architectures: a shared trunk (spatial transform → stacked
//! feature-aggregation layers → low-dim global branch → wide embedding →
//! max pool) with either a cloud-level classification head or a per-point
//! segmentation head.

use rand_chacha::ChaCha8Rng;

use crate::dfa::{DfaConfig, DfaLayer};
use crate::error::{Error, Result};
use crate::layers::{LinearLayer, SharedMlp, LEAKY_SLOPE};
use crate::models::{ModelConfig, Task, TNet};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::value::{fmt_shape, Value};

/// One batch of inputs to [`Network::forward`].
pub struct BatchInput<'a, S: Scalar> {
    /// [B, N, input_dim] point tensor; the first three channels are coordinates.
    pub points: &'a Value<S>,
    /// Per-cloud category ids (part segmentation only).
    pub categories: Option<&'a [u32]>,
}

/// A built network: layer objects hold names and dimensions, all tensors live
/// in a [`ParamSet`]. Output is [B, num_classes] for classification and
/// [B, N, num_parts] for segmentation.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    tnet: TNet,
    dfa: Vec<DfaLayer>,
    global_mlp: Option<SharedMlp>,
    embed: SharedMlp,
    cat_lift: Option<LinearLayer>,
    head_hidden: Vec<LinearLayer>,
    head_out: LinearLayer,
}

impl Network {
    pub fn build(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let point_w: Vec<usize> = cfg.tnet_point_widths.iter().map(|&w| cfg.scaled(w)).collect();
        let fc_w: Vec<usize> = cfg.tnet_fc_widths.iter().map(|&w| cfg.scaled(w)).collect();
        let tnet = TNet::new("tnet", &point_w, &fc_w)?;

        let mut dfa = Vec::with_capacity(cfg.dfa_widths.len());
        let mut d_in = cfg.input_dim;
        for (i, &w) in cfg.dfa_widths.iter().enumerate() {
            let d_out = cfg.scaled(w);
            let layer_cfg = DfaConfig {
                d_in,
                d_out,
                k: cfg.k,
                pos_dim: cfg.scaled(cfg.pos_dim),
                aggregation: cfg.aggregation,
                use_position_encoding: cfg.use_position_encoding,
                graph_domain: cfg.graph_domain,
            };
            dfa.push(DfaLayer::new(&format!("dfa{i}"), layer_cfg)?);
            d_in = d_out;
        }
        let locals_dim: usize = cfg.dfa_widths.iter().map(|&w| cfg.scaled(w)).sum();

        let global_dim = cfg.scaled(cfg.global_branch_dim);
        let global_mlp = cfg
            .use_low_dim_global
            .then(|| SharedMlp::new("global", cfg.input_dim, global_dim));
        let concat_dim = locals_dim + if cfg.use_low_dim_global { global_dim } else { 0 };

        let embed_dim = cfg.scaled(cfg.embed_dim);
        let embed = SharedMlp::new("embed", concat_dim, embed_dim);

        let lift_dim = cfg.scaled(cfg.category_lift_dim);
        let cat_lift = cfg
            .use_category_vector
            .then(|| LinearLayer::new("cat", cfg.num_categories, lift_dim));

        let (mut head_in, head_out_dim) = match cfg.task {
            Task::Classification => (embed_dim, cfg.num_classes),
            Task::PartSegmentation | Task::SemanticSegmentation => {
                let pooled = embed_dim + if cfg.use_category_vector { lift_dim } else { 0 };
                (pooled + locals_dim, cfg.num_parts)
            }
        };
        let mut head_hidden = Vec::with_capacity(cfg.head_widths.len());
        for (i, &w) in cfg.head_widths.iter().enumerate() {
            let w = cfg.scaled(w);
            head_hidden.push(LinearLayer::new(format!("head.fc{i}"), head_in, w));
            head_in = w;
        }
        let head_out = LinearLayer::new("head.out", head_in, head_out_dim);

        Ok(Network {
            cfg,
            tnet,
            dfa,
            global_mlp,
            embed,
            cat_lift,
            head_hidden,
            head_out,
        })
    }

    /// Registers every parameter in a fixed order (transform net, aggregation
    /// layers, global branch, embedding, category lift, head), so a given seed
    /// yields the same initialization for every precision.
    pub fn register<S: Scalar>(&self, pset: &mut ParamSet<S>, rng: &mut ChaCha8Rng) -> Result<()> {
        self.tnet.register(pset, rng)?;
        for layer in &self.dfa {
            layer.register(pset, rng)?;
        }
        if let Some(g) = &self.global_mlp {
            g.register(pset, rng)?;
        }
        self.embed.register(pset, rng)?;
        if let Some(c) = &self.cat_lift {
            c.register(pset, rng)?;
        }
        for lin in &self.head_hidden {
            lin.register(pset, rng)?;
        }
        self.head_out.register(pset, rng)
    }

    /// Trainable scalar count, by construction equal to what [`Self::register`]
    /// puts into a parameter set.
    pub fn param_count(&self) -> usize {
        self.tnet.param_count()
            + self.dfa.iter().map(DfaLayer::param_count).sum::<usize>()
            + self.global_mlp.as_ref().map_or(0, SharedMlp::param_count)
            + self.embed.param_count()
            + self.cat_lift.as_ref().map_or(0, LinearLayer::param_count)
            + self.head_hidden.iter().map(LinearLayer::param_count).sum::<usize>()
            + self.head_out.param_count()
    }

    fn one_hot<S: Scalar>(&self, cats: &[u32], b: usize) -> Result<Value<S>> {
        let c = self.cfg.num_categories;
        if cats.len() != b {
            return Err(Error::shape(
                "category vector",
                format!("{b} ids (one per cloud)"),
                format!("{} ids", cats.len()),
            ));
        }
        let mut oh = Value::zeros(&[b, c]);
        for (i, &cat) in cats.iter().enumerate() {
            if cat as usize >= c {
                return Err(Error::Config(format!(
                    "category id {cat} out of range for {c} categories"
                )));
            }
            oh.data_mut()[i * c + cat as usize] = S::ONE;
        }
        Ok(oh)
    }

    /// Hidden head layers: linear → LeakyReLU, with dropout after the first
    /// two hidden layers; the output layer is a bare linear map.
    fn head<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &ParamSet<S>,
        mut h: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        for (i, lin) in self.head_hidden.iter().enumerate() {
            h = lin.forward(tape, pset, h)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            if i < 2 {
                h = tape.dropout(h, self.cfg.dropout, rng)?;
            }
        }
        self.head_out.forward(tape, pset, h)
    }

    /// Runs the network. `rng` drives dropout masks and is only consumed in
    /// training mode with a nonzero dropout rate.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        input: &BatchInput<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let pts = tape.leaf(input.points.clone());
        self.forward_node(tape, pset, pts, input.categories, rng)
    }

    /// Like [`Network::forward`], but reads the point batch from a node
    /// already on the tape, so gradients with respect to the input remain
    /// attached to the caller's graph.
    pub fn forward_node<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pset: &mut ParamSet<S>,
        pts: NodeId,
        categories: Option<&[u32]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let shape = tape.shape(pts).to_vec();
        let d = self.cfg.input_dim;
        if shape.len() != 3 || shape[2] != d {
            return Err(Error::shape(
                "network input",
                format!("[B, N, {d}]"),
                fmt_shape(&shape),
            ));
        }
        let (b, n) = (shape[0], shape[1]);
        match self.cfg.task {
            Task::PartSegmentation if self.cfg.use_category_vector => {
                if categories.is_none() {
                    return Err(Error::Config(
                        "part segmentation requires a category id per cloud".into(),
                    ));
                }
            }
            _ => {
                if categories.is_some() {
                    return Err(Error::Config(format!(
                        "task '{}' takes no category vector",
                        self.cfg.task.token()
                    )));
                }
            }
        }

        // Align coordinates; extra channels bypass the transform.
        let coords = if d == 3 { pts } else { tape.slice_last(pts, 0, 3)? };
        let (xt, _t) = self.tnet.forward(tape, pset, coords)?;
        let f0 = if d == 3 {
            xt
        } else {
            let extra = tape.slice_last(pts, 3, d - 3)?;
            tape.concat_last(&[xt, extra])?
        };

        let mut f = f0;
        let mut locals = Vec::with_capacity(self.dfa.len());
        for layer in &self.dfa {
            let (nf, _graph) = layer.forward(tape, pset, f, xt)?;
            f = nf;
            locals.push(nf);
        }

        let mut cat_parts = locals.clone();
        if let Some(g) = &self.global_mlp {
            let gf = g.forward(tape, pset, f0)?; // [B, N, G]
            let gp = tape.reduce_max(gf, 1)?; // [B, G]
            let gb = tape.expand_dim(gp, 1, n)?; // [B, N, G]
            cat_parts.push(gb);
        }
        let cat = tape.concat_last(&cat_parts)?;
        let e = self.embed.forward(tape, pset, cat)?; // [B, N, E]
        let mut pooled = tape.reduce_max(e, 1)?; // [B, E]

        match self.cfg.task {
            Task::Classification => self.head(tape, pset, pooled, rng),
            Task::PartSegmentation | Task::SemanticSegmentation => {
                if let Some(lift) = &self.cat_lift {
                    let cats = categories.expect("checked above");
                    let oh = tape.leaf(self.one_hot(cats, b)?);
                    let lf = lift.forward(tape, pset, oh)?; // [B, L]
                    pooled = tape.concat_last(&[pooled, lf])?;
                }
                let gb = tape.expand_dim(pooled, 1, n)?; // [B, N, E(+L)]
                let mut parts = vec![gb];
                parts.extend(locals.iter().copied());
                let per_point = tape.concat_last(&parts)?;
                self.head(tape, pset, per_point, rng)
            }
        }
    }
}
