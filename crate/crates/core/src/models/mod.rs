//! Network assembly: configuration, the spatial-transform net, the
//! classification and segmentation architectures, parameter counting, and an
//! analytic FLOP estimate.

mod net;
mod tnet;

pub use net::{BatchInput, Network};
pub use tnet::TNet;

use crate::dfa::Aggregation;
use crate::error::{Error, Result};
use crate::graph::Domain;

/// Which head the network ends in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    PartSegmentation,
    SemanticSegmentation,
}

impl Task {
    pub fn token(self) -> &'static str {
        match self {
            Task::Classification => "cls",
            Task::PartSegmentation => "partseg",
            Task::SemanticSegmentation => "semseg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Task::Classification),
            "partseg" => Ok(Task::PartSegmentation),
            "semseg" => Ok(Task::SemanticSegmentation),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected cls|partseg|semseg)"
            ))),
        }
    }

    pub fn is_segmentation(self) -> bool {
        !matches!(self, Task::Classification)
    }
}

pub fn domain_token(d: Domain) -> &'static str {
    match d {
        Domain::Feature => "feature",
        Domain::Spatial => "spatial",
    }
}

pub fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "feature" => Ok(Domain::Feature),
        "spatial" => Ok(Domain::Spatial),
        other => Err(Error::Config(format!(
            "unknown graph domain '{other}' (expected feature|spatial)"
        ))),
    }
}

/// Complete architecture description. Widths are the *unscaled* full-size
/// values; every internal width passes through [`ModelConfig::scaled`]
/// (multiply by `width_scale`, round, floor at 1) when the network is built.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub num_points: usize,
    /// Classification output classes (unused by segmentation tasks).
    pub num_classes: usize,
    /// Segmentation output width (total part labels).
    pub num_parts: usize,
    /// One-hot length of the category vector (part segmentation).
    pub num_categories: usize,
    /// Per-point input channels: 3 coordinates, plus extras (9 for scene data).
    pub input_dim: usize,
    pub k: usize,
    pub dfa_widths: Vec<usize>,
    pub pos_dim: usize,
    pub global_branch_dim: usize,
    pub embed_dim: usize,
    pub head_widths: Vec<usize>,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub graph_domain: Domain,
    pub use_position_encoding: bool,
    pub use_low_dim_global: bool,
    pub use_category_vector: bool,
    pub category_lift_dim: usize,
    pub width_scale: f64,
    pub tnet_point_widths: Vec<usize>,
    pub tnet_fc_widths: Vec<usize>,
}

impl ModelConfig {
    /// Default classifier: 4 DFA layers of width 64, 320-wide concatenation,
    /// 1024-dim embedding, 512/256 head; k=20 at 1024 points.
    pub fn classification(num_classes: usize) -> Self {
        ModelConfig {
            task: Task::Classification,
            num_points: 1024,
            num_classes,
            num_parts: 0,
            num_categories: 0,
            input_dim: 3,
            k: 20,
            dfa_widths: vec![64, 64, 64, 64],
            pos_dim: 64,
            global_branch_dim: 64,
            embed_dim: 1024,
            head_widths: vec![512, 256],
            dropout: 0.5,
            aggregation: Aggregation::Max,
            graph_domain: Domain::Feature,
            use_position_encoding: true,
            use_low_dim_global: true,
            use_category_vector: false,
            category_lift_dim: 64,
            width_scale: 1.0,
            tnet_point_widths: vec![64, 128, 256],
            tnet_fc_widths: vec![128, 64],
        }
    }

    /// Default part segmenter: 3 DFA layers, category one-hot lifted to 64,
    /// 512/256/128 per-point head; k=40 at 2048 points.
    pub fn part_segmentation(num_categories: usize, num_parts: usize) -> Self {
        ModelConfig {
            task: Task::PartSegmentation,
            num_points: 2048,
            num_classes: 0,
            num_parts,
            num_categories,
            input_dim: 3,
            k: 40,
            dfa_widths: vec![64, 64, 64],
            head_widths: vec![512, 256, 128],
            use_category_vector: true,
            ..ModelConfig::classification(0)
        }
    }

    /// Default scene segmenter: 9-channel input, no category vector.
    pub fn semantic_segmentation(num_parts: usize) -> Self {
        ModelConfig {
            task: Task::SemanticSegmentation,
            num_points: 4096,
            input_dim: 9,
            use_category_vector: false,
            num_categories: 0,
            ..ModelConfig::part_segmentation(0, num_parts)
        }
    }

    /// Applies the width-scale factor: max(1, round(w · s)).
    pub fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 3 {
            return Err(Error::Config(format!(
                "input_dim must be at least 3 (coordinates), got {}",
                self.input_dim
            )));
        }
        if self.k == 0 || self.k > self.num_points {
            return Err(Error::InvalidK {
                k: self.k,
                n: self.num_points,
            });
        }
        if self.dfa_widths.is_empty() {
            return Err(Error::Config("at least one feature-aggregation layer required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.width_scale > 0.0) || !self.width_scale.is_finite() {
            return Err(Error::Config(format!(
                "width_scale must be positive and finite, got {}",
                self.width_scale
            )));
        }
        match self.task {
            Task::Classification => {
                if self.num_classes < 2 {
                    return Err(Error::Config(format!(
                        "classification needs at least 2 classes, got {}",
                        self.num_classes
                    )));
                }
                if self.use_category_vector {
                    return Err(Error::Config(
                        "category vector is a segmentation-only feature".into(),
                    ));
                }
            }
            Task::PartSegmentation | Task::SemanticSegmentation => {
                if self.num_parts < 2 {
                    return Err(Error::Config(format!(
                        "segmentation needs at least 2 part labels, got {}",
                        self.num_parts
                    )));
                }
                if self.task == Task::SemanticSegmentation && self.use_category_vector {
                    return Err(Error::Config(
                        "scene segmentation takes no category vector".into(),
                    ));
                }
                if self.use_category_vector && self.num_categories == 0 {
                    return Err(Error::Config(
                        "category vector enabled but num_categories is 0".into(),
                    ));
                }
            }
        }
        if self.use_position_encoding && self.pos_dim == 0 {
            return Err(Error::Config("position encoding enabled but pos_dim is 0".into()));
        }
        Ok(())
    }

    fn usize_list(v: &[usize]) -> String {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }

    fn parse_usize_list(s: &str, key: &str) -> Result<Vec<usize>> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("config {key}: bad integer '{t}'")))
            })
            .collect()
    }

    /// Canonical flat text form: `key=value` lines sorted by key, `\n`-joined.
    /// [`ModelConfig::parse_canonical`] round-trips it exactly; checkpoints and
    /// report fingerprints are built on this encoding.
    pub fn canonical_text(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("aggregation", self.aggregation.token().to_string()),
            ("category_lift_dim", self.category_lift_dim.to_string()),
            ("dfa_widths", Self::usize_list(&self.dfa_widths)),
            ("dropout", format!("{:?}", self.dropout)),
            ("embed_dim", self.embed_dim.to_string()),
            ("global_branch_dim", self.global_branch_dim.to_string()),
            ("graph_domain", domain_token(self.graph_domain).to_string()),
            ("head_widths", Self::usize_list(&self.head_widths)),
            ("input_dim", self.input_dim.to_string()),
            ("k", self.k.to_string()),
            ("num_categories", self.num_categories.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("num_parts", self.num_parts.to_string()),
            ("num_points", self.num_points.to_string()),
            ("pos_dim", self.pos_dim.to_string()),
            ("task", self.task.token().to_string()),
            ("tnet_fc_widths", Self::usize_list(&self.tnet_fc_widths)),
            ("tnet_point_widths", Self::usize_list(&self.tnet_point_widths)),
            ("use_category_vector", self.use_category_vector.to_string()),
            ("use_low_dim_global", self.use_low_dim_global.to_string()),
            ("use_position_encoding", self.use_position_encoding.to_string()),
            ("width_scale", format!("{:?}", self.width_scale)),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        use std::collections::BTreeMap;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key=value, got '{line}'", i + 1))
            })?;
            map.insert(key.to_string(), value.to_string());
        }
        let mut take = |key: &str| -> Result<String> {
            map.remove(key)
                .ok_or_else(|| Error::Config(format!("config missing key '{key}'")))
        };
        let parse_usize = |key: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("config {key}: bad integer '{v}'")))
        };
        let parse_f64 = |key: &str, v: String| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("config {key}: bad float '{v}'")))
        };
        let parse_bool = |key: &str, v: String| -> Result<bool> {
            v.parse()
                .map_err(|_| Error::Config(format!("config {key}: bad bool '{v}'")))
        };
        let cfg = ModelConfig {
            aggregation: Aggregation::parse(&take("aggregation")?)?,
            category_lift_dim: parse_usize("category_lift_dim", take("category_lift_dim")?)?,
            dfa_widths: Self::parse_usize_list(&take("dfa_widths")?, "dfa_widths")?,
            dropout: parse_f64("dropout", take("dropout")?)?,
            embed_dim: parse_usize("embed_dim", take("embed_dim")?)?,
            global_branch_dim: parse_usize("global_branch_dim", take("global_branch_dim")?)?,
            graph_domain: parse_domain(&take("graph_domain")?)?,
            head_widths: Self::parse_usize_list(&take("head_widths")?, "head_widths")?,
            input_dim: parse_usize("input_dim", take("input_dim")?)?,
            k: parse_usize("k", take("k")?)?,
            num_categories: parse_usize("num_categories", take("num_categories")?)?,
            num_classes: parse_usize("num_classes", take("num_classes")?)?,
            num_parts: parse_usize("num_parts", take("num_parts")?)?,
            num_points: parse_usize("num_points", take("num_points")?)?,
            pos_dim: parse_usize("pos_dim", take("pos_dim")?)?,
            task: Task::parse(&take("task")?)?,
            tnet_fc_widths: Self::parse_usize_list(&take("tnet_fc_widths")?, "tnet_fc_widths")?,
            tnet_point_widths: Self::parse_usize_list(
                &take("tnet_point_widths")?,
                "tnet_point_widths",
            )?,
            use_category_vector: parse_bool("use_category_vector", take("use_category_vector")?)?,
            use_low_dim_global: parse_bool("use_low_dim_global", take("use_low_dim_global")?)?,
            use_position_encoding: parse_bool(
                "use_position_encoding",
                take("use_position_encoding")?,
            )?,
            width_scale: parse_f64("width_scale", take("width_scale")?)?,
        };
        if let Some((key, _)) = map.into_iter().next() {
            return Err(Error::Config(format!("config has unknown key '{key}'")));
        }
        Ok(cfg)
    }
}

/// Exact count of trainable scalars for `cfg` (weights, biases, BN γ/β;
/// running statistics and momentum excluded). Independent of `num_points`.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    use rand::SeedableRng;
    let mut pset = crate::params::ParamSet::<f32>::new();
    let net = Network::build(cfg.clone())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    net.register(&mut pset, &mut rng)?;
    Ok(pset.num_trainable_scalars())
}

/// Analytic FLOP estimate for one forward pass over a single cloud of
/// `num_points` points: 2·rows·d_in·d_out per linear map (applied over points,
/// edges, or pooled vectors) plus N²·D per k-nearest-neighbor distance matrix
/// and 2·N·3·3 for the transform application. Activations, normalizations,
/// and reductions are omitted — they are linear in the tensor sizes and
/// dominated by the terms above.
pub fn estimate_flops(cfg: &ModelConfig, num_points: usize) -> Result<u64> {
    cfg.validate()?;
    let n = num_points as u64;
    let k = cfg.k as u64;
    let lin = |rows: u64, d_in: u64, d_out: u64| 2 * rows * d_in * d_out;
    let mut total: u64 = 0;

    // Spatial transform: per-point stack, pooled FC stack, final 9, apply.
    let mut w_prev = 3u64;
    for &w in &cfg.tnet_point_widths {
        let w = cfg.scaled(w) as u64;
        total += lin(n, w_prev, w);
        w_prev = w;
    }
    for &w in &cfg.tnet_fc_widths {
        let w = cfg.scaled(w) as u64;
        total += lin(1, w_prev, w);
        w_prev = w;
    }
    total += lin(1, w_prev, 9);
    total += 2 * n * 3 * 3;

    // DFA stack: distance matrix + position MLP + edge MLP (+ attention).
    let pos = cfg.scaled(cfg.pos_dim) as u64;
    let mut d_in = cfg.input_dim as u64;
    for &w in &cfg.dfa_widths {
        let m = cfg.scaled(w) as u64;
        total += n * n * d_in; // pairwise squared distances
        let mut edge_in = 2 * d_in;
        if cfg.use_position_encoding {
            total += lin(n * k, 10, pos);
            edge_in += pos;
        }
        total += lin(n * k, edge_in, m);
        if cfg.aggregation == Aggregation::AttentionSum {
            total += lin(n * k, m, 1);
        }
        d_in = m;
    }

    let locals: u64 = cfg.dfa_widths.iter().map(|&w| cfg.scaled(w) as u64).sum();
    let global = cfg.scaled(cfg.global_branch_dim) as u64;
    let embed = cfg.scaled(cfg.embed_dim) as u64;
    let mut concat = locals;
    if cfg.use_low_dim_global {
        total += lin(n, cfg.input_dim as u64, global);
        concat += global;
    }
    total += lin(n, concat, embed);

    // Head.
    match cfg.task {
        Task::Classification => {
            let mut w_prev = embed;
            for &w in &cfg.head_widths {
                let w = cfg.scaled(w) as u64;
                total += lin(1, w_prev, w);
                w_prev = w;
            }
            total += lin(1, w_prev, cfg.num_classes as u64);
        }
        Task::PartSegmentation | Task::SemanticSegmentation => {
            let mut pooled = embed;
            if cfg.use_category_vector {
                let lift = cfg.scaled(cfg.category_lift_dim) as u64;
                total += lin(1, cfg.num_categories as u64, lift);
                pooled += lift;
            }
            let mut w_prev = pooled + locals;
            for &w in &cfg.head_widths {
                let w = cfg.scaled(w) as u64;
                total += lin(n, w_prev, w);
                w_prev = w;
            }
            total += lin(n, w_prev, cfg.num_parts as u64);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        for cfg in [
            ModelConfig::classification(40),
            ModelConfig::part_segmentation(16, 50),
            ModelConfig::semantic_segmentation(13),
            ModelConfig {
                width_scale: 0.25,
                aggregation: Aggregation::AttentionSum,
                graph_domain: Domain::Spatial,
                use_position_encoding: false,
                ..ModelConfig::classification(4)
            },
        ] {
            let text = cfg.canonical_text();
            let back = ModelConfig::parse_canonical(&text).unwrap();
            assert_eq!(back, cfg);
            // Lines are sorted by key: stable fingerprint input.
            let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
            let mut sorted = keys.clone();
            sorted.sort_unstable();
            assert_eq!(keys, sorted);
        }
    }

    #[test]
    fn parse_rejects_unknown_and_missing_keys() {
        let cfg = ModelConfig::classification(10);
        let text = cfg.canonical_text();
        let extra = format!("{text}\nbogus=1");
        assert!(ModelConfig::parse_canonical(&extra)
            .unwrap_err()
            .to_string()
            .contains("bogus"));
        let missing: String = text
            .lines()
            .filter(|l| !l.starts_with("k="))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(ModelConfig::parse_canonical(&missing)
            .unwrap_err()
            .to_string()
            .contains("'k'"));
    }

    #[test]
    fn validation_catches_task_mismatches() {
        let mut cfg = ModelConfig::classification(40);
        cfg.use_category_vector = true;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::semantic_segmentation(13);
        cfg.use_category_vector = true;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::classification(1);
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::classification(40);
        cfg.k = 2000;
        assert!(matches!(cfg.validate(), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn width_scaling_rounds_and_floors() {
        let mut cfg = ModelConfig::classification(40);
        cfg.width_scale = 0.25;
        assert_eq!(cfg.scaled(64), 16);
        assert_eq!(cfg.scaled(1024), 256);
        assert_eq!(cfg.scaled(2), 1);
        cfg.width_scale = 0.01;
        assert_eq!(cfg.scaled(64), 1);
    }

    #[test]
    fn flops_single_linear_term() {
        // One linear over 1024 points, 3 → 64 contributes 2·1024·3·64.
        assert_eq!(2 * 1024 * 3 * 64, 393_216);
        let cfg = ModelConfig::classification(40);
        let f1 = estimate_flops(&cfg, 1024).unwrap();
        let f2 = estimate_flops(&cfg, 2048).unwrap();
        // The N² distance term makes the estimate super-linear in N.
        assert!(f2 > 2 * f1);
    }
}
