//! Seeded training loop: shuffle → batch → augment → forward → cross-entropy
//! → backward → SGD with momentum → schedule step, with best-checkpoint
//! selection on a held-out validation split.
//!
//! All randomness (parameter init, split, shuffles, augmentation, dropout)
//! flows from one counter-based stream seeded by [`TrainConfig::seed`], so a
//! run is a pure function of (seed, config, dataset) up to wall-clock times.

pub mod ablation;
pub mod metrics;
pub mod report;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint::save_checkpoint;
use crate::data::{augment, batch_points, AugmentPolicy, PointCloud};
use crate::error::{Error, Result};
use crate::models::{BatchInput, ModelConfig, Network, Task};
use crate::optim::{cosine_lr, sgd_momentum_step};
use crate::params::ParamSet;
use crate::scalar::{Dtype, Scalar};
use crate::tape::{Mode, NodeId, Tape};
use crate::value::Value;
use metrics::{
    category_of, evaluate_classification, evaluate_part_segmentation, EpochStat, MetricReport,
    PartCatalog,
};

/// Default epoch budget for full-scale datasets.
pub const FULL_SCALE_EPOCHS: usize = 250;
/// Default epoch budget for desk-scale (CPU-minutes) experiments.
pub const DESK_SCALE_EPOCHS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    /// Cosine decay from `lr` to `lr_final` across the epoch budget.
    Cosine,
    /// Fixed at `lr` every epoch.
    Constant,
}

impl LrSchedule {
    pub fn token(self) -> &'static str {
        match self {
            LrSchedule::Cosine => "cosine",
            LrSchedule::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(LrSchedule::Cosine),
            "constant" => Ok(LrSchedule::Constant),
            other => Err(Error::Config(format!(
                "unknown lr schedule '{other}' (expected cosine|constant)"
            ))),
        }
    }
}

/// Optimization settings. Architecture lives in [`ModelConfig`]; this covers
/// only how the parameters are driven.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the training clouds held out for best-checkpoint
    /// selection; 0 disables the split.
    pub val_fraction: f64,
    pub augment: AugmentPolicy,
    pub schedule: LrSchedule,
}

impl TrainConfig {
    /// Classification defaults: lr 0.1 cosine-decayed to 1e-3, momentum 0.9,
    /// batch 32, full-scale epoch budget.
    pub fn classification() -> Self {
        TrainConfig {
            lr: 0.1,
            lr_final: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: FULL_SCALE_EPOCHS,
            seed: 0,
            val_fraction: 0.1,
            augment: AugmentPolicy::default(),
            schedule: LrSchedule::Cosine,
        }
    }

    /// Segmentation defaults: batch 16, otherwise as classification.
    pub fn segmentation() -> Self {
        TrainConfig { batch_size: 16, ..TrainConfig::classification() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=self.lr).contains(&self.lr_final) {
            return Err(Error::Config(format!(
                "final learning rate must lie in [0, lr], got {}",
                self.lr_final
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 (batch statistics), got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch budget must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        let a = &self.augment;
        let bad = [a.scale.0, a.scale.1, a.shift, a.sigma, a.clip].iter().any(|v| !v.is_finite());
        if bad || a.scale.0 <= 0.0 || a.scale.0 > a.scale.1 || a.shift < 0.0 || a.sigma < 0.0
            || a.clip < 0.0
        {
            return Err(Error::Config("augmentation policy has out-of-range fields".into()));
        }
        Ok(())
    }

    /// Sorted `key=value` lines; the stable identity of a run's optimizer
    /// settings, folded into the configuration fingerprint.
    pub fn canonical_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("augment_clip", format!("{:?}", self.augment.clip)),
            ("augment_scale_hi", format!("{:?}", self.augment.scale.1)),
            ("augment_scale_lo", format!("{:?}", self.augment.scale.0)),
            ("augment_shift", format!("{:?}", self.augment.shift)),
            ("augment_sigma", format!("{:?}", self.augment.sigma)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("lr_final", format!("{:?}", self.lr_final)),
            ("momentum", format!("{:?}", self.momentum)),
            ("schedule", self.schedule.token().to_string()),
            ("seed", self.seed.to_string()),
            ("val_fraction", format!("{:?}", self.val_fraction)),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

/// First 16 hex characters of the SHA-256 over the model config, the train
/// config, and the numeric precision — enough to tell two runs apart.
pub fn config_fingerprint(model: &ModelConfig, train: &TrainConfig, dtype: Dtype) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.canonical_text().as_bytes());
    hasher.update(train.canonical_text().as_bytes());
    hasher.update(format!("precision={dtype:?}\n").as_bytes());
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn check_dataset(
    cfg: &ModelConfig,
    clouds: &[PointCloud],
    catalog: Option<&PartCatalog>,
) -> Result<()> {
    let first = clouds.first().ok_or_else(|| Error::Config("empty training set".into()))?;
    let n = first.len();
    for (i, cloud) in clouds.iter().enumerate() {
        cloud.validate()?;
        if cloud.len() != n {
            return Err(Error::Config(format!(
                "cloud {i} has {} points, cloud 0 has {n}; training batches must be homogeneous",
                cloud.len()
            )));
        }
        if cloud.input_dim() != cfg.input_dim {
            return Err(Error::Config(format!(
                "cloud {i} has {} channels, the model expects {}",
                cloud.input_dim(),
                cfg.input_dim
            )));
        }
        match cfg.task {
            Task::Classification => match cloud.class_label {
                Some(l) if l >= 0 && (l as usize) < cfg.num_classes => {}
                Some(l) => {
                    return Err(Error::Config(format!(
                        "cloud {i}: class label {l} out of range ({} classes)",
                        cfg.num_classes
                    )))
                }
                None => {
                    return Err(Error::Config(format!("cloud {i} is missing its class label")))
                }
            },
            _ => {
                let catalog = catalog.expect("segmentation catalog resolved by caller");
                let cat = category_of(cloud, catalog)?;
                let parts = catalog.parts(cat)?;
                let labels = cloud.part_labels.as_ref().ok_or_else(|| {
                    Error::Config(format!("cloud {i} is missing its part labels"))
                })?;
                for &l in labels {
                    if l < 0 || !parts.contains(&(l as u32)) {
                        return Err(Error::Config(format!(
                            "cloud {i}: part label {l} outside category {cat}'s part set"
                        )));
                    }
                }
            }
        }
    }
    if n < cfg.k {
        return Err(Error::InvalidK { k: cfg.k, n });
    }
    Ok(())
}

/// Per-batch label and category vectors in batch-then-point order, matching
/// the row layout the loss sees after flattening segmentation logits.
fn batch_labels(
    clouds: &[&PointCloud],
    task: Task,
    use_category: bool,
) -> (Vec<u32>, Option<Vec<u32>>) {
    let labels = match task {
        Task::Classification => {
            clouds.iter().map(|c| c.class_label.expect("checked") as u32).collect()
        }
        _ => clouds
            .iter()
            .flat_map(|c| c.part_labels.as_ref().expect("checked").iter().map(|&l| l as u32))
            .collect(),
    };
    let cats = use_category
        .then(|| clouds.iter().map(|c| c.class_label.unwrap_or(0) as u32).collect());
    (labels, cats)
}

fn forward_loss<S: Scalar>(
    net: &Network,
    pset: &mut ParamSet<S>,
    tape: &mut Tape<S>,
    points: &Value<S>,
    labels: &[u32],
    categories: Option<&[u32]>,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    let input = BatchInput { points, categories };
    let logits = net.forward(tape, pset, &input, rng)?;
    let flat = if net.cfg.task.is_segmentation() {
        let s = tape.shape(logits).to_vec();
        tape.reshape(logits, &[s[0] * s[1], s[2]])?
    } else {
        logits
    };
    tape.cross_entropy(flat, labels)
}

fn held_out_metric<S: Scalar>(
    net: &Network,
    pset: &mut ParamSet<S>,
    clouds: &[&PointCloud],
    catalog: Option<&PartCatalog>,
    batch_size: usize,
) -> Result<f64> {
    match net.cfg.task {
        Task::Classification => Ok(evaluate_classification(net, pset, clouds, batch_size)?.oa),
        _ => {
            let catalog = catalog.expect("segmentation catalog resolved by caller");
            Ok(evaluate_part_segmentation(net, pset, clouds, catalog, batch_size)?.miou)
        }
    }
}

/// Trains a freshly initialized parameter set for `cfg.epochs` epochs and
/// returns it with the run's [`MetricReport`]. When `ckpt_path` is given, the
/// checkpoint is rewritten each time the held-out metric strictly improves.
///
/// `catalog` is required for part segmentation, forbidden for classification,
/// and defaults to a single category spanning all parts for scene
/// segmentation. Final report metrics are computed on the validation split,
/// or on the training clouds when the split is disabled.
///
/// A non-finite loss — or non-finite features reaching the graph build —
/// aborts with [`Error::Diverged`] naming the epoch and batch.
pub fn train<S: Scalar>(
    net: &Network,
    clouds: &[PointCloud],
    catalog: Option<&PartCatalog>,
    cfg: &TrainConfig,
    ckpt_path: Option<&Path>,
) -> Result<(ParamSet<S>, MetricReport)> {
    cfg.validate()?;
    let task = net.cfg.task;

    let default_catalog;
    let catalog: Option<&PartCatalog> = match task {
        Task::Classification => {
            if catalog.is_some() {
                return Err(Error::Config("classification takes no part catalog".into()));
            }
            None
        }
        Task::PartSegmentation => Some(catalog.ok_or_else(|| {
            Error::Config("part segmentation needs a category-to-parts catalog".into())
        })?),
        Task::SemanticSegmentation => match catalog {
            Some(c) => Some(c),
            None => {
                default_catalog = PartCatalog::single_category(net.cfg.num_parts as u32)?;
                Some(&default_catalog)
            }
        },
    };
    check_dataset(&net.cfg, clouds, catalog)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pset = ParamSet::<S>::new();
    net.register(&mut pset, &mut rng)?;

    // Seeded validation split, drawn before any epoch so the partition is
    // part of the run's identity.
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction == 0.0 {
        0
    } else {
        ((cfg.val_fraction * clouds.len() as f64).round() as usize).max(1)
    };
    let (val_idx, fit_idx) = order.split_at(n_val);
    if fit_idx.len() < 2 {
        return Err(Error::Config(format!(
            "training split has {} clouds after holding out {n_val}; need at least 2",
            fit_idx.len()
        )));
    }
    let val_clouds: Vec<&PointCloud> = val_idx.iter().map(|&i| &clouds[i]).collect();
    let mut train_idx = fit_idx.to_vec();

    let fingerprint = config_fingerprint(&net.cfg, cfg, S::DTYPE);
    let mut stats: Vec<EpochStat> = Vec::with_capacity(cfg.epochs);
    let mut best = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr_e = match cfg.schedule {
            LrSchedule::Cosine => cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_final),
            LrSchedule::Constant => cfg.lr,
        };
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_no, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                // Batch statistics need at least two rows; the odd trailing
                // cloud sits this epoch out (the next shuffle redeals it).
                continue;
            }
            let aug: Vec<PointCloud> =
                chunk.iter().map(|&i| augment(&clouds[i], &mut rng, &cfg.augment)).collect();
            let refs: Vec<&PointCloud> = aug.iter().collect();
            let points = batch_points::<S>(&refs)?;
            let (labels, cats) = batch_labels(&refs, task, net.cfg.use_category_vector);

            let mut tape = Tape::new(Mode::Train);
            let loss = match forward_loss(
                net,
                &mut pset,
                &mut tape,
                &points,
                &labels,
                cats.as_deref(),
                &mut rng,
            ) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged { epoch, batch: batch_no, loss: f64::NAN })
                }
                Err(e) => return Err(e),
            };
            let loss_val = tape.data(loss)[0].to_f64();
            if !loss_val.is_finite() {
                return Err(Error::Diverged { epoch, batch: batch_no, loss: loss_val });
            }
            tape.backward(loss)?;
            tape.grads_into(&mut pset)?;
            sgd_momentum_step(&mut pset, lr_e, cfg.momentum)?;
            pset.zero_grads();
            loss_sum += loss_val;
            batches += 1;
        }
        debug_assert!(batches > 0, "split guard guarantees at least one full batch");
        let epoch_loss = loss_sum / batches as f64;

        let val_metric = if val_clouds.is_empty() {
            -epoch_loss
        } else {
            held_out_metric(net, &mut pset, &val_clouds, catalog, cfg.batch_size)?
        };
        if val_metric > best {
            best = val_metric;
            if let Some(path) = ckpt_path {
                save_checkpoint(path, &net.cfg, &pset, &rng)?;
            }
        }
        stats.push(EpochStat {
            epoch,
            loss: epoch_loss,
            lr: lr_e,
            val_metric,
            wall_clock_s: t0.elapsed().as_secs_f64(),
        });
    }

    let final_eval: Vec<&PointCloud> = if val_clouds.is_empty() {
        fit_idx.iter().map(|&i| &clouds[i]).collect()
    } else {
        val_clouds
    };
    let wall_clock_s = stats.iter().map(|e| e.wall_clock_s).sum();
    let report = match task {
        Task::Classification => {
            let m = evaluate_classification(net, &mut pset, &final_eval, cfg.batch_size)?;
            MetricReport {
                epochs: stats,
                oa: m.oa,
                macc: m.macc,
                miou: None,
                class_breakdown: m.per_class,
                category_breakdown: vec![],
                wall_clock_s,
                fingerprint,
            }
        }
        _ => {
            let catalog = catalog.expect("segmentation catalog resolved above");
            let m =
                evaluate_part_segmentation(net, &mut pset, &final_eval, catalog, cfg.batch_size)?;
            MetricReport {
                epochs: stats,
                oa: m.point_oa,
                macc: m.part_macc,
                miou: Some(m.miou),
                class_breakdown: vec![],
                category_breakdown: m.per_category,
                wall_clock_s,
                fingerprint,
            }
        }
    };
    report.validate()?;
    Ok((pset, report))
}
