//! Evaluation metrics: overall accuracy, class-mean accuracy, per-instance
//! part IoU, and the report type the trainer fills.
//!
//! The pure tally functions are separated from the model-driven evaluators so
//! the arithmetic can be pinned against hand-computed values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_points, PointCloud};
use crate::error::{Error, Result};
use crate::models::{BatchInput, Network, Task};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{Mode, Tape};

/// Maps each category id to the strictly increasing set of global part ids
/// its instances may use. Restricting the per-point argmax to this set is
/// what makes part predictions comparable across categories.
#[derive(Clone, Debug)]
pub struct PartCatalog {
    parts: Vec<Vec<u32>>,
}

impl PartCatalog {
    pub fn new(parts: Vec<Vec<u32>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("part catalog has no categories".into()));
        }
        for (c, set) in parts.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("category {c} has an empty part set")));
            }
            if !set.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(format!(
                    "category {c} part set must be strictly increasing"
                )));
            }
        }
        Ok(PartCatalog { parts })
    }

    /// One category owning parts `0..num_parts` — the scene-segmentation
    /// shape, where every label is available everywhere.
    pub fn single_category(num_parts: u32) -> Result<Self> {
        PartCatalog::new(vec![(0..num_parts).collect()])
    }

    pub fn num_categories(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self, category: usize) -> Result<&[u32]> {
        self.parts.get(category).map(Vec::as_slice).ok_or_else(|| {
            Error::Config(format!(
                "category id {category} out of range ({} categories)",
                self.parts.len()
            ))
        })
    }

    /// Width of the global part-id space: one past the largest id.
    pub fn part_space(&self) -> u32 {
        self.parts
            .iter()
            .filter_map(|s| s.last().copied())
            .max()
            .map_or(0, |m| m + 1)
    }
}

/// Resolves a cloud's category id against a catalog. Clouds without a class
/// label fall back to category 0 when the catalog has exactly one category.
pub fn category_of(cloud: &PointCloud, catalog: &PartCatalog) -> Result<usize> {
    match cloud.class_label {
        Some(c) if c >= 0 => {
            let c = c as usize;
            if c >= catalog.num_categories() {
                return Err(Error::Config(format!(
                    "category id {c} out of range ({} categories)",
                    catalog.num_categories()
                )));
            }
            Ok(c)
        }
        Some(c) => Err(Error::Config(format!("negative category id {c}"))),
        None if catalog.num_categories() == 1 => Ok(0),
        None => Err(Error::Config(
            "cloud carries no category id but the catalog has several categories".into(),
        )),
    }
}

/// Per-class tally from a classification evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.support as f64
    }
}

#[derive(Clone, Debug)]
pub struct ClsMetrics {
    /// Correct predictions over all instances.
    pub oa: f64,
    /// Unweighted mean of per-class accuracies, over classes that appear.
    pub macc: f64,
    /// One entry per class with nonzero support, ascending by class id.
    pub per_class: Vec<ClassAccuracy>,
}

/// Tallies predicted against true class ids. Classes absent from `gt` are
/// excluded from the class-mean accuracy.
pub fn classification_metrics(
    pred: &[usize],
    gt: &[usize],
    num_classes: usize,
) -> Result<ClsMetrics> {
    if gt.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            pred.len(),
            gt.len()
        )));
    }
    let mut support = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= num_classes || p >= num_classes {
            return Err(Error::Config(format!(
                "class id out of range: prediction {p}, label {g}, {num_classes} classes"
            )));
        }
        support[g] += 1;
        if p == g {
            correct[g] += 1;
        }
    }
    let total_correct: usize = correct.iter().sum();
    let per_class: Vec<ClassAccuracy> = (0..num_classes)
        .filter(|&c| support[c] > 0)
        .map(|c| ClassAccuracy { class: c, support: support[c], correct: correct[c] })
        .collect();
    let macc =
        per_class.iter().map(ClassAccuracy::accuracy).sum::<f64>() / per_class.len() as f64;
    Ok(ClsMetrics { oa: total_correct as f64 / gt.len() as f64, macc, per_class })
}

/// Shape IoU for one instance: per-part intersection over union across the
/// category's parts, with a part absent from both prediction and ground
/// truth counting as a perfect 1, averaged over the parts.
pub fn instance_iou(pred: &[i32], gt: &[i32], parts: &[u32]) -> Result<f64> {
    if gt.is_empty() || pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "instance IoU needs matching non-empty label vectors ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    for &l in pred.iter().chain(gt) {
        if l < 0 || !parts.contains(&(l as u32)) {
            return Err(Error::Config(format!(
                "part label {l} outside the category's part set {parts:?}"
            )));
        }
    }
    let mut sum = 0.0;
    for &part in parts {
        let p = part as i32;
        let inter = pred.iter().zip(gt).filter(|&(&a, &b)| a == p && b == p).count();
        let union = pred.iter().zip(gt).filter(|&(&a, &b)| a == p || b == p).count();
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / parts.len() as f64)
}

/// Mean IoU over one category's instances.
#[derive(Clone, Debug)]
pub struct CategoryIoU {
    pub category: usize,
    pub instances: usize,
    pub miou: f64,
}

#[derive(Clone, Debug)]
pub struct SegMetrics {
    /// Mean of shape IoUs over all instances.
    pub miou: f64,
    /// Point-level overall accuracy.
    pub point_oa: f64,
    /// Unweighted mean of per-part point recall, over parts that appear.
    pub part_macc: f64,
    /// One entry per category that appears, ascending by category id.
    pub per_category: Vec<CategoryIoU>,
}

fn argmax_row<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the classifier in evaluation mode over `clouds` in chunks of
/// `batch_size` and tallies argmax predictions against the class labels.
/// Never mutates parameters or normalization statistics.
pub fn evaluate_classification<S: Scalar>(
    net: &Network,
    pset: &mut ParamSet<S>,
    clouds: &[&PointCloud],
    batch_size: usize,
) -> Result<ClsMetrics> {
    if net.cfg.task != Task::Classification {
        return Err(Error::Config(format!(
            "classification metrics need a classification model, got task '{}'",
            net.cfg.task.token()
        )));
    }
    if clouds.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be at least 1".into()));
    }
    let c = net.cfg.num_classes;
    let mut gt = Vec::with_capacity(clouds.len());
    for cloud in clouds {
        match cloud.class_label {
            Some(l) if l >= 0 && (l as usize) < c => gt.push(l as usize),
            Some(l) => {
                return Err(Error::Config(format!("class label {l} out of range ({c} classes)")))
            }
            None => return Err(Error::Config("cloud is missing its class label".into())),
        }
    }
    // Evaluation-mode forward passes draw nothing from an RNG; this one only
    // satisfies the signature.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pred = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(batch_size) {
        let points = batch_points::<S>(chunk)?;
        let mut tape = Tape::new(Mode::Eval);
        let logits =
            net.forward(&mut tape, pset, &BatchInput { points: &points, categories: None }, &mut rng)?;
        let data = tape.data(logits);
        for row in 0..chunk.len() {
            pred.push(argmax_row(&data[row * c..(row + 1) * c]));
        }
    }
    classification_metrics(&pred, &gt, c)
}

/// Runs the segmenter in evaluation mode, restricts each point's argmax to
/// the instance category's part set, and reports mean IoU plus point-level
/// accuracies. Never mutates parameters or normalization statistics.
pub fn evaluate_part_segmentation<S: Scalar>(
    net: &Network,
    pset: &mut ParamSet<S>,
    clouds: &[&PointCloud],
    catalog: &PartCatalog,
    batch_size: usize,
) -> Result<SegMetrics> {
    if !net.cfg.task.is_segmentation() {
        return Err(Error::Config(format!(
            "segmentation metrics need a segmentation model, got task '{}'",
            net.cfg.task.token()
        )));
    }
    if clouds.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be at least 1".into()));
    }
    let p_total = net.cfg.num_parts;
    if catalog.part_space() as usize > p_total {
        return Err(Error::Config(format!(
            "catalog spans {} part ids but the model emits {p_total}",
            catalog.part_space()
        )));
    }
    let mut categories = Vec::with_capacity(clouds.len());
    for cloud in clouds {
        if cloud.part_labels.is_none() {
            return Err(Error::Config("cloud is missing its part labels".into()));
        }
        categories.push(category_of(cloud, catalog)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ious: Vec<(usize, f64)> = Vec::with_capacity(clouds.len());
    let mut point_correct = 0usize;
    let mut point_total = 0usize;
    let mut part_support = vec![0usize; p_total];
    let mut part_correct = vec![0usize; p_total];

    for (chunk_no, chunk) in clouds.chunks(batch_size).enumerate() {
        let points = batch_points::<S>(chunk)?;
        let cats: Option<Vec<u32>> = net.cfg.use_category_vector.then(|| {
            chunk
                .iter()
                .enumerate()
                .map(|(i, _)| categories[chunk_no * batch_size + i] as u32)
                .collect()
        });
        let mut tape = Tape::new(Mode::Eval);
        let input = BatchInput { points: &points, categories: cats.as_deref() };
        let logits = net.forward(&mut tape, pset, &input, &mut rng)?;
        let n = tape.shape(logits)[1];
        let data = tape.data(logits);
        for (i, cloud) in chunk.iter().enumerate() {
            let cat = categories[chunk_no * batch_size + i];
            let parts = catalog.parts(cat)?;
            let gt = cloud.part_labels.as_ref().expect("checked above");
            let mut pred = Vec::with_capacity(n);
            for pt in 0..n {
                let row = &data[(i * n + pt) * p_total..(i * n + pt + 1) * p_total];
                // Argmax over the category's parts only; first index wins ties.
                let mut best = parts[0];
                for &part in &parts[1..] {
                    if row[part as usize] > row[best as usize] {
                        best = part;
                    }
                }
                pred.push(best as i32);
            }
            ious.push((cat, instance_iou(&pred, gt, parts)?));
            for (&pl, &gl) in pred.iter().zip(gt) {
                part_support[gl as usize] += 1;
                if pl == gl {
                    point_correct += 1;
                    part_correct[gl as usize] += 1;
                }
                point_total += 1;
            }
        }
    }

    let miou = ious.iter().map(|&(_, v)| v).sum::<f64>() / ious.len() as f64;
    let mut per_category = Vec::new();
    for cat in 0..catalog.num_categories() {
        let vals: Vec<f64> =
            ious.iter().filter(|&&(c, _)| c == cat).map(|&(_, v)| v).collect();
        if !vals.is_empty() {
            per_category.push(CategoryIoU {
                category: cat,
                instances: vals.len(),
                miou: vals.iter().sum::<f64>() / vals.len() as f64,
            });
        }
    }
    let seen: Vec<usize> = (0..p_total).filter(|&p| part_support[p] > 0).collect();
    let part_macc = seen
        .iter()
        .map(|&p| part_correct[p] as f64 / part_support[p] as f64)
        .sum::<f64>()
        / seen.len() as f64;
    Ok(SegMetrics {
        miou,
        point_oa: point_correct as f64 / point_total as f64,
        part_macc,
        per_category,
    })
}

/// One training epoch's summary row.
#[derive(Clone, Debug)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Held-out metric used for best-checkpoint selection: overall accuracy
    /// for classification, mean IoU for segmentation. With no validation
    /// split this is the negated training loss, so "best" = lowest loss.
    pub val_metric: f64,
    pub wall_clock_s: f64,
}

/// Everything a finished run reports: the per-epoch trace, final metrics on
/// the held-out split, and the configuration fingerprint that ties the file
/// back to the exact run settings.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub epochs: Vec<EpochStat>,
    pub oa: f64,
    pub macc: f64,
    pub miou: Option<f64>,
    pub class_breakdown: Vec<ClassAccuracy>,
    pub category_breakdown: Vec<CategoryIoU>,
    pub wall_clock_s: f64,
    pub fingerprint: String,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
            Ok(())
        };
        unit("overall accuracy", self.oa)?;
        unit("class-mean accuracy", self.macc)?;
        if let Some(m) = self.miou {
            unit("mean IoU", m)?;
        }
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch != i {
                return Err(Error::Config(format!(
                    "epoch column not contiguous: row {i} says {}",
                    e.epoch
                )));
            }
        }
        Ok(())
    }
}
