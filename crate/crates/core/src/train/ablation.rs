//! Single-axis ablation sweeps. Each cell overrides exactly one architecture
//! axis on the base configuration and trains with the same seeds, so any
//! difference between rows is attributable to the ablated axis — and the
//! baseline-valued cell of every sweep reproduces the same numbers.

use std::time::Instant;

use crate::data::PointCloud;
use crate::dfa::Aggregation;
use crate::error::{Error, Result};
use crate::models::{parse_domain, ModelConfig, Network, Task};
use crate::scalar::Scalar;

use super::metrics::{evaluate_classification, evaluate_part_segmentation, PartCatalog};
use super::{train, TrainConfig};

/// The five architecture axes a sweep may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    K,
    Aggregation,
    GraphDomain,
    UsePositionEncoding,
    UseLowDimGlobal,
}

impl AblationAxis {
    pub fn token(self) -> &'static str {
        match self {
            AblationAxis::K => "k",
            AblationAxis::Aggregation => "aggregation",
            AblationAxis::GraphDomain => "graph_domain",
            AblationAxis::UsePositionEncoding => "use_position_encoding",
            AblationAxis::UseLowDimGlobal => "use_low_dim_global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(AblationAxis::K),
            "aggregation" => Ok(AblationAxis::Aggregation),
            "graph_domain" => Ok(AblationAxis::GraphDomain),
            "use_position_encoding" => Ok(AblationAxis::UsePositionEncoding),
            "use_low_dim_global" => Ok(AblationAxis::UseLowDimGlobal),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (expected k|aggregation|graph_domain|\
                 use_position_encoding|use_low_dim_global)"
            ))),
        }
    }
}

/// One sweep cell's result. `miou` is filled for segmentation tasks only.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub oa: f64,
    pub macc: f64,
    pub miou: Option<f64>,
    pub wall_clock_s: f64,
}

/// Parses a grid like `"k=4,8;aggregation=max,mean"` into per-axis value
/// lists. Axes may appear once each; every axis needs at least one value.
pub fn parse_grid(spec: &str) -> Result<Vec<(AblationAxis, Vec<String>)>> {
    let mut grid: Vec<(AblationAxis, Vec<String>)> = Vec::new();
    for segment in spec.split(';') {
        let segment = segment.trim();
        if segment.is_empty() {
            return Err(Error::Config("empty segment in ablation grid".into()));
        }
        let (axis_str, values_str) = segment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("ablation segment '{segment}' is not axis=v1,v2")))?;
        let axis = AblationAxis::parse(axis_str.trim())?;
        if grid.iter().any(|(a, _)| *a == axis) {
            return Err(Error::Config(format!("ablation axis '{}' given twice", axis.token())));
        }
        let values: Vec<String> =
            values_str.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!(
                "ablation axis '{}' has an empty value",
                axis.token()
            )));
        }
        grid.push((axis, values));
    }
    Ok(grid)
}

fn parse_switch(value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(Error::Config(format!(
            "ablation switch value '{other}' (expected on|off)"
        ))),
    }
}

/// Clones the base configuration with exactly one axis overridden.
pub fn apply_override(base: &ModelConfig, axis: AblationAxis, value: &str) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    match axis {
        AblationAxis::K => {
            cfg.k = value.parse().map_err(|_| {
                Error::Config(format!("ablation value '{value}' is not a neighbor count"))
            })?;
        }
        AblationAxis::Aggregation => cfg.aggregation = Aggregation::parse(value)?,
        AblationAxis::GraphDomain => cfg.graph_domain = parse_domain(value)?,
        AblationAxis::UsePositionEncoding => cfg.use_position_encoding = parse_switch(value)?,
        AblationAxis::UseLowDimGlobal => cfg.use_low_dim_global = parse_switch(value)?,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains one model per (axis, value, seed) cell — every other setting held
/// at the base configuration — and evaluates it on `test_set`. Rows come out
/// in grid order, values within an axis in given order, seeds innermost.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<S: Scalar>(
    grid: &str,
    base: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    catalog: Option<&PartCatalog>,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let axes = parse_grid(grid)?;
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if test_set.is_empty() {
        return Err(Error::Config("ablation needs a non-empty test set".into()));
    }

    let default_catalog;
    let catalog = match base.task {
        Task::Classification => None,
        Task::PartSegmentation => Some(catalog.ok_or_else(|| {
            Error::Config("part segmentation needs a category-to-parts catalog".into())
        })?),
        Task::SemanticSegmentation => match catalog {
            Some(c) => Some(c),
            None => {
                default_catalog = PartCatalog::single_category(base.num_parts as u32)?;
                Some(&default_catalog)
            }
        },
    };

    let test_refs: Vec<&PointCloud> = test_set.iter().collect();
    let mut rows = Vec::new();
    for (axis, values) in &axes {
        for value in values {
            let cfg = apply_override(base, *axis, value)?;
            for &seed in seeds {
                let t0 = Instant::now();
                let net = Network::build(cfg.clone())?;
                let cell_cfg = TrainConfig { seed, ..tcfg.clone() };
                let (mut pset, _) = train::<S>(&net, train_set, catalog, &cell_cfg, None)?;
                let (oa, macc, miou) = match base.task {
                    Task::Classification => {
                        let m = evaluate_classification(
                            &net,
                            &mut pset,
                            &test_refs,
                            cell_cfg.batch_size,
                        )?;
                        (m.oa, m.macc, None)
                    }
                    _ => {
                        let cat = catalog.expect("resolved above");
                        let m = evaluate_part_segmentation(
                            &net,
                            &mut pset,
                            &test_refs,
                            cat,
                            cell_cfg.batch_size,
                        )?;
                        (m.point_oa, m.part_macc, Some(m.miou))
                    }
                };
                rows.push(AblationRow {
                    axis: axis.token().to_string(),
                    value: value.clone(),
                    seed,
                    oa,
                    macc,
                    miou,
                    wall_clock_s: t0.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}
