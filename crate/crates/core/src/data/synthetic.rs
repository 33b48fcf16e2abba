//! Analytic shape generators for desk-scale experiments: four single-label
//! classes (sphere, cube, torus, plane) and the two-part "lollipop"
//! (sphere head + cylinder stick) for segmentation. Surface noise displaces
//! each point along its outward normal by N(0, σ²) clipped to ±3σ, so a noisy
//! sphere's radius stays within 3σ of the true radius by construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::PointCloud;
use crate::error::{Error, Result};

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.4;
const LOLLIPOP_HEAD_RADIUS: f64 = 0.35;
const LOLLIPOP_HEAD_CENTER_Z: f64 = 0.55;
const LOLLIPOP_STICK_RADIUS: f64 = 0.08;
const LOLLIPOP_STICK_Z: (f64, f64) = (-1.0, 0.2);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus,
    Plane,
    /// Two-part segmentation shape: part 0 = head, part 1 = stick.
    Lollipop,
}

impl ShapeKind {
    pub fn token(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
            ShapeKind::Lollipop => "lollipop",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "torus" => Ok(ShapeKind::Torus),
            "plane" => Ok(ShapeKind::Plane),
            "lollipop" => Ok(ShapeKind::Lollipop),
            other => Err(Error::Config(format!(
                "unknown shape class '{other}' (expected sphere|cube|torus|plane|lollipop)"
            ))),
        }
    }
}

/// Flat key=value description of a synthetic set. `classes` is required;
/// the rest default to per_class=16, points=256, noise=0.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ShapeKind>,
    pub per_class: usize,
    pub points: usize,
    pub noise: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("synthetic spec lists no classes".into()));
        }
        if self.per_class == 0 || self.points == 0 {
            return Err(Error::Config(
                "synthetic spec needs per_class >= 1 and points >= 1".into(),
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let classes: Vec<&str> = self.classes.iter().map(|c| c.token()).collect();
        format!(
            "classes={}\nnoise={:?}\nper_class={}\npoints={}\n",
            classes.join(","),
            self.noise,
            self.per_class,
            self.points
        )
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut classes = None;
        let mut per_class = 16usize;
        let mut points = 256usize;
        let mut noise = 0.0f64;
        for (i, raw) in text.lines().enumerate() {
            let line_no = (i + 1) as u64;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no as usize,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            let bad = |msg: String| Error::Parse { line: line_no as usize, msg };
            match key.trim() {
                "classes" => {
                    let parsed: Result<Vec<ShapeKind>> = value
                        .split(',')
                        .map(|t| ShapeKind::parse(t.trim()).map_err(|e| bad(e.to_string())))
                        .collect();
                    classes = Some(parsed?);
                }
                "per_class" => {
                    per_class = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("bad integer '{value}'")))?;
                }
                "points" => {
                    points = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("bad integer '{value}'")))?;
                }
                "noise" => {
                    noise = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("bad float '{value}'")))?;
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let spec = SynthSpec {
            classes: classes.ok_or(Error::Parse {
                line: text.lines().count() + 1,
                msg: "missing required key 'classes'".into(),
            })?,
            per_class,
            points,
            noise,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn unit_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let d: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm > 1e-9 {
            return [d[0] / norm, d[1] / norm, d[2] / norm];
        }
    }
}

fn normal_noise(noise: f64, rng: &mut ChaCha8Rng) -> f64 {
    if noise <= 0.0 {
        return 0.0;
    }
    let eps: f64 = StandardNormal.sample(rng);
    (eps * noise).clamp(-3.0 * noise, 3.0 * noise)
}

/// Samples one un-normalized cloud. Lollipop clouds carry part labels
/// (0 = head, 1 = stick); parts are chosen with area-proportional frequency.
pub fn sample_shape(kind: ShapeKind, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut coords = Vec::with_capacity(n * 3);
    let mut parts: Option<Vec<i32>> = matches!(kind, ShapeKind::Lollipop).then(Vec::new);
    for _ in 0..n {
        match kind {
            ShapeKind::Sphere => {
                let d = unit_direction(rng);
                let r = 1.0 + normal_noise(noise, rng);
                coords.extend([r * d[0], r * d[1], r * d[2]]);
            }
            ShapeKind::Cube => {
                // Six equal faces of the side-2 cube centered at the origin.
                let face: u32 = rng.gen_range(0..6);
                let a = rng.gen_range(-1.0..1.0);
                let b = rng.gen_range(-1.0..1.0);
                let axis = (face / 2) as usize;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0.0f64; 3];
                p[axis] = sign * (1.0 + normal_noise(noise, rng));
                p[(axis + 1) % 3] = a;
                p[(axis + 2) % 3] = b;
                coords.extend(p);
            }
            ShapeKind::Torus => {
                // Rejection in φ makes the density uniform in surface area.
                let (big_r, small_r) = (TORUS_MAJOR, TORUS_MINOR);
                let (theta, phi) = loop {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                    let accept: f64 = rng.gen_range(0.0..1.0);
                    if accept <= (big_r + small_r * phi.cos()) / (big_r + small_r) {
                        break (theta, phi);
                    }
                };
                let r = small_r + normal_noise(noise, rng);
                let ring = big_r + r * phi.cos();
                coords.extend([ring * theta.cos(), ring * theta.sin(), r * phi.sin()]);
            }
            ShapeKind::Plane => {
                let x = rng.gen_range(-1.0..1.0);
                let y = rng.gen_range(-1.0..1.0);
                coords.extend([x, y, normal_noise(noise, rng)]);
            }
            ShapeKind::Lollipop => {
                let head_area = 4.0 * std::f64::consts::PI * LOLLIPOP_HEAD_RADIUS.powi(2);
                let stick_area = std::f64::consts::TAU
                    * LOLLIPOP_STICK_RADIUS
                    * (LOLLIPOP_STICK_Z.1 - LOLLIPOP_STICK_Z.0);
                let pick: f64 = rng.gen_range(0.0..1.0);
                if pick < head_area / (head_area + stick_area) {
                    let d = unit_direction(rng);
                    let r = LOLLIPOP_HEAD_RADIUS + normal_noise(noise, rng);
                    coords.extend([
                        r * d[0],
                        r * d[1],
                        LOLLIPOP_HEAD_CENTER_Z + r * d[2],
                    ]);
                    parts.as_mut().expect("lollipop").push(0);
                } else {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let z = rng.gen_range(LOLLIPOP_STICK_Z.0..LOLLIPOP_STICK_Z.1);
                    let r = LOLLIPOP_STICK_RADIUS + normal_noise(noise, rng);
                    coords.extend([r * theta.cos(), r * theta.sin(), z]);
                    parts.as_mut().expect("lollipop").push(1);
                }
            }
        }
    }
    let mut cloud = PointCloud::new(coords).expect("multiple of 3 by construction");
    cloud.part_labels = parts;
    cloud
}

/// Generates `per_class` normalized clouds for every class in order; each
/// cloud's class label is its class's index in the list. Deterministic for a
/// given RNG state.
pub fn generate_synthetic_set(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<PointCloud>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.per_class);
    for (ci, &class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let mut cloud = sample_shape(class, spec.points, spec.noise, rng);
            cloud.normalize();
            cloud.class_label = Some(ci as i32);
            out.push(cloud);
        }
    }
    Ok(out)
}
