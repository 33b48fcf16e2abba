//! Data plumbing: point-cloud and mesh containers, normalization, the
//! training augmentations, and batch assembly into tensors.

mod off;
mod pcb;
mod sample;
mod synthetic;

pub use off::{parse_off, serialize_off};
pub use pcb::{pcb_from_bytes, pcb_to_bytes, read_pcb, write_pcb};
pub use sample::sample_surface_uniform;
pub use synthetic::{generate_synthetic_set, sample_shape, ShapeKind, SynthSpec};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::value::Value;

/// One cloud: `n` points with 3 coordinates, optional extra channels
/// (stored row-major per point), and optional labels. Coordinates are kept in
/// f64; the container format stores f32 and lifts losslessly on read.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    /// [n × 3] row-major coordinates.
    pub coords: Vec<f64>,
    /// [n × extra_dim] row-major extra channels (empty when extra_dim = 0).
    pub extra: Vec<f64>,
    pub extra_dim: usize,
    pub class_label: Option<i32>,
    pub part_labels: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::shape(
                "point cloud",
                "coordinate count divisible by 3",
                format!("{} values", coords.len()),
            ));
        }
        Ok(PointCloud {
            coords,
            extra: Vec::new(),
            extra_dim: 0,
            class_label: None,
            part_labels: None,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Channels per point: 3 coordinates plus any extras.
    pub fn input_dim(&self) -> usize {
        3 + self.extra_dim
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.coords.len() % 3 != 0 {
            return Err(Error::shape(
                "point cloud",
                "coordinate count divisible by 3",
                format!("{} values", self.coords.len()),
            ));
        }
        if self.extra.len() != n * self.extra_dim {
            return Err(Error::shape(
                "point cloud extra channels",
                format!("{} values", n * self.extra_dim),
                format!("{} values", self.extra.len()),
            ));
        }
        if let Some(p) = &self.part_labels {
            if p.len() != n {
                return Err(Error::shape(
                    "part labels",
                    format!("{n} labels"),
                    format!("{} labels", p.len()),
                ));
            }
        }
        for (i, &c) in self.coords.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    context: "point cloud coordinates".into(),
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Centers the coordinates on their centroid and scales so the farthest
    /// point sits on the unit sphere. A cloud of identical points collapses to
    /// the origin. Normalizing twice changes nothing beyond ~1e-16 residue.
    pub fn normalize(&mut self) {
        let n = self.len();
        if n == 0 {
            return;
        }
        let mut centroid = [0.0f64; 3];
        for p in self.coords.chunks_exact(3) {
            for (c, &v) in centroid.iter_mut().zip(p) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        let mut max_sq = 0.0f64;
        for p in self.coords.chunks_exact(3) {
            let mut sq = 0.0;
            for (v, c) in p.iter().zip(&centroid) {
                sq += (v - c) * (v - c);
            }
            max_sq = max_sq.max(sq);
        }
        let scale = if max_sq > 0.0 { 1.0 / max_sq.sqrt() } else { 1.0 };
        for p in self.coords.chunks_exact_mut(3) {
            for (v, c) in p.iter_mut().zip(&centroid) {
                *v = (*v - c) * scale;
            }
        }
    }
}

/// Triangle mesh: raw vertices plus index triples.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    /// [v × 3] row-major vertex positions.
    pub vertices: Vec<f64>,
    /// Triangle index triples, each index < vertex count.
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [self.vertices[i * 3], self.vertices[i * 3 + 1], self.vertices[i * 3 + 2]]
    }
}

/// Augmentation ranges, applied in the order scale → shift → jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Per-axis anisotropic scale ~ U[low, high).
    pub scale: (f64, f64),
    /// Per-axis global shift ~ U[−shift, shift).
    pub shift: f64,
    /// Per-coordinate Gaussian jitter std deviation.
    pub sigma: f64,
    /// Jitter magnitude clip.
    pub clip: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            scale: (2.0 / 3.0, 1.5),
            shift: 0.2,
            sigma: 0.01,
            clip: 0.05,
        }
    }
}

impl AugmentPolicy {
    /// Identity policy: [`augment`] returns a bit-identical clone.
    pub fn zeroed() -> Self {
        AugmentPolicy {
            scale: (1.0, 1.0),
            shift: 0.0,
            sigma: 0.0,
            clip: 0.0,
        }
    }
}

/// Returns an augmented copy: coordinates transformed, labels and extra
/// channels untouched. Disabled stages draw nothing from `rng` and skip their
/// arithmetic, so the zeroed policy reproduces the input bit for bit.
pub fn augment(cloud: &PointCloud, rng: &mut ChaCha8Rng, policy: &AugmentPolicy) -> PointCloud {
    let mut out = cloud.clone();
    let (lo, hi) = policy.scale;
    if (lo, hi) != (1.0, 1.0) {
        let mut factors = [0.0f64; 3];
        for f in &mut factors {
            *f = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        }
        for p in out.coords.chunks_exact_mut(3) {
            for (v, &f) in p.iter_mut().zip(&factors) {
                *v *= f;
            }
        }
    }
    if policy.shift != 0.0 {
        let mut offsets = [0.0f64; 3];
        for o in &mut offsets {
            *o = rng.gen_range(-policy.shift..policy.shift);
        }
        for p in out.coords.chunks_exact_mut(3) {
            for (v, &o) in p.iter_mut().zip(&offsets) {
                *v += o;
            }
        }
    }
    if policy.sigma > 0.0 {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, policy.sigma).expect("positive sigma");
        for v in &mut out.coords {
            *v += normal.sample(rng).clamp(-policy.clip, policy.clip);
        }
    }
    out
}

/// Stacks clouds into a [B, N, D] tensor (D = 3 + extras). All clouds must
/// share the same point count and channel layout.
pub fn batch_points<S: Scalar>(clouds: &[&PointCloud]) -> Result<Value<S>> {
    let first = clouds.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (n, d) = (first.len(), first.input_dim());
    let b = clouds.len();
    let mut data = Vec::with_capacity(b * n * d);
    for cloud in clouds {
        if cloud.len() != n || cloud.input_dim() != d {
            return Err(Error::shape(
                "batch clouds",
                format!("{n} points x {d} channels"),
                format!("{} points x {} channels", cloud.len(), cloud.input_dim()),
            ));
        }
        for i in 0..n {
            for &c in &cloud.coords[i * 3..(i + 1) * 3] {
                data.push(S::from_f64(c));
            }
            for &e in &cloud.extra[i * cloud.extra_dim..(i + 1) * cloud.extra_dim] {
                data.push(S::from_f64(e));
            }
        }
    }
    Value::new(vec![b, n, d], data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn cloud_from(coords: &[f64]) -> PointCloud {
        PointCloud::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn normalization_centers_and_scales() {
        let mut c = cloud_from(&[1.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        c.normalize();
        // Centroid (2,0,0), max distance 1 → points land at ±1 on x.
        assert_eq!(c.coords, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

        let mut single = cloud_from(&[5.0, -2.0, 7.0]);
        single.normalize();
        assert_eq!(single.coords, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: Vec<f64> = (0..96).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut once = cloud_from(&coords);
        once.normalize();
        let mut twice = once.clone();
        twice.normalize();
        for (a, b) in once.coords.iter().zip(&twice.coords) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zeroed_policy_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cloud = cloud_from(&coords);
        cloud.class_label = Some(3);
        let before = rng.clone();
        let out = augment(&cloud, &mut rng, &AugmentPolicy::zeroed());
        assert_eq!(out, cloud);
        // No stage drew anything.
        assert_eq!(rng.get_word_pos(), before.get_word_pos());
    }

    #[test]
    fn shift_only_moves_all_points_by_one_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cloud = cloud_from(&coords);
        let policy = AugmentPolicy {
            scale: (1.0, 1.0),
            shift: 0.2,
            sigma: 0.0,
            clip: 0.0,
        };
        let out = augment(&cloud, &mut rng, &policy);
        let delta: Vec<f64> = [0, 1, 2]
            .map(|c| out.coords[c] - cloud.coords[c])
            .to_vec();
        for (i, (a, b)) in cloud.coords.iter().zip(&out.coords).enumerate() {
            // One addition per coordinate: the recovered delta matches the
            // drawn shift up to a single rounding.
            let d = b - a;
            assert!((d - delta[i % 3]).abs() < 1e-12, "constant shift per axis");
            assert!(d.abs() <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn jitter_respects_clip_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cloud = cloud_from(&coords);
        let policy = AugmentPolicy {
            scale: (1.0, 1.0),
            shift: 0.0,
            sigma: 0.1, // large sigma so clipping actually engages
            clip: 0.05,
        };
        let out = augment(&cloud, &mut rng, &policy);
        let mut clipped = 0;
        for (a, b) in cloud.coords.iter().zip(&out.coords) {
            let d = (b - a).abs();
            assert!(d <= 0.05 + 1e-15);
            if (d - 0.05).abs() < 1e-12 {
                clipped += 1;
            }
        }
        assert!(clipped > 0, "sigma 0.1 with clip 0.05 must clip some draws");
    }

    #[test]
    fn augmentation_preserves_labels_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cloud = cloud_from(&[0.0; 12]);
        cloud.class_label = Some(7);
        cloud.part_labels = Some(vec![0, 1, 1, 0]);
        let out = augment(&cloud, &mut rng, &AugmentPolicy::default());
        assert_eq!(out.len(), 4);
        assert_eq!(out.class_label, Some(7));
        assert_eq!(out.part_labels, cloud.part_labels);
    }

    #[test]
    fn batch_assembly_interleaves_extras() {
        let mut a = cloud_from(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        a.extra = vec![10.0, 20.0];
        a.extra_dim = 1;
        let mut b = cloud_from(&[7.0, 8.0, 9.0, 1.5, 2.5, 3.5]);
        b.extra = vec![30.0, 40.0];
        b.extra_dim = 1;
        let v: Value<f64> = batch_points(&[&a, &b]).unwrap();
        assert_eq!(v.shape(), &[2, 2, 4]);
        assert_eq!(
            v.data(),
            &[1.0, 2.0, 3.0, 10.0, 4.0, 5.0, 6.0, 20.0, 7.0, 8.0, 9.0, 30.0, 1.5, 2.5, 3.5, 40.0]
        );
        let c = cloud_from(&[0.0, 0.0, 0.0]);
        assert!(batch_points::<f64>(&[&a, &c]).is_err());
    }
}
