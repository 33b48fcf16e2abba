//! Uniform-by-area surface sampling from triangle meshes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Mesh, PointCloud};
use crate::error::{Error, Result};

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}

/// Samples `n` points without normalizing. Zero-area triangles are dropped
/// first; per point the draws are (triangle selector, r₁, r₂) with the
/// square-root barycentric map u = 1−√r₁, v = r₂√r₁.
fn sample_raw(mesh: &Mesh, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut kept = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0f64;
    for face in &mesh.faces {
        let area = triangle_area(mesh.vertex(face[0]), mesh.vertex(face[1]), mesh.vertex(face[2]));
        if area > 0.0 {
            total += area;
            cumulative.push(total);
            kept.push(*face);
        }
    }
    if kept.is_empty() {
        return Err(Error::Config(
            "mesh has no triangles with positive area".into(),
        ));
    }
    let mut coords = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let pick = rng.gen_range(0.0..total);
        let t = cumulative.partition_point(|&c| c <= pick);
        let face = kept[t.min(kept.len() - 1)];
        let (a, b, c) = (mesh.vertex(face[0]), mesh.vertex(face[1]), mesh.vertex(face[2]));
        let r1: f64 = rng.gen_range(0.0..1.0);
        let r2: f64 = rng.gen_range(0.0..1.0);
        let u = 1.0 - r1.sqrt();
        let v = r2 * r1.sqrt();
        for axis in 0..3 {
            coords.push(a[axis] + u * (b[axis] - a[axis]) + v * (c[axis] - a[axis]));
        }
    }
    Ok(coords)
}

/// Samples `n` points uniformly by surface area and normalizes the result to
/// the unit sphere (centroid at the origin, max norm 1).
pub fn sample_surface_uniform(mesh: &Mesh, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let mut cloud = PointCloud::new(sample_raw(mesh, n, rng)?)?;
    cloud.normalize();
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn unit_right_triangle() -> Mesh {
        Mesh {
            vertices: vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            faces: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn centroid_of_triangle_samples() {
        let mesh = unit_right_triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 100_000;
        let coords = sample_raw(&mesh, n, &mut rng).unwrap();
        let mut mean = [0.0f64; 3];
        for p in coords.chunks_exact(3) {
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += v / n as f64;
            }
        }
        assert!((mean[0] - 1.0 / 3.0).abs() < 0.02, "x mean {}", mean[0]);
        assert!((mean[1] - 1.0 / 3.0).abs() < 0.02, "y mean {}", mean[1]);
        assert_eq!(mean[2], 0.0);
    }

    #[test]
    fn selection_is_area_proportional() {
        // Two triangles, areas 1 and 3, separated by the sign of x.
        let mesh = Mesh {
            vertices: vec![
                -10.0, 0.0, 0.0, -10.0 + 2.0_f64.sqrt(), 0.0, 0.0, -10.0, 2.0_f64.sqrt(), 0.0,
                10.0, 0.0, 0.0, 10.0 + 6.0_f64.sqrt(), 0.0, 0.0, 10.0, 6.0_f64.sqrt(), 0.0,
            ],
            faces: vec![[0, 1, 2], [3, 4, 5]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let n = 100_000;
        let coords = sample_raw(&mesh, n, &mut rng).unwrap();
        let big = coords.chunks_exact(3).filter(|p| p[0] > 0.0).count();
        let frac = big as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.02, "large-triangle fraction {frac}");
    }

    #[test]
    fn single_sample_normalizes_to_origin() {
        let mesh = unit_right_triangle();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = sample_surface_uniform(&mesh, 1, &mut rng).unwrap();
        assert_eq!(cloud.coords, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_triangles_are_cleaned() {
        // First face has zero area; every sample must come from the second.
        let mesh = Mesh {
            vertices: vec![
                5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0,
                0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0,
            ],
            faces: vec![[0, 1, 2], [3, 4, 5]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let coords = sample_raw(&mesh, 500, &mut rng).unwrap();
        for p in coords.chunks_exact(3) {
            assert_eq!(p[2], 1.0, "sample escaped the planar triangle: {p:?}");
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }

    #[test]
    fn all_degenerate_mesh_rejected() {
        let mesh = Mesh {
            vertices: vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0],
            faces: vec![[0, 1, 2]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = sample_surface_uniform(&mesh, 10, &mut rng).unwrap_err();
        assert!(err.to_string().contains("no triangles"));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mesh = unit_right_triangle();
        let a = sample_surface_uniform(&mesh, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_surface_uniform(&mesh, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
