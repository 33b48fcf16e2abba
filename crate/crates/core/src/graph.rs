//! Exact k-nearest-neighbor graphs over point features.
//!
//! Distances are squared Euclidean, computed by direct subtraction (one pass
//! per unordered pair, mirrored), so duplicate points get an exact 0 and the
//! matrix is exactly symmetric. Each neighbor row starts with the point itself
//! (the self-loop occupies slot 0 and counts toward k); the remaining k−1
//! slots are the other points ordered by (distance, index) ascending, so ties
//! deterministically favor the lower index.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::value::{fmt_shape, Value};

/// Which tensor the graph was built from. The first feature layer sees
/// features equal to coordinates, so its `Feature` graph coincides with the
/// `Spatial` one; later layers diverge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Feature,
    Spatial,
}

/// Neighbor table for one cloud: row i is `indices[i*k .. (i+1)*k]`, with
/// `indices[i*k] == i` (self-loop at slot 0).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    pub domain: Domain,
    pub indices: Vec<u32>,
}

impl NeighborGraph {
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// Neighbor tables for a batch of B equally-sized clouds, concatenated.
/// Indices are cloud-local (each entry < n), matching [`Tape::gather`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGraph {
    pub batch: usize,
    pub n: usize,
    pub k: usize,
    pub domain: Domain,
    pub indices: Vec<u32>,
}

/// Dense n×n squared-distance matrix of n points with d channels (row-major).
/// Rejects non-finite inputs, reporting the offending flat index.
pub fn pairwise_sq_dist<S: Scalar>(points: &[S], n: usize, d: usize) -> Result<Vec<S>> {
    if points.len() != n * d {
        return Err(Error::shape(
            "pairwise_sq_dist: points",
            format!("{} values (n={} × d={})", n * d, n, d),
            format!("{} values", points.len()),
        ));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite_s()) {
        return Err(Error::NonFinite {
            context: "pairwise_sq_dist: input point".into(),
            index: i,
        });
    }
    let mut dist = vec![S::ZERO; n * n];
    for i in 0..n {
        let a = &points[i * d..(i + 1) * d];
        for j in (i + 1)..n {
            let b = &points[j * d..(j + 1) * d];
            let mut s = S::ZERO;
            for (&av, &bv) in a.iter().zip(b) {
                let diff = av - bv;
                s += diff * diff;
            }
            dist[i * n + j] = s;
            dist[j * n + i] = s;
        }
    }
    Ok(dist)
}

/// Builds the neighbor table from a dense squared-distance matrix.
/// Requires 1 ≤ k ≤ n; slot 0 of each row is the point itself.
pub fn knn_select<S: Scalar>(dist: &[S], n: usize, k: usize, domain: Domain) -> Result<NeighborGraph> {
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if dist.len() != n * n {
        return Err(Error::shape(
            "knn_select: distance matrix",
            format!("{} values ({}×{})", n * n, n, n),
            format!("{} values", dist.len()),
        ));
    }
    let mut indices = vec![0u32; n * k];
    let mut order: Vec<u32> = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        order.clear();
        order.extend((0..n as u32).filter(|&j| j as usize != i));
        let take = k - 1;
        let by_dist_then_index = |&a: &u32, &b: &u32| {
            let da = row[a as usize];
            let db = row[b as usize];
            da.partial_cmp(&db)
                .expect("finite distances")
                .then(a.cmp(&b))
        };
        if take > 0 && take < order.len() {
            order.select_nth_unstable_by(take - 1, by_dist_then_index);
        }
        let sorted = take.min(order.len());
        order[..sorted].sort_unstable_by(by_dist_then_index);
        let out = &mut indices[i * k..(i + 1) * k];
        out[0] = i as u32;
        out[1..].copy_from_slice(&order[..take]);
    }
    Ok(NeighborGraph {
        n,
        k,
        domain,
        indices,
    })
}

/// Convenience: distance matrix + selection for one cloud.
pub fn knn_graph<S: Scalar>(
    points: &[S],
    n: usize,
    d: usize,
    k: usize,
    domain: Domain,
) -> Result<NeighborGraph> {
    let dist = pairwise_sq_dist(points, n, d)?;
    knn_select(&dist, n, k, domain)
}

/// Builds per-cloud graphs from a batched feature tensor [B, N, D].
pub fn knn_batch<S: Scalar>(features: &Value<S>, k: usize, domain: Domain) -> Result<BatchGraph> {
    let shape = features.shape();
    if shape.len() != 3 {
        return Err(Error::shape("knn_batch: features", "[B, N, D]", fmt_shape(shape)));
    }
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let mut indices = Vec::with_capacity(b * n * k);
    for bi in 0..b {
        let cloud = &features.data()[bi * n * d..(bi + 1) * n * d];
        let g = knn_graph(cloud, n, d, k, domain)?;
        indices.extend_from_slice(&g.indices);
    }
    Ok(BatchGraph {
        batch: b,
        n,
        k,
        domain,
        indices,
    })
}

/// Gathers each point's neighbor features: x [B,N,D] → [B,N,k,D].
pub fn gather_neighbors<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    graph: &BatchGraph,
) -> Result<NodeId> {
    let shape = tape.shape(x);
    if shape.len() != 3 || shape[0] != graph.batch || shape[1] != graph.n {
        return Err(Error::shape(
            "gather_neighbors: features",
            format!("[{}, {}, D]", graph.batch, graph.n),
            fmt_shape(shape),
        ));
    }
    tape.gather(x, &graph.indices, graph.k)
}

/// Single-cloud convenience: x [N,D] → [N,k,D].
pub fn gather_neighbors_single<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    graph: &NeighborGraph,
) -> Result<NodeId> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != graph.n {
        return Err(Error::shape(
            "gather_neighbors_single: features",
            format!("[{}, D]", graph.n),
            fmt_shape(&shape),
        ));
    }
    let d = shape[1];
    let lifted = tape.reshape(x, &[1, graph.n, d])?;
    let gathered = tape.gather(lifted, &graph.indices, graph.k)?;
    tape.reshape(gathered, &[graph.n, graph.k, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_of_three_points() {
        // 1-D coordinates 0, 1, 10 with k=2: each row is [self, nearest other].
        let g = knn_graph(&[0.0f64, 1.0, 10.0], 3, 1, 2, Domain::Spatial).unwrap();
        assert_eq!(g.row(0), &[0, 1]);
        assert_eq!(g.row(1), &[1, 0]);
        assert_eq!(g.row(2), &[2, 1]);
    }

    #[test]
    fn distance_matrix_is_symmetric_with_zero_diagonal() {
        let pts = [0.5f64, -1.0, 2.0, 0.5, -1.0, 2.0, 3.0, 0.0, 1.0];
        let d = pairwise_sq_dist(&pts, 3, 3).unwrap();
        for i in 0..3 {
            assert_eq!(d[i * 3 + i], 0.0);
            for j in 0..3 {
                assert_eq!(d[i * 3 + j].to_bits(), d[j * 3 + i].to_bits());
            }
        }
        // Points 0 and 1 are identical: exactly zero, not epsilon.
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn equidistant_ties_pick_the_lower_index() {
        // Point 0 at origin; points 1 and 2 both at distance 1.
        let g = knn_graph(&[0.0f64, -1.0, 1.0], 3, 1, 2, Domain::Feature).unwrap();
        assert_eq!(g.row(0), &[0, 1]);
    }

    #[test]
    fn k_bounds_are_enforced() {
        let pts = [0.0f64, 1.0, 2.0];
        assert!(matches!(
            knn_graph(&pts, 3, 1, 0, Domain::Spatial),
            Err(Error::InvalidK { k: 0, n: 3 })
        ));
        assert!(matches!(
            knn_graph(&pts, 3, 1, 4, Domain::Spatial),
            Err(Error::InvalidK { k: 4, n: 3 })
        ));
        // k == n takes every point.
        let g = knn_graph(&pts, 3, 1, 3, Domain::Spatial).unwrap();
        assert_eq!(g.row(0), &[0, 1, 2]);
        assert_eq!(g.row(2), &[2, 1, 0]);
    }

    #[test]
    fn non_finite_points_are_rejected_with_index() {
        let pts = [0.0f64, f64::NAN, 2.0];
        match pairwise_sq_dist(&pts, 3, 1) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn matches_naive_full_sort_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..50 {
            let n = rng.gen_range(2..=20);
            let d = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=n);
            let pts: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Occasionally plant an exact duplicate to stress tie handling.
            let mut pts = pts;
            if case % 5 == 0 && n >= 2 {
                let (src, dst) = (0, n - 1);
                for c in 0..d {
                    pts[dst * d + c] = pts[src * d + c];
                }
            }
            let g = knn_graph(&pts, n, d, k, Domain::Feature).unwrap();
            for i in 0..n {
                let mut cand: Vec<(f64, u32)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let s: f64 = (0..d)
                            .map(|c| (pts[i * d + c] - pts[j * d + c]).powi(2))
                            .sum();
                        (s, j as u32)
                    })
                    .collect();
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut expected = vec![i as u32];
                expected.extend(cand[..k - 1].iter().map(|&(_, j)| j));
                assert_eq!(g.row(i), &expected[..], "case {case}, row {i}");
            }
        }
    }

    #[test]
    fn batch_graph_matches_per_cloud_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, n, d, k) = (3, 8, 3, 4);
        let data: Vec<f64> = (0..b * n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = Value::<f64>::from_f64s(&[b, n, d], &data).unwrap();
        let bg = knn_batch(&v, k, Domain::Feature).unwrap();
        for bi in 0..b {
            let cloud = &data[bi * n * d..(bi + 1) * n * d];
            let g = knn_graph(cloud, n, d, k, Domain::Feature).unwrap();
            assert_eq!(&bg.indices[bi * n * k..(bi + 1) * n * k], &g.indices[..]);
        }
    }

    #[test]
    fn gather_single_cloud_round_trips_shapes() {
        use crate::tape::Mode;
        let pts = [0.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0];
        let g = knn_graph(&pts, 4, 2, 2, Domain::Feature).unwrap();
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::from_f64s(&[4, 2], &pts).unwrap());
        let nb = gather_neighbors_single(&mut t, x, &g).unwrap();
        assert_eq!(t.shape(nb), &[4, 2, 2]);
        // Row 0's slot 0 is itself.
        assert_eq!(&t.data(nb)[..2], &pts[..2]);
    }
}
