//! Coordinate-space utilities: neighbor selection, rigid transforms and the
//! chain-growing initialisation for residues without given coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::{NumericsError, Tensor};

/// Typical distance between consecutive Cα atoms, in Ångström.
pub const CA_SPACING: f64 = 3.75;

pub type Point = [f64; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("need at least 2 points for a neighbor graph, got {0}")]
    InsufficientPoints(usize),
    #[error("neighbor count must be at least 1")]
    ZeroNeighbors,
    #[error("index {index} outside a chain of {len} residues")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("coordinates must be finite (row {0})")]
    NonFinite(usize),
}

/// Cα positions, one row per residue.
#[derive(Clone, Debug, PartialEq)]
pub struct Coordinates {
    points: Vec<Point>,
}

impl Coordinates {
    pub fn new(points: Vec<Point>) -> Result<Self, GeometryError> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::from_parts(vec![self.points.len(), 3], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, NumericsError> {
        if t.shape().len() != 2 || t.cols() != 3 {
            return Err(NumericsError::Shape {
                op: "coordinates",
                detail: format!("expected N×3, got {:?}", t.shape()),
            });
        }
        Ok(Self {
            points: t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub fn transformed(&self, rigid: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| rigid.apply(p)).collect(),
        }
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Rotation (proper, det = +1) followed by translation.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation matrix of a (not necessarily normalised) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> Self {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / norm);
        let rotation = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotate(&self, p: &Point) -> Point {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    pub fn apply(&self, p: &Point) -> Point {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// max |RᵀR - I|
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// Rotation angle in radians, from the trace.
    pub fn angle(&self) -> f64 {
        let r = &self.rotation;
        let trace = r[0][0] + r[1][1] + r[2][2];
        ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Uniform random rotation (normalised Gaussian quaternion) with a
/// translation drawn uniformly from [-10, 10] Å per axis.
pub fn random_rigid(seed: u64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rigid_with(&mut rng)
}

pub fn random_rigid_with<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    let q: [f64; 4] = loop {
        let q = [(); 4].map(|_| rng.sample::<f64, _>(StandardNormal));
        if q.iter().map(|v| v * v).sum::<f64>() > 1e-12 {
            break q;
        }
    };
    let translation = [(); 3].map(|_| rng.random_range(-10.0..=10.0));
    RigidTransform::from_quaternion(q, translation)
}

/// For each node, up to `k` nearest other nodes ordered by distance then index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Flattened (source, neighbor) edge list in node-major order.
    pub fn edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            for &k in list {
                src.push(i);
                dst.push(k);
            }
        }
        (src, dst)
    }

    /// Build from explicit lists, e.g. a fully connected small molecule.
    pub fn from_lists(neighbors: Vec<Vec<usize>>) -> Self {
        Self { neighbors }
    }

    pub fn fully_connected(n: usize) -> Self {
        Self {
            neighbors: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }
}

/// Squared distances within this relative band of the first member of a run
/// count as equal. Chain initialisation puts both sequence neighbours at
/// exactly [`CA_SPACING`], and rounding after a rigid motion must not reorder them.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Within each run of (relatively) equal distances in a sorted candidate
/// list, order by node index.
fn order_ties_by_index(cand: &mut [(f64, usize)]) {
    let mut start = 0;
    while start < cand.len() {
        let limit = cand[start].0 * (1.0 + TIE_TOLERANCE) + f64::MIN_POSITIVE;
        let mut end = start + 1;
        while end < cand.len() && cand[end].0 <= limit {
            end += 1;
        }
        cand[start..end].sort_by_key(|c| c.1);
        start = end;
    }
}

/// K nearest neighbours by Euclidean distance, excluding self, ties to the
/// lower index. `k` is clamped to `N - 1`.
pub fn knn(coords: &Coordinates, k: usize) -> Result<NeighborGraph, GeometryError> {
    let n = coords.len();
    if n < 2 {
        return Err(GeometryError::InsufficientPoints(n));
    }
    if k == 0 {
        return Err(GeometryError::ZeroNeighbors);
    }
    let take = k.min(n - 1);
    let pts = coords.points();
    let neighbors = (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&pts[i], &pts[j]), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order_ties_by_index(&mut cand);
            cand.truncate(take);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborGraph { neighbors })
}

/// Initial chain coordinates. Residues listed in `given` keep their
/// positions exactly; every other residue `i` is placed at a point on the
/// sphere of radius [`CA_SPACING`] around residue `i - 1` (the origin for
/// `i = 0`), with polar angle ~ U(0, π) and azimuth ~ U(0, 2π).
pub fn init_coordinates(
    given: &[(usize, Point)],
    n: usize,
    seed: u64,
) -> Result<Coordinates, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_coordinates_with(given, n, &mut rng)
}

pub fn init_coordinates_with<R: Rng + ?Sized>(
    given: &[(usize, Point)],
    n: usize,
    rng: &mut R,
) -> Result<Coordinates, GeometryError> {
    let mut fixed: Vec<Option<Point>> = vec![None; n];
    for &(i, p) in given {
        if i >= n {
            return Err(GeometryError::IndexOutOfRange { index: i, len: n });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        fixed[i] = Some(p);
    }
    let mut points: Vec<Point> = Vec::with_capacity(n);
    for slot in fixed {
        let p = match slot {
            Some(p) => p,
            None => {
                let prev = points.last().copied().unwrap_or([0.0; 3]);
                let polar = rng.random_range(0.0..std::f64::consts::PI);
                let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
                [
                    prev[0] + CA_SPACING * polar.sin() * azimuth.cos(),
                    prev[1] + CA_SPACING * polar.sin() * azimuth.sin(),
                    prev[2] + CA_SPACING * polar.cos(),
                ]
            }
        };
        points.push(p);
    }
    Ok(Coordinates { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(n: usize, seed: u64) -> Coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Coordinates::new(
            (0..n)
                .map(|_| [(); 3].map(|_| rng.random_range(-20.0..20.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_points_are_mutual_neighbors() {
        let c = Coordinates::new(vec![[0.0; 3], [1.0, 2.0, 3.0]]).unwrap();
        let g = knn(&c, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn large_k_is_clamped_to_everyone_else() {
        let c = random_points(6, 1);
        let g = knn(&c, 30).unwrap();
        for i in 0..6 {
            let mut got = g.neighbors(i).to_vec();
            got.sort();
            let want: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn knn_errors() {
        let one = Coordinates::new(vec![[0.0; 3]]).unwrap();
        assert_eq!(knn(&one, 1), Err(GeometryError::InsufficientPoints(1)));
        let two = random_points(2, 2);
        assert_eq!(knn(&two, 0), Err(GeometryError::ZeroNeighbors));
    }

    #[test]
    fn ties_break_on_lower_index() {
        // 1, 2 and 3 are all at distance 1 from node 0.
        let c = Coordinates::new(vec![
            [0.0; 3],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(knn(&c, 2).unwrap().neighbors(0), &[1, 2]);
    }

    #[test]
    fn random_rigid_is_deterministic_and_proper() {
        let a = random_rigid(17);
        assert_eq!(a, random_rigid(17));
        assert!(a.orthonormality_error() < 1e-10);
        assert!((a.determinant() - 1.0).abs() < 1e-10);
        assert!(a.translation.iter().all(|t| (-10.0..=10.0).contains(t)));
    }

    #[test]
    fn all_given_positions_pass_through() {
        let pts = random_points(5, 3);
        let given: Vec<(usize, Point)> = pts.points().iter().copied().enumerate().collect();
        let out = init_coordinates(&given, 5, 9).unwrap();
        assert_eq!(out, pts);
    }

    #[test]
    fn free_residue_at_chain_start_sits_on_sphere_around_origin() {
        let out = init_coordinates(&[(2, [5.0, 5.0, 5.0])], 4, 4).unwrap();
        let r0 = distance(&out.points()[0], &[0.0; 3]);
        assert!((r0 - CA_SPACING).abs() < 1e-12, "{r0}");
        assert!((distance(&out.points()[1], &out.points()[0]) - CA_SPACING).abs() < 1e-12);
        assert_eq!(out.points()[2], [5.0, 5.0, 5.0]);
        assert!((distance(&out.points()[3], &out.points()[2]) - CA_SPACING).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_motif_index() {
        assert_eq!(
            init_coordinates(&[(7, [0.0; 3])], 5, 0),
            Err(GeometryError::IndexOutOfRange { index: 7, len: 5 })
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let given = [(3, [1.0, -2.0, 0.5])];
        assert_eq!(
            init_coordinates(&given, 12, 77).unwrap(),
            init_coordinates(&given, 12, 77).unwrap()
        );
    }
}
