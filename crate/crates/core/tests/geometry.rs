use enzyme_core::geometry::{
    distance, init_coordinates, knn, random_rigid, Coordinates, Point, CA_SPACING,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Coordinates {
    Coordinates::new(
        (0..n)
            .map(|_| [(); 3].map(|_| rng.random_range(-15.0..15.0)))
            .collect(),
    )
    .unwrap()
}

/// Sort every (i, j) pair by full distance and take the first K per node.
fn brute_force_knn(pts: &[Point], k: usize) -> Vec<Vec<usize>> {
    let n = pts.len();
    let mut pairs: Vec<(usize, f64, usize)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = ((pts[i][0] - pts[j][0]).powi(2)
                    + (pts[i][1] - pts[j][1]).powi(2)
                    + (pts[i][2] - pts[j][2]).powi(2))
                .sqrt();
                pairs.push((i, d, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    (0..n)
        .map(|i| {
            pairs
                .iter()
                .filter(|p| p.0 == i)
                .take(k.min(n - 1))
                .map(|p| p.2)
                .collect()
        })
        .collect()
}

#[test]
fn knn_matches_all_pairs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let c = random_points(20, &mut rng);
    assert_eq!(knn(&c, 5).unwrap().lists(), brute_force_knn(c.points(), 5).as_slice());
}

#[test]
fn mean_rotation_angle_matches_uniform_so3() {
    // For Haar-uniform rotations the angle density is (1 - cos θ)/π on [0, π],
    // whose mean is π/2 + 2/π.
    let expected = (std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI).to_degrees();
    assert!((expected - 126.5).abs() < 0.05);
    let mean: f64 = (0..1000u64)
        .map(|s| random_rigid(s).angle().to_degrees())
        .sum::<f64>()
        / 1000.0;
    assert!((mean - expected).abs() < 3.0, "mean angle {mean}");
}

#[test]
fn free_residues_are_exactly_one_spacing_from_predecessor() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let n = rng.random_range(2..60);
        let mut given: Vec<(usize, Point)> = Vec::new();
        for i in 0..n {
            if rng.random_bool(0.3) {
                given.push((i, [(); 3].map(|_| rng.random_range(-30.0..30.0))));
            }
        }
        let out = init_coordinates(&given, n, trial).unwrap();
        let fixed: Vec<usize> = given.iter().map(|g| g.0).collect();
        for i in 0..n {
            if let Some(g) = given.iter().find(|g| g.0 == i) {
                assert_eq!(out.points()[i], g.1);
                continue;
            }
            let prev = if i == 0 { [0.0; 3] } else { out.points()[i - 1] };
            let d = distance(&out.points()[i], &prev);
            assert!((d - CA_SPACING).abs() < 1e-12, "trial {trial} i {i} fixed {fixed:?}: {d}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_motion_preserves_distances_and_neighbors(seed in 0u64..10_000, n in 2usize..30, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_points(n, &mut rng);
        let rigid = random_rigid(seed ^ 0xA5A5);
        let moved = c.transformed(&rigid);
        for i in 0..n {
            for j in 0..n {
                let before = distance(&c.points()[i], &c.points()[j]);
                let after = distance(&moved.points()[i], &moved.points()[j]);
                prop_assert!((before - after).abs() <= 1e-9);
            }
        }
        prop_assert_eq!(knn(&c, k).unwrap(), knn(&moved, k).unwrap());
    }

    #[test]
    fn knn_lists_have_expected_size_and_exclude_self(seed in 0u64..10_000, n in 2usize..25, k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = knn(&random_points(n, &mut rng), k).unwrap();
        for i in 0..n {
            prop_assert_eq!(g.neighbors(i).len(), k.min(n - 1));
            prop_assert!(!g.neighbors(i).contains(&i));
        }
    }
}

#[test]
fn chain_init_ties_resolve_the_same_after_rigid_motion() {
    for seed in 0..50 {
        let coords = init_coordinates(&[], 25, seed).unwrap();
        let moved = coords.transformed(&random_rigid(seed + 1000));
        for k in 1..6 {
            assert_eq!(knn(&coords, k).unwrap(), knn(&moved, k).unwrap());
        }
    }
}
