mod common;

use common::*;
use delineate_core::geometry::{dilate, fill_holes, intersect, smooth, subtract, union};
use delineate_core::volume::{BinaryMask, Grid, MarginVector};
use proptest::prelude::*;

fn sparse_case(max_dim: usize) -> impl Strategy<Value = (BinaryMask, MarginVector)> {
    let grid = (
        prop::array::uniform3(1..=max_dim),
        prop::array::uniform3(prop_oneof![0.5f64..3.0, prop::sample::select(vec![0.5, 1.0, 1.5, 3.0])]),
    )
        .prop_map(|(d, s)| Grid::new(d, s, [0.0; 3]).unwrap());
    (grid, 0.0f64..0.15)
        .prop_flat_map(|(g, p)| mask_on(g, p))
        .prop_flat_map(|m| (Just(m), margin_strategy()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn dilate_matches_oracle((mask, m) in sparse_case(32)) {
        prop_assert_eq!(dilate(&mask, &m), oracle_dilate(&mask, &m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilate_is_extensive((mask, m) in sparse_case(20)) {
        prop_assert!(mask.is_subset_of(&dilate(&mask, &m)).unwrap());
    }

    #[test]
    fn zero_margin_is_identity(mask in mask_strategy(20)) {
        prop_assert_eq!(dilate(&mask, &MarginVector::zero()), mask);
    }

    #[test]
    fn dilate_is_monotone((a, b) in mask_pair(16), m in margin_strategy()) {
        let sub = intersect(&a, &b).unwrap();
        prop_assert!(dilate(&sub, &m).is_subset_of(&dilate(&a, &m)).unwrap());
    }

    #[test]
    fn dilate_distributes_over_union((a, b) in mask_pair(20), m in margin_strategy()) {
        let lhs = dilate(&union(&[&a, &b]).unwrap(), &m);
        let rhs = union(&[&dilate(&a, &m), &dilate(&b, &m)]).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn subtract_removes_everything_of_b((a, b) in mask_pair(20)) {
        let d = subtract(&a, &b).unwrap();
        prop_assert!(intersect(&d, &b).unwrap().is_empty());
        prop_assert!(d.is_subset_of(&a).unwrap());
    }

    #[test]
    fn fill_holes_is_idempotent(mask in mask_strategy(16)) {
        let once = fill_holes(&mask);
        prop_assert!(mask.is_subset_of(&once).unwrap());
        prop_assert_eq!(fill_holes(&once), once);
    }

    #[test]
    fn smooth_is_idempotent(mask in mask_strategy(16)) {
        let once = smooth(&mask);
        prop_assert_eq!(smooth(&once), once);
    }

    #[test]
    fn boolean_algebra((a, b, c) in mask_triple(16)) {
        let u = |x: &BinaryMask, y: &BinaryMask| union(&[x, y]).unwrap();
        let i = |x: &BinaryMask, y: &BinaryMask| intersect(x, y).unwrap();
        prop_assert_eq!(u(&a, &b), u(&b, &a));
        prop_assert_eq!(i(&a, &b), i(&b, &a));
        prop_assert_eq!(u(&u(&a, &b), &c), u(&a, &u(&b, &c)));
        prop_assert_eq!(i(&i(&a, &b), &c), i(&a, &i(&b, &c)));
        prop_assert_eq!(u(&a, &a), a.clone());
        prop_assert_eq!(i(&a, &a), a.clone());
        prop_assert_eq!(union(&[&a, &b, &c]).unwrap(), u(&u(&a, &b), &c));
    }

    #[test]
    fn voxel_count_counts_unique_voxels(
        dims in prop::array::uniform3(1usize..=12),
        raw in prop::collection::vec(prop::array::uniform3(0usize..12), 0..200),
    ) {
        let g = Grid::unit(dims).unwrap();
        let pts: Vec<[usize; 3]> = raw.into_iter().filter(|p| g.contains(*p)).collect();
        let unique: std::collections::BTreeSet<_> = pts.iter().copied().collect();
        let m = BinaryMask::from_voxels(g, pts).unwrap();
        prop_assert_eq!(m.voxel_count(), unique.len());
        prop_assert_eq!(m.voxels().collect::<std::collections::BTreeSet<_>>(), unique);
    }

    #[test]
    fn physical_volume_is_linear(mask in mask_strategy(12)) {
        let want = mask.voxel_count() as f64 * mask.grid().voxel_volume_mm3();
        prop_assert!((mask.physical_volume_mm3() - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn byte_round_trip(mask in mask_strategy(20)) {
        prop_assert_eq!(BinaryMask::from_bytes(*mask.grid(), &mask.to_bytes()).unwrap(), mask);
    }
}

#[test]
fn linear_index_round_trip_exhaustive() {
    for dims in [[1, 1, 1], [64, 1, 1], [1, 64, 1], [1, 1, 64], [63, 65, 2], [64, 64, 64]] {
        let g = Grid::unit(dims).unwrap();
        for l in 0..g.len() {
            let p = g.voxel_index(l);
            assert!(g.contains(p));
            assert_eq!(g.linear_index(p), l);
        }
    }
}
