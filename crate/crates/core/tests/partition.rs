mod common;

use common::*;
use localkernel::partition::{entropy_numbers, estimate_dimension, fft_centers, kcenter_radius, voronoi_assign, Partition};
use localkernel::synthetic::uniform_cube;
use localkernel::PointSet;
use proptest::prelude::*;

fn point_set() -> impl Strategy<Value = PointSet> {
    (1usize..=3, 1usize..=30).prop_flat_map(|(d, n)| {
        prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| PointSet::new(v, d).unwrap())
    })
}

/// Small integer coordinates, so duplicates and exact ties are common.
fn tied_point_set() -> impl Strategy<Value = PointSet> {
    (1usize..=2, 1usize..=20).prop_flat_map(|(d, n)| {
        prop::collection::vec(0i32..4, n * d)
            .prop_map(move |v| PointSet::new(v.into_iter().map(f64::from).collect(), d).unwrap())
    })
}

fn line(values: &[f64]) -> PointSet {
    PointSet::new(values.to_vec(), 1).unwrap()
}

#[test]
fn line_example_picks_far_end_and_has_radius_three() {
    let pts = line(&[0.0, 10.0, 3.0]);
    let fft = fft_centers(&pts, 2).unwrap();
    assert_eq!(fft.centers, vec![0, 1]);
    assert_eq!(kcenter_radius(&pts, &fft.centers), 3.0);
    assert_eq!(kcenter_radius(&pts, &[0, 1, 2]), 0.0);
}

#[test]
fn center_count_bounds() {
    let pts = line(&[1.0, 2.0]);
    assert!(fft_centers(&pts, 3).is_err());
    assert!(fft_centers(&pts, 0).is_err());
    let mut all = fft_centers(&pts, 2).unwrap().centers;
    all.sort();
    assert_eq!(all, vec![0, 1]);
}

#[test]
fn voronoi_ties_go_to_smaller_index() {
    let centers = line(&[0.0, 2.0, 4.0]);
    let pts = line(&[1.0, 3.0, 2.0, 10.0]);
    assert_eq!(voronoi_assign(&pts, &centers), vec![0, 1, 1, 2]);
    assert_eq!(voronoi_assign(&pts, &line(&[7.0])), vec![0; 4]);
}

#[test]
fn entropy_numbers_degenerate_cases() {
    let pts = line(&[1.0, 4.0, 9.0]);
    assert_eq!(entropy_numbers(&pts, &[3]).unwrap(), vec![(3, 0.0)]);
    let dup = line(&[2.5, 2.5]);
    assert_eq!(entropy_numbers(&dup, &[1]).unwrap(), vec![(1, 0.0)]);
}

#[test]
fn uniform_square_entropy_slope_is_about_minus_one_half() {
    let pts = uniform_cube(4096, 2, 0);
    let ms = [16usize, 32, 64, 128, 256];
    let curve = entropy_numbers(&pts, &ms).unwrap();
    let xs: Vec<f64> = curve.iter().map(|(m, _)| (*m as f64).ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|(_, e)| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn dimension_estimate_errors() {
    let few = uniform_cube(63, 2, 1);
    assert!(estimate_dimension(&few).unwrap_err().to_string().contains("insufficient points"));
    let flat = PointSet::new(vec![0.5; 200], 2).unwrap();
    assert!(estimate_dimension(&flat).unwrap_err().to_string().contains("zero-diameter"));
}

#[test]
fn random_points_fill_all_cells() {
    let mut r = rng(7);
    for _ in 0..50 {
        let pts = random_points(&mut r, 60, 3);
        let part = Partition::build(&pts, 7).unwrap();
        assert_eq!(part.num_cells(), 7);
        assert!(part.cell_members().iter().all(|c| !c.is_empty()));
    }
}

proptest! {
    #[test]
    fn insertion_radii_are_non_increasing(pts in point_set()) {
        let fft = fft_centers(&pts, pts.len()).unwrap();
        for w in fft.radii[1..].windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn insertion_radius_is_covering_radius_of_earlier_centers(pts in tied_point_set()) {
        let fft = fft_centers(&pts, pts.len()).unwrap();
        for k in 1..pts.len() {
            prop_assert_eq!(fft.radii[k], radius(&pts, &fft.centers[..k]));
        }
    }

    #[test]
    fn fft_follows_farthest_rule_with_index_ties(pts in tied_point_set(), m in 1usize..6) {
        let m = m.min(pts.len());
        let fft = fft_centers(&pts, m).unwrap();
        prop_assert_eq!(fft.centers[0], 0);
        for k in 1..m {
            let chosen = &fft.centers[..k];
            let dist_to = |i: usize| chosen.iter().map(|&c| dist(pts.row(i), pts.row(c))).fold(f64::INFINITY, f64::min);
            let expected = (0..pts.len())
                .filter(|i| !chosen.contains(i))
                .fold((f64::NEG_INFINITY, usize::MAX), |best, i| {
                    let d = dist_to(i);
                    if d > best.0 { (d, i) } else { best }
                })
                .1;
            prop_assert_eq!(fft.centers[k], expected);
        }
    }

    #[test]
    fn assignment_is_nearest_center_with_smallest_index(pts in tied_point_set(), m in 1usize..5) {
        let m = m.min(pts.len());
        let part = Partition::build(&pts, m).unwrap();
        let assign = voronoi_assign(&pts, &part.center_points);
        prop_assert_eq!(&assign, &part.assignment);
        for (i, &a) in assign.iter().enumerate() {
            let ds: Vec<f64> = part.center_points.rows().map(|c| dist(pts.row(i), c)).collect();
            let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = ds.iter().position(|&d| d == min).unwrap();
            prop_assert_eq!(a, first);
        }
        prop_assert!(part.cell_members().iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn greedy_centers_cover_within_next_radius(pts in point_set(), m in 1usize..6) {
        prop_assume!(m < pts.len());
        let fft = fft_centers(&pts, m + 1).unwrap();
        let cover = kcenter_radius(&pts, &fft.centers[..m]);
        prop_assert!(cover <= fft.radii[m] + 1e-12);
    }

    #[test]
    fn relabeling_keeps_center_geometry(pts in point_set(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = pts.len();
        let mut perm: Vec<usize> = (1..n).collect();
        perm.shuffle(&mut rng(seed));
        perm.insert(0, 0);
        let shuffled = pts.select(&perm);
        let m = n.min(4);
        let a = fft_centers(&pts, m).unwrap();
        let b = fft_centers(&shuffled, m).unwrap();
        let coords = |p: &PointSet, c: &[usize]| -> Vec<Vec<f64>> { c.iter().map(|&i| p.row(i).to_vec()).collect() };
        prop_assert_eq!(a.radii, b.radii);
        prop_assert_eq!(coords(&pts, &a.centers), coords(&shuffled, &b.centers));
    }
}
