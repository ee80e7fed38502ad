use localkernel::dataset::{load_csv, naive_error, split_indices, standardize, train_test_split};
use localkernel::{Dataset, PointSet, SplitSpec, Task};
use proptest::prelude::*;

fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn loads_files_and_reports_bad_rows() {
    let (_d, path) = write("1,2,0\n3,4,1\n5,6,1\n");
    let ds = load_csv(&path, Task::Classification, false).unwrap();
    assert_eq!((ds.len(), ds.dim()), (3, 2));
    assert_eq!(ds.labels(), &[-1.0, 1.0, 1.0]);

    let (_d, path) = write("");
    assert!(load_csv(&path, Task::Regression, false).unwrap_err().to_string().contains("no rows"));
    let (_d, path) = write("a,b,c\n");
    let err = load_csv(&path, Task::Regression, false).unwrap_err().to_string();
    assert!(err.contains("row 1"), "{err}");
    let (_d, path) = write("1,2,0\n1,2\n");
    assert!(load_csv(&path, Task::Regression, false).unwrap_err().to_string().contains("row 2"));
    let (_d, path) = write("1,0\n2,1\n3,2\n");
    assert!(load_csv(&path, Task::Classification, false).unwrap_err().to_string().contains("row 3"));
    assert!(load_csv("/no/such/file.csv", Task::Regression, false).is_err());
}

#[test]
fn split_sizes_and_repetitions() {
    let spec = SplitSpec { test_fraction: 0.2, repetitions: 3, seed: 5 };
    let x = PointSet::new((0..10).map(f64::from).collect(), 1).unwrap();
    let ds = Dataset::new(x, vec![0.0; 10], Task::Regression).unwrap();
    let (train, test) = train_test_split(&ds, &spec, 0).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    assert!(train_test_split(&ds, &spec, 3).is_err());
    let (_, a) = split_indices(100, &spec, 0).unwrap();
    let (_, b) = split_indices(100, &spec, 1).unwrap();
    assert_ne!(a, b);
}

#[test]
fn naive_error_and_standardization_examples() {
    let reg = Dataset::new(PointSet::new(vec![0.0, 1.0], 1).unwrap(), vec![0.0, 2.0], Task::Regression).unwrap();
    assert_eq!(naive_error(&reg), 1.0);
    let cls = Dataset::new(PointSet::new(vec![0.0; 3], 1).unwrap(), vec![1.0, 1.0, -1.0], Task::Classification).unwrap();
    assert!((naive_error(&cls) - 1.0 / 3.0).abs() < 1e-15);

    let x = PointSet::new(vec![1.0, 0.0, 1.0, 2.0], 2).unwrap();
    let ds = Dataset::new(x, vec![3.0, 5.0], Task::Regression).unwrap();
    let (out, tr) = standardize(&ds).unwrap();
    assert_eq!(tr.constant, vec![true, false]);
    assert_eq!(out.features().as_slice(), &[1.0, -1.0, 1.0, 1.0]);
    assert_eq!(out.labels(), &[-1.0, 1.0]);
}

proptest! {
    #[test]
    fn splits_partition_the_indices(n in 5usize..300, frac in 0.05f64..0.9, seed in any::<u64>(), rep in 0usize..4) {
        let spec = SplitSpec { test_fraction: frac, repetitions: 4, seed };
        prop_assume!(spec.validate(n).is_ok());
        let (train, test) = split_indices(n, &spec, rep).unwrap();
        prop_assert_eq!(test.len(), (frac * n as f64).floor() as usize);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, &spec, rep).unwrap(), (train, test));
    }

    #[test]
    fn label_standardization_inverts(labels in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        let n = labels.len();
        let x = PointSet::new((0..n).map(|i| i as f64).collect(), 1).unwrap();
        let ds = Dataset::new(x, labels.clone(), Task::Regression).unwrap();
        let (out, tr) = standardize(&ds).unwrap();
        for (a, b) in tr.inverse_labels(out.labels()).iter().zip(&labels) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
