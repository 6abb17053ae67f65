use cellsvm::dataio::{
    compute_scaling, make_folds, parse_csv, parse_libsvm, CsvOptions, Dataset, FoldMethod, LabelColumn,
};
use cellsvm::error::Error;
use proptest::prelude::*;

#[test]
fn libsvm_examples() {
    let d = parse_libsvm(b"1 1:0.5 3:2\n-1 2:1\n").unwrap();
    assert_eq!(d.dim(), 3);
    assert_eq!(d.labels(), &[1.0, -1.0]);
    assert_eq!(d.sample(0), &[0.5, 0.0, 2.0]);
    assert_eq!(d.sample(1), &[0.0, 1.0, 0.0]);

    assert!(matches!(parse_libsvm(b"1 2:1 1:3\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_libsvm(b"1 1:1\n1 0:2\n"), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(parse_libsvm(b"x 1:1\n"), Err(Error::Parse { .. })));
    assert!(matches!(parse_libsvm(b"1 1:nan\n"), Err(Error::Parse { .. })));
    assert!(matches!(parse_libsvm(b"\n\n"), Err(Error::EmptyDataset)));
}

#[test]
fn csv_examples() {
    let d = parse_csv(b"a,b,y\n1,2,0\n3,4,1\n", CsvOptions { has_header: true, ..Default::default() }).unwrap();
    assert_eq!(d.dim(), 2);
    assert_eq!(d.labels(), &[0.0, 1.0]);
    assert_eq!(d.sample(1), &[3.0, 4.0]);

    let first = CsvOptions { label_column: LabelColumn::First, ..Default::default() };
    let d = parse_csv(b"7,1,2\n", first).unwrap();
    assert_eq!((d.labels(), d.sample(0)), (&[7.0][..], &[1.0, 2.0][..]));

    let middle = CsvOptions { label_column: LabelColumn::Index(1), ..Default::default() };
    let d = parse_csv(b"1,9,2\n", middle).unwrap();
    assert_eq!((d.labels(), d.sample(0)), (&[9.0][..], &[1.0, 2.0][..]));

    let bad = parse_csv(b"1,2,3\n4,x,6\n", CsvOptions::default()).unwrap_err();
    assert!(matches!(bad, Error::ParseCell { row: 2, column: 2, .. }), "{bad:?}");
    assert!(matches!(parse_csv(b"1,2,3\n4,5\n", CsvOptions::default()), Err(Error::ParseCell { row: 2, .. })));
    assert!(matches!(parse_csv(b"", CsvOptions::default()), Err(Error::EmptyDataset)));
}

#[test]
fn dataset_construction_checks() {
    assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![0.0, 1.0], 2).is_err());
    assert!(Dataset::new(vec![], vec![], 1).is_err());
    assert!(Dataset::new(vec![f64::NAN], vec![0.0], 1).is_err());
    let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0], 2).unwrap();
    let s = d.subset(&[1]).unwrap();
    assert_eq!((s.sample(0), s.labels()), (&[3.0, 4.0][..], &[1.0][..]));
    assert!(d.subset(&[2]).is_err());
    assert!(d.with_labels(vec![1.0]).is_err());
}

#[test]
fn scaling_examples() {
    let d = Dataset::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]], vec![0.0; 3]).unwrap();
    let s = compute_scaling(&d);
    assert_eq!(s.offset, vec![1.0, 5.0]);
    assert_eq!(s.factor, vec![2.0, 1.0]);
    let scaled = s.apply(&d).unwrap();
    assert_eq!(scaled.features(), &[0.0, 0.0, 1.0, 0.0, 0.5, 0.0]);

    let outside = Dataset::from_rows(&[vec![5.0, 6.0]], vec![0.0]).unwrap();
    assert_eq!(s.apply(&outside).unwrap().sample(0), &[2.0, 1.0]);
    let wrong = Dataset::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
    assert!(matches!(s.apply(&wrong), Err(Error::DimensionMismatch { expected: 2, found: 1 })));
}

#[test]
fn fold_examples() {
    let labels = vec![0.0; 7];
    let block = make_folds(&labels, 3, FoldMethod::Block, 0).unwrap();
    assert_eq!(block.fold_of, vec![0, 0, 0, 1, 1, 2, 2]);
    let alt = make_folds(&labels, 3, FoldMethod::Alternating, 0).unwrap();
    assert_eq!(alt.fold_of, vec![0, 1, 2, 0, 1, 2, 0]);
    assert!(make_folds(&labels, 1, FoldMethod::Random, 0).is_err());
    assert!(make_folds(&labels, 8, FoldMethod::Random, 0).is_err());

    let a = make_folds(&labels, 3, FoldMethod::Random, 9).unwrap();
    let b = make_folds(&labels, 3, FoldMethod::Random, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.validation_indices(1).len() + a.training_indices(1).len(), 7);
}

#[test]
fn fold_method_names() {
    assert_eq!("stratified".parse::<FoldMethod>().unwrap(), FoldMethod::Stratified);
    assert_eq!("2".parse::<FoldMethod>().unwrap(), FoldMethod::Block);
    assert!("loo".parse::<FoldMethod>().is_err());
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..6, 1usize..40).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], n * d),
            prop::collection::vec(-5i32..5, n),
        )
            .prop_map(move |(f, y)| Dataset::new(f, y.into_iter().map(f64::from).collect(), d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn libsvm_round_trip(data in dataset()) {
        // trailing all-zero columns are not representable in sparse text
        let back = parse_libsvm(data.to_libsvm().as_bytes());
        let last_nonzero = (0..data.dim()).rev().find(|&j| data.samples().any(|r| r[j] != 0.0));
        match last_nonzero {
            None => prop_assert!(back.is_err()),
            Some(j) => {
                let back = back.unwrap();
                prop_assert_eq!(back.dim(), j + 1);
                prop_assert_eq!(back.labels(), data.labels());
                for i in 0..data.len() {
                    prop_assert_eq!(back.sample(i), &data.sample(i)[..=j]);
                }
            }
        }
    }

    #[test]
    fn scaling_maps_train_into_unit_box_and_inverts(data in dataset()) {
        let s = compute_scaling(&data);
        let scaled = s.apply(&data).unwrap();
        for row in scaled.samples() {
            for &v in row {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
        let back = s.invert(&scaled).unwrap();
        for (a, b) in back.features().iter().zip(data.features()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let again = compute_scaling(&scaled).apply(&scaled).unwrap();
        for (a, b) in again.features().iter().zip(scaled.features()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn folds_partition_the_samples(labels in prop::collection::vec(0i32..3, 2..60), k in 2usize..8, seed in any::<u64>(), m in 0usize..4) {
        let labels: Vec<f64> = labels.into_iter().map(f64::from).collect();
        let n = labels.len();
        prop_assume!(k <= n);
        let method = [FoldMethod::Random, FoldMethod::Stratified, FoldMethod::Block, FoldMethod::Alternating][m];
        let folds = make_folds(&labels, k, method, seed).unwrap();
        let sizes = folds.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let mut all = folds.validation_indices(f);
            all.extend(folds.training_indices(f));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        if method == FoldMethod::Stratified {
            for class in 0..3 {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class as f64).collect();
                let mut per = vec![0usize; k];
                for &i in &members {
                    per[folds.fold_of[i]] += 1;
                }
                // each class is spread evenly up to the carry from the previous class
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
    }
}
