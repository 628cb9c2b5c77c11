use std::io::Write;
use std::path::Path;

use fairlens::audit::linear_probe;
use fairlens::fairness::ddp;
use fairlens::stats::logistic_fit;
use fairlens::{generate, load_csv, CsvSource, Dataset, Error, Split, SyntheticSpec};
use nalgebra::DMatrix;

fn design(ds: &Dataset, split: Split) -> DMatrix<f64> {
    let idx = ds.indices(split);
    DMatrix::from_fn(idx.len(), ds.n_features(), |r, c| ds.row(idx[r])[c])
}

fn probe(ds: &Dataset) -> f64 {
    linear_probe(
        &design(ds, Split::Train),
        &ds.protected_of(Split::Train),
        &design(ds, Split::Test),
        &ds.protected_of(Split::Test),
    )
    .unwrap()
}

fn write_file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

fn source(path: std::path::PathBuf, split_col: Option<&str>) -> CsvSource {
    CsvSource {
        path,
        target_col: "y".into(),
        protected_col: "s".into(),
        split_col: split_col.map(str::to_string),
        split_seed: 11,
    }
}

#[test]
fn symmetric_groups_are_not_predictable() {
    let ds = generate(&SyntheticSpec {
        separability: 0.0,
        base_rate_gap: 0.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let acc = probe(&ds);
    assert!(acc <= 0.53, "probe accuracy {acc}");

    let fit = logistic_fit(&design(&ds, Split::Train), &ds.targets_of(Split::Train), None, 1e-6).unwrap();
    let preds = fit.predict(&design(&ds, Split::Test), None);
    let gap = ddp(&preds, &ds.protected_of(Split::Test)).unwrap();
    assert!(gap.abs() <= 0.05, "Bayes-like DDP {gap}");
}

#[test]
fn separated_groups_are_predictable() {
    let ds = generate(&SyntheticSpec::default()).unwrap();
    let acc = probe(&ds);
    assert!(acc >= 0.95, "probe accuracy {acc}");
}

#[test]
fn probe_accuracy_grows_with_separability() {
    let mut last = 0.0;
    for sep in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let mean = (0..5)
            .map(|seed| {
                probe(
                    &generate(&SyntheticSpec {
                        n_samples: 4_000,
                        separability: sep,
                        seed,
                        ..SyntheticSpec::default()
                    })
                    .unwrap(),
                )
            })
            .sum::<f64>()
            / 5.0;
        assert!(mean >= last, "separability {sep}: {mean} < {last}");
        last = mean;
    }
}

#[test]
fn generated_bytes_are_stable() {
    let spec = SyntheticSpec {
        n_samples: 1_500,
        seed: 42,
        ..SyntheticSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    generate(&spec).unwrap().save_csv(&a).unwrap();
    generate(&spec).unwrap().save_csv(&b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

fn numeric_columns(path: &Path) -> Vec<(String, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    header
        .iter()
        .enumerate()
        .filter(|(j, _)| rows[0][*j].parse::<f64>().is_ok())
        .map(|(j, h)| (h.clone(), rows.iter().map(|row| row[j].parse().unwrap()).collect()))
        .collect()
}

#[test]
fn csv_round_trip_keeps_twelve_digits() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("a,label,y,b,s,split\n");
    let tags = ["train", "validation", "test"];
    for i in 0..60u32 {
        let a = (i as f64 * 0.731).sin() * 1234.567_891_234;
        let b = 1e-3 * (i as f64 + 0.123_456_789_012_3).powi(3);
        let y = (i / 3) % 2;
        let s = i % 2;
        body.push_str(&format!("{a},row{i},{y},{b},{s},{}\n", tags[(i % 6 / 2) as usize]));
    }
    let input = write_file(dir.path(), "in.csv", &body);
    let ds = load_csv(&source(input.clone(), Some("split"))).unwrap();
    assert_eq!(ds.feature_names(), ["a", "b"]);
    let output = dir.path().join("out.csv");
    ds.save_csv(&output).unwrap();

    let before = numeric_columns(&input);
    let after = numeric_columns(&output);
    for (name, values) in &before {
        let (_, got) = after.iter().find(|(h, _)| h == name).unwrap();
        for (x, y) in values.iter().zip(got) {
            let scale = x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
            assert!((x - y).abs() / scale <= 1e-12, "{name}: {x} vs {y}");
        }
    }
    let again = load_csv(&source(output, Some("split"))).unwrap();
    assert_eq!(again.splits(), ds.splits());
    assert_eq!(again.targets(), ds.targets());
}

#[test]
fn four_row_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "four.csv", "x,y,s\n0.5,0,0\n1.5,1,1\n-2,1,0\n3,0,1\n");
    let ds = load_csv(&source(path, None)).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.targets(), [0, 1, 1, 0]);
}

#[test]
fn non_binary_target_cites_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "bad.csv", "x,y,s\n0.5,0,0\n1.5,1,1\n-2,2,0\n3,0,1\n");
    match load_csv(&source(path, None)) {
        Err(Error::Parse { row, column, .. }) => {
            assert_eq!(row, 3);
            assert_eq!(column, "y");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn missing_column_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_file(dir.path(), "cols.csv", "x,target,s\n0.5,0,0\n");
    assert!(matches!(load_csv(&source(path.clone(), None)), Err(Error::Schema(_))));
    assert!(matches!(load_csv(&source(path, Some("fold"))), Err(Error::Schema(_))));
}

#[test]
fn seeded_split_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("x,y,s\n");
    for i in 0..200 {
        body.push_str(&format!("{},{},{}\n", i as f64 * 0.1, (i / 2) % 2, i % 2));
    }
    let path = write_file(dir.path(), "big.csv", &body);
    let a = load_csv(&source(path.clone(), None)).unwrap();
    let b = load_csv(&source(path.clone(), None)).unwrap();
    assert_eq!(a.splits(), b.splits());
    a.check_splits(true).unwrap();
    let mut other = source(path, None);
    other.split_seed = 12;
    assert_ne!(load_csv(&other).unwrap().splits(), a.splits());
}
