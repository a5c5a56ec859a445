use std::io::Write;

use lmnet::bounds::{exact_max_margin, exact_max_margin_through_origin, ORACLE_TOL};
use lmnet::data::{load_idx, synth_separable, write_idx, Dataset, Split};
use lmnet::{Error, Tensor};

fn tiny() -> Dataset {
    let n = 12;
    let values = (0..n * 9).map(|i| (i * 37 % 256) as f64 / 255.0).collect();
    Dataset::new(Tensor::new(vec![n, 1, 3, 3], values).unwrap(), (0..n).map(|i| i % 10).collect(), 10, Split::Train).unwrap()
}

#[test]
fn idx_round_trip_plain_and_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ds, &img, &lab).unwrap();
    let back = load_idx(&img, &lab, Split::Train).unwrap();
    assert_eq!(back, ds);

    let gz = |src: &std::path::Path, dst: &std::path::Path| {
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(dst).unwrap(), flate2::Compression::default());
        enc.write_all(&std::fs::read(src).unwrap()).unwrap();
        enc.finish().unwrap();
    };
    let (gimg, glab) = (dir.path().join("img.gz"), dir.path().join("lab.gz"));
    gz(&img, &gimg);
    gz(&lab, &glab);
    assert_eq!(load_idx(&gimg, &glab, Split::Train).unwrap(), ds);
}

#[test]
fn swapped_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&tiny(), &img, &lab).unwrap();
    assert!(matches!(load_idx(&lab, &img, Split::Train), Err(Error::Format(_))));
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_idx(&img, &lab, Split::Train), Err(Error::Format(_))));
}

#[test]
fn synthetic_margin_is_certified_by_oracle() {
    for seed in 0..25 {
        let data = synth_separable(20, 2, 0.15, 1.0, seed).unwrap();
        let through_origin = exact_max_margin_through_origin(&data).unwrap();
        assert!(through_origin.rho + ORACLE_TOL >= 0.15, "seed {seed}: {}", through_origin.rho);
        let with_bias = exact_max_margin(&data).unwrap();
        assert!(with_bias.rho + ORACLE_TOL >= through_origin.rho);
        for (x, y) in data.points.iter().zip(&data.labels) {
            assert!(y * with_bias.decision(x) >= 1.0 - 1e-7);
        }
    }
}
