use std::io::Write;

use qbnn::SeededRng;
use qbnn_harness::augment::{augment, AugmentKind};
use qbnn_harness::data::{load_idx_images, read_csv_table, split_indices, split_sizes, synth_regression, Standardiser};
use qbnn_harness::HarnessError;

fn idx_file(dir: &tempfile::TempDir, name: &str, magic: u32, dims: &[u32], payload: &[u8]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(&magic.to_be_bytes()).unwrap();
    for d in dims {
        f.write_all(&d.to_be_bytes()).unwrap();
    }
    f.write_all(payload).unwrap();
    path
}

#[test]
fn hand_encoded_idx_pair() {
    let dir = tempfile::tempdir().unwrap();
    let images = idx_file(&dir, "img", 0x0000_0803, &[2, 2, 2], &[0, 255, 51, 102, 255, 0, 0, 204]);
    let labels = idx_file(&dir, "lbl", 0x0000_0801, &[2], &[7, 0]);
    let d = load_idx_images(&images, &labels).unwrap();
    assert_eq!((d.rows, d.cols), (2, 2));
    assert_eq!(d.images.shape(), &[2, 4]);
    assert_eq!(d.images.data(), &[0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 0.8]);
    assert_eq!(d.labels, vec![7, 0]);
    let oh = d.one_hot().unwrap();
    assert_eq!(oh.shape(), &[2, 10]);
    assert_eq!(oh.row(0).iter().position(|&v| v == 1.0), Some(7));
    assert_eq!(oh.row(0).iter().sum::<f32>(), 1.0);
}

#[test]
fn truncated_idx_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let labels = idx_file(&dir, "lbl", 0x0000_0801, &[2], &[7, 0]);
    let short = idx_file(&dir, "img", 0x0000_0803, &[2, 2, 2], &[0, 255, 51, 102, 255, 0, 0]);
    assert!(matches!(load_idx_images(&short, &labels), Err(HarnessError::Format(_))));
    let header_only = idx_file(&dir, "hdr", 0x0000_0803, &[2], &[]);
    assert!(matches!(load_idx_images(&header_only, &labels), Err(HarnessError::Format(_))));
    let wrong_magic = idx_file(&dir, "magic", 0x0000_0801, &[2], &[1, 2]);
    assert!(load_idx_images(&wrong_magic, &labels).is_err());
}

#[test]
fn toy_csv_standardises_to_known_z_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    std::fs::write(&path, "a,b,y\n1,10,5\n2,20,7\n3,30,9\n").unwrap();
    let (x, y) = read_csv_table(&path).unwrap();
    assert_eq!(y, vec![5.0, 7.0, 9.0]);
    let s = Standardiser::fit(&x);
    assert_eq!(s.mean, vec![2.0, 20.0]);
    let z = (1.5f64).sqrt();
    for (row, want) in x.iter().zip([-z, 0.0, z]) {
        for v in s.apply(row) {
            assert!((v - want).abs() < 1e-12);
        }
    }
}

#[test]
fn bad_csv_cells_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "a,y\n1,2\n3,oops\n").unwrap();
    match read_csv_table(&path) {
        Err(HarnessError::Parse { row, column, value, .. }) => assert_eq!((row, column, value.as_str()), (3, 2, "oops")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn splits_have_the_requested_sizes_and_repeat() {
    assert_eq!(split_sizes(100, [0.8, 0.1, 0.1]).unwrap(), [80, 10, 10]);
    let a = split_indices(100, [0.8, 0.1, 0.1], &mut SeededRng::new(4)).unwrap();
    let b = split_indices(100, [0.8, 0.1, 0.1], &mut SeededRng::new(4)).unwrap();
    assert_eq!(a, b);
    let mut all: Vec<usize> = a.concat();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert!(split_sizes(10, [0.5, 0.5, 0.5]).is_err());
}

#[test]
fn synthetic_line_has_slope_two() {
    let d = synth_regression(&mut SeededRng::new(1), 10_000, 1.0).unwrap();
    let n = d.x.len() as f64;
    let (mx, my) = (d.x.iter().sum::<f64>() / n, d.y.iter().sum::<f64>() / n);
    let sxy: f64 = d.x.iter().zip(&d.y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = d.x.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((1.97..=2.03).contains(&slope), "slope {slope}");
    assert!(d.x.iter().all(|x| (-2.0..=2.0).contains(x)));

    let clean = synth_regression(&mut SeededRng::new(1), 5, 0.0).unwrap();
    for (x, y) in clean.x.iter().zip(&clean.y) {
        assert!((y - (2.0 * x + 8.0)).abs() < 1e-12);
    }
    assert_eq!(synth_regression(&mut SeededRng::new(9), 50, 1.0).unwrap(), synth_regression(&mut SeededRng::new(9), 50, 1.0).unwrap());
}

#[test]
fn augmentation_examples() {
    let (h, w) = (28, 28);
    let img = qbnn::Tensor::from_fn(&[2, h * w], |i| ((i % 97) as f32) / 96.0);
    assert_eq!(augment(&img, h, w, AugmentKind::Brightness, 1.0).unwrap(), img);
    assert_eq!(augment(&img, h, w, AugmentKind::Rotation, 0.0).unwrap(), img);

    let shifted = augment(&img, h, w, AugmentKind::Hshift, 0.5).unwrap();
    for n in 0..2 {
        for r in 0..h {
            for c in 0..w {
                let v = shifted.at(n, r * w + c);
                if c < 14 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, img.at(n, r * w + c - 14));
                }
            }
        }
    }
    let bright = augment(&img, h, w, AugmentKind::Brightness, 2.5).unwrap();
    assert!(bright.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!("blur".parse::<AugmentKind>().is_err());
}
