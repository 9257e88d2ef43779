use parvo_core::data::{
    decode_pgm, encode_idx_images, encode_idx_labels, encode_pgm, load_cifar10_bin, load_image_dir, load_mnist_idx,
    parse_cifar10, parse_idx_images, parse_idx_labels, read_image, read_pgm, render_digit, resize_bilinear,
    synthetic_digits, to_grayscale, write_mnist_idx, write_pgm, write_png, DataError, Dataset, CIFAR_RECORD,
};
use parvo_core::Tensor64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand-assembled IDX pair: image i has pixel j = (7 i + j) mod 256.
fn idx_files(n: usize, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut img = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for i in 0..n {
        img.extend((0..rows * cols).map(|j| ((7 * i + j) % 256) as u8));
    }
    let mut lab = vec![0, 0, 8, 1];
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend((0..n).map(|i| (i % 10) as u8));
    (img, lab)
}

#[test]
fn idx_magics_and_scaling() {
    let (img, lab) = idx_files(3, 16, 16);
    assert_eq!(u32::from_be_bytes([img[0], img[1], img[2], img[3]]), 2051);
    assert_eq!(u32::from_be_bytes([lab[0], lab[1], lab[2], lab[3]]), 2049);
    let images = parse_idx_images::<f64>(&img).unwrap();
    assert_eq!(images.len(), 3);
    assert_eq!(images[0].shape(), &[1, 16, 16]);
    assert_eq!(images[0].data()[255], 1.0, "byte 255 is exactly one");
    assert_eq!(images[0].data()[0], 0.0);
    assert_eq!(images[1].data()[1], 8.0 / 255.0);
    assert_eq!(parse_idx_labels(&lab).unwrap(), vec![0, 1, 2]);
}

#[test]
fn idx_errors_are_distinct() {
    let (img, lab) = idx_files(4, 5, 5);
    let mut bad = img.clone();
    bad[3] = 0x01;
    assert!(matches!(
        parse_idx_images::<f64>(&bad),
        Err(DataError::BadMagic { expected: 0x803, found: 0x801 })
    ));
    assert!(matches!(parse_idx_labels(&img), Err(DataError::BadMagic { .. })));
    assert!(matches!(
        parse_idx_images::<f64>(&img[..img.len() - 1]),
        Err(DataError::Truncated { expected: 116, found: 115 })
    ));
    assert!(matches!(parse_idx_images::<f64>(&img[..10]), Err(DataError::Truncated { .. })));

    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, &img).unwrap();
    let (_, lab3) = idx_files(3, 5, 5);
    std::fs::write(&lp, lab3).unwrap();
    assert!(matches!(
        load_mnist_idx::<f64>(&ip, &lp),
        Err(DataError::CountMismatch { images: 4, labels: 3 })
    ));
    let mut lab_bad = lab.clone();
    lab_bad[9] = 10;
    std::fs::write(&lp, lab_bad).unwrap();
    assert!(matches!(
        load_mnist_idx::<f64>(&ip, &lp),
        Err(DataError::InvalidLabel { index: 1, label: 10, classes: 10 })
    ));
    assert!(matches!(
        load_mnist_idx::<f64>(&dir.path().join("missing"), &lp),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn first_idx_pair_round_trips_through_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = idx_files(5, 28, 28);
    let (ip, lp) = (dir.path().join("train-images-idx3-ubyte"), dir.path().join("train-labels-idx1-ubyte"));
    std::fs::write(&ip, &img).unwrap();
    std::fs::write(&lp, &lab).unwrap();
    let ds = load_mnist_idx::<f64>(&ip, &lp).unwrap();
    assert_eq!(ds.native_size, Some([1, 28, 28]));
    assert_eq!(ds.class_names.len(), 10);
    let pgm = dir.path().join("first.pgm");
    write_pgm(&ds.images[0], &pgm).unwrap();
    assert_eq!(read_pgm::<f64>(&pgm).unwrap(), ds.images[0]);
    assert_eq!(ds.labels[0], 0);

    // Writing the dataset back reproduces the original bytes.
    let (ip2, lp2) = (dir.path().join("i2"), dir.path().join("l2"));
    write_mnist_idx(&ds, &ip2, &lp2).unwrap();
    assert_eq!(std::fs::read(ip2).unwrap(), img);
    assert_eq!(std::fs::read(lp2).unwrap(), lab);
}

fn cifar_record(label: u8, fill: impl Fn(usize, usize, usize) -> u8) -> Vec<u8> {
    let mut rec = vec![label];
    for c in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                rec.push(fill(c, y, x));
            }
        }
    }
    rec
}

#[test]
fn cifar_record_arithmetic_and_names() {
    let bytes: Vec<u8> = (0..10).flat_map(|k| cifar_record(k as u8, |c, y, x| (c + y + x + k) as u8)).collect();
    assert_eq!(bytes.len(), 10 * CIFAR_RECORD);
    let ds = parse_cifar10::<f64>(&bytes).unwrap();
    assert_eq!(ds.len(), 10);
    assert!(ds.images.iter().all(|i| i.shape() == [3, 32, 32]));
    assert_eq!(ds.class_names[ds.labels[6]], "frog");
    assert_eq!(ds.class_names[0], "airplane");
    assert_eq!(ds.class_names[9], "truck");
}

#[test]
fn cifar_channel_planes() {
    // R encodes the row, G the column, B is constant.
    let rec = cifar_record(3, |c, y, x| match c {
        0 => (8 * y) as u8,
        1 => (8 * x) as u8,
        _ => 200,
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    std::fs::write(&path, rec).unwrap();
    let ds = load_cifar10_bin::<f64>(&path).unwrap();
    let img = &ds.images[0];
    let at = |c: usize, y: usize, x: usize| img.data()[c * 1024 + y * 32 + x];
    assert_eq!(ds.labels, vec![3]);
    assert_eq!(at(0, 5, 17), 40.0 / 255.0);
    assert_eq!(at(1, 5, 17), 136.0 / 255.0);
    assert_eq!(at(2, 31, 0), 200.0 / 255.0);
}

#[test]
fn cifar_rejects_bad_input() {
    assert!(matches!(parse_cifar10::<f64>(&[0; 3072]), Err(DataError::CifarLength(3072))));
    assert!(matches!(parse_cifar10::<f64>(&[]), Err(DataError::CifarLength(0))));
    let mut bytes = cifar_record(1, |_, _, _| 0);
    bytes.extend(cifar_record(10, |_, _, _| 0));
    assert!(matches!(
        parse_cifar10::<f64>(&bytes),
        Err(DataError::CifarLabel { record: 1, label: 10 })
    ));
}

#[test]
fn image_dir_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (class, n) in [("zebra", 2), ("ant", 1)] {
        std::fs::create_dir(root.join(class)).unwrap();
        for k in 0..n {
            let img = Tensor64::full(&[3, 6, 5], 0.2 * (k + 1) as f64);
            write_png(&img, &root.join(class).join(format!("{k}.png"))).unwrap();
        }
    }
    std::fs::write(root.join("zebra").join("notes.txt"), "not an image").unwrap();
    std::fs::write(root.join("README"), "top-level files are ignored").unwrap();
    let ds = load_image_dir::<f64>(root).unwrap();
    assert_eq!(ds.class_names, vec!["ant", "zebra"]);
    assert_eq!(ds.labels, vec![0, 1, 1]);
    assert_eq!(ds.native_size, Some([3, 6, 5]));
    assert!((ds.images[2].data()[0] - 0.4).abs() <= 0.5 / 255.0);

    let prepared = ds.prepared(1, 8, 8).unwrap();
    assert!(prepared.images.iter().all(|i| i.shape() == [1, 8, 8]));

    std::fs::create_dir(root.join("empty")).unwrap();
    assert!(matches!(load_image_dir::<f64>(root), Err(DataError::EmptyClassDir(_))));
    let bare = tempfile::tempdir().unwrap();
    assert!(matches!(load_image_dir::<f64>(bare.path()), Err(DataError::NoClasses(_))));
}

#[test]
fn resize_of_constant_is_constant() {
    let img = Tensor64::full(&[2, 5, 7], 0.37);
    for (h, w) in [(1, 1), (3, 3), (28, 28), (64, 10)] {
        let out = resize_bilinear(&img, h, w).unwrap();
        assert_eq!(out.shape(), &[2, h, w]);
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }
}

#[test]
fn resize_keeps_column_monotonicity() {
    let img = Tensor64::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let out = resize_bilinear(&img, 2, 4).unwrap();
    for row in 0..2 {
        let r = &out.data()[row * 4..row * 4 + 4];
        assert!(r.windows(2).all(|p| p[0] <= p[1]), "{r:?}");
        assert_eq!((r[0], r[3]), (0.0, 1.0), "corners are sampled exactly");
        assert!((r[1] - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn grayscale_uses_luminance() {
    let img = Tensor64::new(vec![3, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.5]).unwrap();
    let g = to_grayscale(&img).unwrap();
    assert_eq!(g.shape(), &[1, 1, 2]);
    assert!((g.data()[0] - 0.299).abs() < 1e-15);
    assert!((g.data()[1] - (0.587 + 0.057)).abs() < 1e-15);
}

#[test]
fn pgm_header_variants() {
    let bytes = b"P5 # comment\n3 1\n# another\n255\n\x00\x80\xff".to_vec();
    let img = decode_pgm::<f64>(&bytes).unwrap();
    assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0]);
    let wide = b"P5\n2 1\n1000\n\x03\xe8\x01\xf4".to_vec();
    assert_eq!(decode_pgm::<f64>(&wide).unwrap().data(), &[1.0, 0.5]);
    assert!(matches!(decode_pgm::<f64>(b"P6\n1 1\n255\n\x00"), Err(DataError::Pgm(_))));
    assert!(matches!(decode_pgm::<f64>(b"P5\n4 4\n255\n\x00"), Err(DataError::Truncated { .. })));
    assert!(encode_pgm(&Tensor64::zeros(&[2, 3, 3])).is_err());
}

#[test]
fn png_round_trip_keeps_channels() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in [1, 3] {
        let img = Tensor64::from_fn(&[c, 9, 7], |_| rng.gen());
        let path = dir.path().join(format!("x{c}.png"));
        write_png(&img, &path).unwrap();
        let back = read_image::<f64>(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 510.0 + 1e-12);
    }
}

#[test]
fn synthetic_digits_are_reproducible() {
    let a = synthetic_digits::<f64>(20, 28, 4);
    let b = synthetic_digits::<f64>(20, 28, 4);
    assert_eq!(a, b);
    assert_ne!(a, synthetic_digits::<f64>(20, 28, 5));
    assert!(a.labels.iter().all(|&l| l < 10));
    for img in &a.images {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let ink = img.sum() / img.len() as f64;
        assert!(ink > 0.05 && ink < 0.5, "{ink}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let big: Tensor64 = render_digit(8, 64, &mut rng);
    assert_eq!(big.shape(), &[1, 64, 64]);
}

#[test]
fn dataset_prepared_converts_channels() {
    let ds = Dataset {
        images: vec![Tensor64::full(&[1, 4, 4], 0.5)],
        labels: vec![0],
        class_names: vec!["a".into()],
        native_size: Some([1, 4, 4]),
    };
    let rgb = ds.prepared(3, 4, 4).unwrap();
    assert_eq!(rgb.images[0].shape(), &[3, 4, 4]);
    assert!(rgb.images[0].data().iter().all(|v| *v == 0.5));
    let idx = encode_idx_images(&ds.images).unwrap();
    assert_eq!(parse_idx_images::<f64>(&idx).unwrap()[0].data()[0], 128.0 / 255.0);
    assert_eq!(encode_idx_labels(&[3, 4])[8..], [3, 4]);
}

proptest! {
    #[test]
    fn pgm_round_trip_error_is_quantization_bound(seed in 0u64..1000, h in 1usize..12, w in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor64::from_fn(&[1, h, w], |_| rng.gen());
        let back = decode_pgm::<f64>(&encode_pgm(&img).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 510.0 + 1e-12);
    }

    #[test]
    fn resize_stays_within_input_range(seed in 0u64..1000, h in 1usize..20, w in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor64::from_fn(&[1, 5, 6], |_| rng.gen());
        let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = resize_bilinear(&img, h, w).unwrap();
        prop_assert!(out.data().iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn loaders_are_deterministic(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bytes: Vec<u8> = (0..2).flat_map(|_| {
            let label: u8 = rng.gen_range(0..10);
            let mut rec = vec![label];
            rec.extend((0..3072).map(|_| rng.gen::<u8>()));
            rec
        }).collect();
        let a = parse_cifar10::<f64>(&bytes).unwrap();
        prop_assert_eq!(&a, &parse_cifar10::<f64>(&bytes).unwrap());
        prop_assert!(a.images.iter().all(|i| i.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
