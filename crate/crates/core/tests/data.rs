use std::fs;
use std::path::Path;

use proptest::prelude::*;
use sscgan::data::{
    decode_png, denormalize_pixel, encode_png, encode_sample_grid, flip_horizontal, flip_vertical,
    load_batch, normalize_pixel, parse_patch_filename, scan_dataset, split, synth_dataset,
    DatasetIndex, Patch, PatchFiles, PatchSet, PatchSource, RgbImage, SplitSpec, SplitUnit,
};
use sscgan::nn::seeded_rng;
use sscgan::{Error, Tensor};

fn write_patch(path: &Path, shade: u8) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut img = RgbImage::new(50, 50);
    img.pixels.iter_mut().for_each(|p| *p = shade);
    encode_png(path, &img).unwrap();
}

#[test]
fn scans_a_two_patient_tree() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (i, label) in [0, 0, 1].iter().enumerate() {
        write_patch(
            &root.join(format!("100/{label}/100_idx5_x{i}_y0_class{label}.png")),
            10,
        );
    }
    for (i, label) in [1, 0].iter().enumerate() {
        write_patch(
            &root.join(format!("200/{label}/200_idx5_x{i}_y5_class{label}.png")),
            20,
        );
    }
    fs::write(root.join("100/notes.txt"), "scanner settings").unwrap();
    fs::write(root.join("stray.png"), "not really").unwrap();

    let scan = scan_dataset(root).unwrap();
    let index = &scan.index;
    assert_eq!(index.len(), 5);
    assert_eq!(index.counts(), [3, 2]);
    assert_eq!(index.counts().iter().sum::<usize>(), index.len());
    let groups = index.patients();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups["100"].len() + groups["200"].len(), 5);

    assert_eq!(scan.rejects.len(), 2);
    let report = scan.rejects_report();
    assert!(
        report.contains("notes.txt") && report.contains("stray.png"),
        "{report}"
    );
}

#[test]
fn directory_label_wins_over_suffix() {
    let dir = tempfile::tempdir().unwrap();
    write_patch(&dir.path().join("7/1/7_idx5_x0_y0_class0.png"), 0);
    write_patch(&dir.path().join("flat_idx5_x3_y4_class1.png"), 0);
    let index = scan_dataset(dir.path()).unwrap().index;
    let labels: Vec<(String, usize)> = index
        .patches()
        .iter()
        .map(|p| (p.patient.clone(), p.label))
        .collect();
    assert_eq!(labels, vec![("7".to_string(), 1), ("flat".to_string(), 1)]);
}

#[test]
fn empty_and_missing_roots() {
    let dir = tempfile::tempdir().unwrap();
    let scan = scan_dataset(dir.path()).unwrap();
    assert!(scan.index.is_empty() && scan.rejects.is_empty());
    assert!(matches!(
        scan_dataset(&dir.path().join("absent")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn filename_patterns() {
    let p = parse_patch_filename("10253_idx5_x1001_y801_class1.png").unwrap();
    assert_eq!(
        (p.patient.as_str(), p.x, p.y, p.label),
        ("10253", 1001, 801, 1)
    );
    let p = parse_patch_filename("p7_idx5_x0_y0_class0.png").unwrap();
    assert_eq!((p.patient.as_str(), p.x, p.y, p.label), ("p7", 0, 0, 0));
    assert!(parse_patch_filename("notes.txt").is_none());
    assert!(parse_patch_filename("1_idx5_x1_y2_class2.png").is_none());
}

fn fixture(patients: usize, per: usize) -> DatasetIndex {
    let patches = (0..patients)
        .flat_map(|p| {
            (0..per).map(move |i| Patch {
                patient: format!("p{p:03}"),
                x: Some(i as u32),
                y: Some(0),
                label: (i + p) % 2,
                path: format!("p{p:03}/{i}.png").into(),
            })
        })
        .collect();
    DatasetIndex::new(patches).unwrap()
}

#[test]
fn split_examples() {
    let (train, test) = split(&fixture(10, 10), &SplitSpec::default()).unwrap();
    assert_eq!(
        (train.len(), test.len(), test.patients().len()),
        (80, 20, 2)
    );

    let patch = SplitSpec {
        unit: SplitUnit::Patch,
        ..Default::default()
    };
    assert_eq!(split(&fixture(10, 10), &patch).unwrap().1.len(), 20);

    let err = split(&fixture(1, 10), &SplitSpec::default()).unwrap_err();
    assert!(
        matches!(err, Error::Split(_)) && err.to_string().contains("patch"),
        "{err}"
    );
}

#[test]
fn split_seeds() {
    let index = fixture(200, 3);
    let spec = SplitSpec::default();
    assert_eq!(split(&index, &spec).unwrap(), split(&index, &spec).unwrap());
    let other = SplitSpec { seed: 1, ..spec };
    assert_ne!(
        split(&index, &spec).unwrap().1,
        split(&index, &other).unwrap().1
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patient_split_never_leaks(patients in 2usize..30, per in 1usize..6, seed in 0u64..10_000) {
        let index = fixture(patients, per);
        let spec = SplitSpec { seed, ..Default::default() };
        if let Ok((train, test)) = split(&index, &spec) {
            prop_assert_eq!(train.len() + test.len(), index.len());
            let train_patients = train.patients();
            for p in test.patients().keys() {
                prop_assert!(!train_patients.contains_key(p));
            }
            prop_assert!(test.len() as f64 >= 0.2 * index.len() as f64 - 1e-9);
        }
    }

    #[test]
    fn pixel_round_trip(v in 0u8..=255) {
        prop_assert_eq!(denormalize_pixel(normalize_pixel(v)), v);
    }

    #[test]
    fn flips_preserve_norm_and_invert(seed in 0u64..1000, c in 1usize..4, h in 1usize..7, w in 1usize..7) {
        let data = sscgan::nn::normal_vec::<f64>(c * h * w, &mut seeded_rng(seed));
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let mut a = data.clone();
        flip_horizontal(&mut a, c, h, w);
        prop_assert!((norm(&a) - norm(&data)).abs() <= 1e-12 * norm(&data));
        flip_horizontal(&mut a, c, h, w);
        prop_assert_eq!(&a, &data);
        flip_vertical(&mut a, c, h, w);
        prop_assert!((norm(&a) - norm(&data)).abs() <= 1e-12 * norm(&data));
        flip_vertical(&mut a, c, h, w);
        prop_assert_eq!(&a, &data);
    }
}

#[test]
fn normalization_anchors() {
    assert_eq!(normalize_pixel(0), -1.0);
    assert_eq!(normalize_pixel(255), 1.0);
    assert!((normalize_pixel(128) - 1.0 / 255.0).abs() < 1e-12);
}

#[test]
fn synthetic_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let index = synth_dataset(a.path(), 50, 3).unwrap();
    assert_eq!(index.len(), 100);
    assert_eq!(index.counts(), [50, 50]);
    let rescanned = scan_dataset(a.path()).unwrap();
    assert_eq!(rescanned.index.counts(), [50, 50]);
    assert!(rescanned.rejects.is_empty());

    synth_dataset(b.path(), 50, 3).unwrap();
    for p in index.patches() {
        let rel = p.path.strip_prefix(a.path()).unwrap();
        assert_eq!(
            fs::read(&p.path).unwrap(),
            fs::read(b.path().join(rel)).unwrap()
        );
    }

    // Nuclei darken the patch.
    let mut mean = [0.0f64; 2];
    for p in index.patches() {
        let img = decode_png(&p.path).unwrap();
        mean[p.label] +=
            img.pixels.iter().map(|&v| v as f64).sum::<f64>() / img.pixels.len() as f64 / 50.0;
    }
    assert!(mean[1] < mean[0], "{mean:?}");
}

#[test]
fn png_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(5);
    let values: Vec<f32> = sscgan::nn::normal_vec::<f32>(6 * 3 * 50 * 50, &mut rng)
        .into_iter()
        .map(|v| (v * 0.5).tanh())
        .collect();
    let images = Tensor::from_vec(values.clone(), &[6, 3, 50, 50]).unwrap();
    let path = dir.path().join("grid.png");
    encode_sample_grid(&images, &path).unwrap();
    let grid = decode_png(&path).unwrap();
    assert_eq!((grid.width, grid.height), (150, 100));
    for (k, chunk) in values.chunks(3 * 2500).enumerate() {
        let (gy, gx) = (k / 3, k % 3);
        for c in 0..3 {
            for y in 0..50 {
                for x in 0..50 {
                    let want = denormalize_pixel(chunk[(c * 50 + y) * 50 + x] as f64) as i32;
                    let got = grid.pixels[((gy * 50 + y) * 150 + gx * 50 + x) * 3 + c] as i32;
                    assert!((want - got).abs() <= 1);
                }
            }
        }
    }

    let black = Tensor::<f32>::full(&[1, 3, 50, 50], -1.0);
    encode_sample_grid(&black, &path).unwrap();
    let img = decode_png(&path).unwrap();
    assert_eq!((img.width, img.height), (50, 50));
    assert!(img.pixels.iter().all(|&v| v == 0));
}

#[test]
fn wrong_geometry_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("3/0/3_idx5_x0_y0_class0.png");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    encode_png(&path, &RgbImage::new(40, 50)).unwrap();
    let index = scan_dataset(dir.path()).unwrap().index;
    let err = PatchSet::load(&index, 50, 50).unwrap_err();
    assert!(err.to_string().contains("3_idx5_x0_y0_class0.png"), "{err}");
    let lazy = PatchFiles::new(index, 50, 50);
    let err = load_batch::<f32>(&lazy, &[0], false, &mut seeded_rng(0)).unwrap_err();
    assert!(err.to_string().contains("3_idx5_x0_y0_class0.png"), "{err}");
}

#[test]
fn batches_are_deterministic_and_label_preserving() {
    let dir = tempfile::tempdir().unwrap();
    let index = synth_dataset(dir.path(), 4, 1).unwrap();
    let set = PatchSet::load(&index, 50, 50).unwrap();
    let files = PatchFiles::new(index.clone(), 50, 50);
    let idx = [0, 3, 5, 7];
    let (a, la) = load_batch::<f32>(&set, &idx, false, &mut seeded_rng(0)).unwrap();
    let (b, lb) = load_batch::<f32>(&files, &idx, false, &mut seeded_rng(9)).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(la, lb);
    assert_eq!(la, idx.iter().map(|&i| set.label(i)).collect::<Vec<_>>());

    let (c, lc) = load_batch::<f32>(&set, &idx, true, &mut seeded_rng(2)).unwrap();
    assert_eq!(lc, la);
    let norm = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64 * v as f64).sum::<f64>();
    assert!((norm(&a) - norm(&c)).abs() < 1e-6 * norm(&a));
}

/// Counts of the public release; runs only when `SSCGAN_IDC_ROOT` points at it.
#[test]
fn public_dataset_counts() {
    let Ok(root) = std::env::var("SSCGAN_IDC_ROOT") else {
        eprintln!("SSCGAN_IDC_ROOT not set; skipping public dataset count check");
        return;
    };
    let index = scan_dataset(Path::new(&root)).unwrap().index;
    assert_eq!(index.len(), 277_524);
    assert_eq!(index.counts()[1], 78_786);
}
