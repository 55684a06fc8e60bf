use std::collections::BTreeSet;

use cookstate::data::synthetic::{synthetic_dataset, write_dataset_tree};
use cookstate::data::*;
use cookstate::rng::{derive_seed, Rng};
use cookstate::{Error, Tensor32};
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> ImageSample {
    let mut rng = Rng::new(seed, 0);
    ImageSample::raw(Tensor32::from_fn([3, h, w], |_| rng.below(256) as f32)).unwrap()
}

fn stats(x: &[f32]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rotate90(img: &ImageSample) -> ImageSample {
    apply_affine(
        img,
        &AugmentParams {
            rotation_deg: 90.0,
            ..AugmentParams::identity()
        },
    )
    .unwrap()
}

fn spec_strategy() -> impl Strategy<Value = SplitSpec> {
    prop_oneof![
        (0.0f64..0.5, 0.0f64..0.5).prop_map(|(val, test)| SplitSpec::Ratio { val, test }),
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(test, val)| SplitSpec::Nested { test, val }),
    ]
}

proptest! {
    #[test]
    fn split_is_a_partition(
        labels in prop::collection::vec(0usize..7, 1..300),
        seed in any::<u64>(),
        spec in spec_strategy(),
        stratified in any::<bool>(),
    ) {
        let plan = split_dataset(&labels, seed, &spec, stratified).unwrap();
        let all: Vec<usize> = plan.train.iter().chain(&plan.val).chain(&plan.test).copied().collect();
        let set: BTreeSet<usize> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert_eq!(set, (0..labels.len()).collect::<BTreeSet<_>>());
    }

    #[test]
    fn preprocess_standardizes(h in 2usize..40, w in 2usize..40, seed in any::<u64>(), per_channel in any::<bool>()) {
        let img = image(h, w, seed);
        let x = preprocess(&img, (17, 23), per_channel).unwrap();
        prop_assert_eq!(x.shape(), &[3, 17, 23]);
        let groups: Vec<&[f32]> = if per_channel { x.data().chunks(17 * 23).collect() } else { vec![x.data()] };
        for g in groups {
            let (mean, std) = stats(g);
            prop_assume!(std > 0.0);
            prop_assert!(mean.abs() < 1e-5, "mean {}", mean);
            prop_assert!((std - 1.0).abs() < 1e-4, "std {}", std);
        }
    }

    #[test]
    fn augment_keeps_shape_and_range(h in 1usize..24, w in 1usize..24, seed in any::<u64>()) {
        let img = image(h, w, seed);
        let mut rng = Rng::new(seed, 1);
        let (out, _) = augment(&img, &AugmentConfig::default(), &mut rng).unwrap();
        prop_assert_eq!(out.pixels.shape(), img.pixels.shape());
        prop_assert!(out.pixels.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn zero_config_is_the_identity(h in 1usize..24, w in 1usize..24, seed in any::<u64>()) {
        let img = image(h, w, seed);
        let mut rng = Rng::new(seed, 2);
        let (out, params) = augment(&img, &AugmentConfig::identity(), &mut rng).unwrap();
        prop_assert_eq!(out, img);
        prop_assert!(!params.flip);
    }

    #[test]
    fn four_quarter_turns_are_the_identity(side in 1usize..20, seed in any::<u64>()) {
        let img = image(side, side, seed);
        let back = rotate90(&rotate90(&rotate90(&rotate90(&img))));
        prop_assert_eq!(back, img);
    }

    #[test]
    fn epochs_permute_the_same_indices(n in 2usize..200, seed in any::<u64>()) {
        let idx: Vec<usize> = (0..n).map(|i| i * 3).collect();
        let orders: Vec<Vec<usize>> = (0..4).map(|e| epoch_order(&idx, Some(seed), e)).collect();
        for o in &orders {
            let mut s = o.clone();
            s.sort_unstable();
            prop_assert_eq!(&s, &idx);
        }
        if n >= 8 {
            let distinct: BTreeSet<&Vec<usize>> = orders.iter().collect();
            prop_assert_eq!(distinct.len(), orders.len());
        }
        prop_assert_eq!(epoch_order(&idx, Some(seed), 2), orders[2].clone());
        prop_assert_eq!(epoch_order(&idx, None, 3), idx);
    }
}

#[test]
fn quarter_turn_and_flip_oracles() {
    // per channel [[a,b],[c,d]] with a..d = 10,20,30,40
    let px = Tensor32::from_fn([3, 2, 2], |i| 10.0 * ((i % 4) + 1) as f32);
    let img = ImageSample::raw(px).unwrap();
    let r = rotate90(&img);
    for ch in 0..3 {
        assert_eq!(&r.pixels.data()[ch * 4..ch * 4 + 4], &[20.0, 40.0, 10.0, 30.0]);
    }
    let row = ImageSample::raw(Tensor32::from_fn([3, 1, 3], |i| (i % 3 + 1) as f32)).unwrap();
    let f = apply_affine(
        &row,
        &AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        },
    )
    .unwrap();
    assert_eq!(&f.pixels.data()[..3], &[3.0, 2.0, 1.0]);
}

#[test]
fn preprocess_edge_cases() {
    let flat = ImageSample::raw(Tensor32::full([3, 4, 4], 77.0)).unwrap();
    assert!(preprocess(&flat, (4, 4), false)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let half = ImageSample::raw(Tensor32::from_fn([3, 2, 2], |i| if i % 2 == 0 { 0.0 } else { 255.0 })).unwrap();
    let x = preprocess(&half, (2, 2), false).unwrap();
    assert!(x.data().iter().all(|&v| (v.abs() - 1.0).abs() < 1e-6));
}

#[test]
fn split_sizes() {
    let labels = |n: usize| (0..n).map(|i| i % 7).collect::<Vec<_>>();
    let plan = split_dataset(&labels(100), 0, &SplitSpec::Ratio { val: 0.0, test: 0.15 }, false).unwrap();
    assert_eq!((plan.train.len(), plan.test.len()), (85, 15));
    let plan = split_dataset(&labels(10), 0, &SplitSpec::Ratio { val: 0.0, test: 0.15 }, false).unwrap();
    assert_eq!((plan.train.len(), plan.test.len()), (9, 1));

    let counts = SplitSpec::Counts {
        train: 5117,
        val: 0,
        test: 861,
    };
    let plan = split_dataset(&labels(5978), 3, &counts, false).unwrap();
    assert_eq!((plan.train.len(), plan.val.len(), plan.test.len()), (5117, 0, 861));
    assert_eq!(plan.spec_mode, "explicit-counts");

    // 4124 + 994 + 861 = 5979 > 5978
    let over = SplitSpec::Counts {
        train: 4124,
        val: 994,
        test: 861,
    };
    assert!(matches!(
        split_dataset(&labels(5978), 3, &over, false),
        Err(Error::Config(_))
    ));

    let a = split_dataset(&labels(50), 9, &SplitSpec::Nested { test: 0.15, val: 0.2 }, true).unwrap();
    let b = split_dataset(&labels(50), 9, &SplitSpec::Nested { test: 0.15, val: 0.2 }, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn manifest_from_a_fixture_tree() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_dataset(2, 8, 1).unwrap();
    write_dataset_tree(&data, dir.path()).unwrap();
    std::fs::remove_dir_all(dir.path().join("whole")).unwrap();
    std::fs::create_dir(dir.path().join("whole")).unwrap();
    std::fs::write(dir.path().join("creamy/notes.txt"), "x").unwrap();
    std::fs::write(dir.path().join("diced/broken.ppm"), "P6\n").unwrap();

    let m = build_manifest(dir.path()).unwrap();
    assert_eq!(m.len(), 12);
    assert_eq!(m.counts, vec![2, 2, 2, 2, 2, 2, 0]);
    assert_eq!(m.skipped.len(), 2);
    assert!(m.warnings.iter().any(|w| w.contains("whole")));
    let paths: Vec<_> = m.samples.iter().map(|s| s.path.clone()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);

    let loaded = Dataset::load(&m).unwrap();
    assert_eq!(loaded.images[0], data.images[0]);

    std::fs::create_dir(dir.path().join("boiled")).unwrap();
    assert!(matches!(build_manifest(dir.path()), Err(Error::Data(_))));
}

#[test]
fn ppm_round_trip() {
    let img = image(5, 7, 4);
    let back = decode_ppm(&encode_ppm(&img)).unwrap();
    assert_eq!(back, img);
    assert_eq!(ppm_header(&encode_ppm(&img)).unwrap().0, 7);
    assert!(matches!(decode_ppm(b"P6\n0 4\n255\n"), Err(Error::Data(_))));
}

#[test]
fn batches_cover_the_split() {
    let data = synthetic_dataset(2, 8, 0).unwrap();
    let pipe = Pipeline {
        target: (8, 8),
        ..Pipeline::default()
    };
    let idx: Vec<usize> = (0..10).collect();
    let sizes: Vec<usize> = Batches::new(&data, &idx, 4, Some(derive_seed(1, &[2])), 0, &pipe, false)
        .unwrap()
        .map(|b| b.unwrap().1.len())
        .collect();
    assert_eq!(sizes, [4, 4, 2]);

    let many: Vec<usize> = (0..994).map(|i| i % data.len()).collect();
    let b = Batches::new(&data, &many, 32, None, 0, &pipe, false).unwrap();
    assert_eq!(b.num_batches(), 32);
    let last = b.last().unwrap().unwrap();
    assert_eq!(last.0.shape(), &[2, 3, 8, 8]);
    assert!(matches!(
        Batches::new(&data, &[], 4, None, 0, &pipe, false),
        Err(Error::Config(_))
    ));
}
