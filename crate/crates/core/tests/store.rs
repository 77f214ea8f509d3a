use std::collections::HashMap;
use std::path::Path;

use histosynth::phantom::{phantom_corpus, PhantomStyle};
use histosynth::store::io::{quantize_raster, quantize_rgb, write_rgb_png};
use histosynth::store::*;
use histosynth::synth::{synthesize_patch, RealPatch, SynthesisParams};
use histosynth::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write_real(dir: &Path, style: &str, n: usize, seed: u64) -> Vec<RealPatch> {
    let patches = phantom_corpus(&PhantomStyle::standard(style), n, 32, seed).unwrap();
    for p in &patches {
        write_rgb_png(&dir.join(style).join(format!("{}.png", p.id)), &p.image).unwrap();
    }
    patches
}

fn real_set() -> Vec<RealPatch> {
    let mut out = Vec::new();
    for (k, s) in ["style_a", "style_b", "style_c"].iter().enumerate() {
        out.extend(phantom_corpus(&PhantomStyle::standard(*s), 4, 40, 50 * k as u64).unwrap());
    }
    out
}

#[test]
fn empty_directory_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ing = ingest(dir.path(), GroupingRule::ParentDir, None).unwrap();
    assert!(ing.manifest.is_empty());
    assert!(ing.groups.is_empty());
    assert!(ing.warnings.is_empty());
}

#[test]
fn singleton_group_is_warned() {
    let dir = tempfile::tempdir().unwrap();
    write_real(dir.path(), "style_a", 2, 0);
    write_real(dir.path(), "style_b", 1, 9);
    let ing = ingest(dir.path(), GroupingRule::ParentDir, None).unwrap();
    assert_eq!(ing.manifest.len(), 3);
    assert_eq!(ing.groups.len(), 1);
    assert_eq!(ing.groups[0].style_id, "style_a");
    assert_eq!(
        ing.warnings,
        vec![IngestWarning::SmallGroup {
            style_id: "style_b".into(),
            patches: 1
        }]
    );
}

#[test]
fn unreadable_file_is_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_real(dir.path(), "style_a", 2, 0);
    std::fs::write(dir.path().join("style_a/broken.png"), b"not an image").unwrap();
    let ing = ingest(dir.path(), GroupingRule::ParentDir, None).unwrap();
    assert_eq!(ing.manifest.len(), 2);
    assert!(
        matches!(&ing.warnings[..], [IngestWarning::Unreadable { path, .. }] if path.ends_with("broken.png"))
    );
}

#[test]
fn sidecar_grouping_reads_style_key() {
    let dir = tempfile::tempdir().unwrap();
    let patches = phantom_corpus(&PhantomStyle::standard("style_a"), 2, 32, 0).unwrap();
    for (i, p) in patches.iter().enumerate() {
        write_rgb_png(&dir.path().join(format!("p{i}.png")), &p.image).unwrap();
        std::fs::write(
            dir.path().join(format!("p{i}.json")),
            r#"{"style_id": "slide7", "magnification": "20X"}"#,
        )
        .unwrap();
    }
    let ing = ingest(dir.path(), GroupingRule::Sidecar, None).unwrap();
    assert_eq!(ing.groups.len(), 1);
    assert_eq!(ing.groups[0].style_id, "slide7");
    assert_eq!(ing.groups[0].patches.len(), 2);
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_real(dir.path(), "style_a", 3, 0);
    write_real(dir.path(), "style_b", 2, 5);
    let ing = ingest(dir.path(), GroupingRule::ParentDir, None).unwrap();
    ing.manifest.save().unwrap();
    let back = Manifest::load(dir.path()).unwrap();
    assert_eq!(back.records(), ing.manifest.records());
    let real = back.load_real(&back.style_groups()).unwrap();
    assert_eq!(real.len(), 5);
}

#[test]
fn manifest_with_missing_file_fails_to_load() {
    let dir = tempfile::tempdir().unwrap();
    write_real(dir.path(), "style_a", 2, 0);
    let ing = ingest(dir.path(), GroupingRule::ParentDir, None).unwrap();
    ing.manifest.save().unwrap();
    std::fs::remove_file(dir.path().join(&ing.manifest.records()[1].image)).unwrap();
    assert!(matches!(
        Manifest::load(dir.path()),
        Err(Error::MissingFile { .. })
    ));
}

#[test]
fn pair_of_two_returns_both_in_either_order() {
    let items = ["a", "b"];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut orders = HashMap::new();
    for _ in 0..1000 {
        let (s2, s) = sample_pair(&items, &mut rng).unwrap();
        assert_ne!(s2, s);
        *orders.entry((*s2, *s)).or_insert(0) += 1;
    }
    assert_eq!(orders.len(), 2);
    assert!(sample_pair(&items[..1], &mut rng).is_err());
}

#[test]
fn pairs_are_distinct_and_uniform() {
    let items = [0usize, 1, 2, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let mut counts = [[0u32; 4]; 4];
    for _ in 0..n {
        let (a, b) = sample_pair(&items, &mut rng).unwrap();
        assert_ne!(a, b);
        counts[*a][*b] += 1;
    }
    let p = 1.0 / 12.0;
    let expect = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for (a, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if a == b {
                assert_eq!(c, 0);
                continue;
            }
            assert!((c as f64 - expect).abs() <= 3.0 * sigma, "({a},{b}): {c}");
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
    }
    // 11 degrees of freedom, 0.999 quantile
    assert!(chi2 < 31.26, "chi2 {chi2}");
}

#[test]
fn generated_pairs_never_cross_groups() {
    let real = real_set();
    let style_of: HashMap<_, _> = real
        .iter()
        .map(|p| (p.id.clone(), p.style_id.clone()))
        .collect();
    let params = SynthesisParams {
        patch_size: 24,
        cellularity: 0.0,
        ..Default::default()
    };
    let samples = generate_samples(&real, &params, 300, 0, None).unwrap();
    for s in &samples {
        let p = &s.provenance;
        assert_ne!(p.background_source, p.texture_source);
        assert_eq!(style_of[&p.background_source], s.style_id);
        assert_eq!(style_of[&p.texture_source], s.style_id);
    }
    let only_b = generate_samples(&real, &params, 20, 0, Some("style_b")).unwrap();
    assert!(only_b.iter().all(|s| s.style_id == "style_b"));
    assert!(matches!(
        generate_samples(&real, &params, 1, 0, Some("nope")),
        Err(Error::GroupTooSmall(_))
    ));
}

#[test]
fn each_generated_sample_can_be_regenerated_alone() {
    let real = real_set();
    let params = SynthesisParams {
        patch_size: 24,
        ..Default::default()
    };
    let batch = generate_samples(&real, &params, 5, 10, None).unwrap();
    let alone = generate_samples(&real, &params, 1, 13, None).unwrap();
    assert_eq!(batch[3], alone[0]);
}

#[test]
fn sample_round_trip_at_8_bit() {
    let real = real_set();
    let dir = tempfile::tempdir().unwrap();
    let mut store = SampleStore::open(dir.path()).unwrap();
    let params = SynthesisParams {
        patch_size: 32,
        ..Default::default()
    };
    for i in 0..4 {
        let s = synthesize_patch(&real[0], &real[1], &params.with_seed(i)).unwrap();
        let before = store.manifest().len();
        let id = format!("syn_{i:03}");
        store.write_sample(&id, SampleKind::Initial, &s).unwrap();
        assert_eq!(store.manifest().len(), before + 1);

        let back = store.read_sample(&id).unwrap();
        assert_eq!(back.image, quantize_rgb(&s.image).unwrap());
        assert_eq!(back.gt_mask, s.gt_mask);
        assert_eq!(
            back.soft_mask.raster(),
            &quantize_raster(s.soft_mask.raster()).unwrap()
        );

        let raw = image::open(dir.path().join("masks").join(format!("{id}.png")))
            .unwrap()
            .to_luma8();
        assert!(raw.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }
    assert!(matches!(
        store.write_sample(
            "syn_000",
            SampleKind::Initial,
            &synthesize_patch(&real[0], &real[1], &params).unwrap()
        ),
        Err(Error::Manifest(_))
    ));
    let reopened = SampleStore::open(dir.path()).unwrap();
    assert_eq!(reopened.manifest().records(), store.manifest().records());
}

#[test]
fn missing_companion_file_names_the_sample() {
    let real = real_set();
    let dir = tempfile::tempdir().unwrap();
    let mut store = SampleStore::open(dir.path()).unwrap();
    let params = SynthesisParams {
        patch_size: 24,
        ..Default::default()
    };
    let s = synthesize_patch(&real[0], &real[1], &params).unwrap();
    store
        .write_sample("lonely", SampleKind::Initial, &s)
        .unwrap();
    std::fs::remove_file(dir.path().join("soft_masks/lonely.png")).unwrap();
    match store.read_sample("lonely") {
        Err(Error::MissingFile { id, what, .. }) => {
            assert_eq!((id.as_str(), what), ("lonely", "soft_mask"))
        }
        other => panic!("unexpected {other:?}"),
    }
}
