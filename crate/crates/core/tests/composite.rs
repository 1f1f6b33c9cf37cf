use gpm_core::compositor::{
    build_masks, composite_kv, composite_q, export_bundle, pixel_composite, BundleManifest,
    Provenance,
};
use gpm_core::graph_cut::LabelMap;
use gpm_core::imageio::read_label_png;
use gpm_core::synthetic::{write_synthetic_stack, SyntheticConfig};
use gpm_core::tensor_store::{load_stack, read_blob, FeatureStack, TensorBlob, Which};
use gpm_testkit::{masked_sum_oracle, random_label_map};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(dir: &std::path::Path) -> FeatureStack {
    load_stack(write_synthetic_stack(dir, &SyntheticConfig::default()).unwrap()).unwrap()
}

#[test]
fn masks_partition_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let labels = random_label_map(&mut rng, 16, 16, 3);
        let masks = build_masks(&labels, stack.manifest()).unwrap();
        for layer in &masks.layers {
            let one_hot = masks.one_hot(&layer.layer_id).unwrap();
            for cell in 0..layer.width * layer.height {
                assert_eq!(one_hot.iter().map(|m| m[cell] as u32).sum::<u32>(), 1);
            }
        }
    }
}

#[test]
fn kv_equals_masked_sum() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let labels = random_label_map(&mut rng, 16, 16, 3);
        let masks = build_masks(&labels, stack.manifest()).unwrap();
        for record in &stack.manifest().layers {
            let layer_mask = masks.layer(&record.layer_id).unwrap();
            for &t in &stack.manifest().timesteps {
                let (k, v) = composite_kv(&stack, &masks, &record.layer_id, t).unwrap();
                for (blob, which) in [(k, Which::K), (v, Which::V)] {
                    let sources: Vec<Vec<f32>> = (0..3)
                        .map(|i| stack.tensor_f32(i, &record.layer_id, t, which).unwrap())
                        .collect();
                    let want = masked_sum_oracle(&sources, &layer_mask.labels, record.heads, record.dim);
                    assert_eq!(blob.to_f32(), want);
                }
            }
        }
    }
}

#[test]
fn constant_labels_reproduce_the_source() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let masks = build_masks(&LabelMap::constant(16, 16, 1), stack.manifest()).unwrap();
    let (k, _) = composite_kv(&stack, &masks, "mid", 401).unwrap();
    let src = stack.tensor(&gpm_core::tensor_store::TensorKey::new(1, "mid", 401, Which::K)).unwrap();
    assert_eq!(k, src);
    let comp = pixel_composite(stack.images(), &LabelMap::constant(16, 16, 1)).unwrap();
    assert_eq!(&comp.image, stack.image(1));
}

#[test]
fn all_base_query_is_the_live_query() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let masks = build_masks(&LabelMap::constant(16, 16, 2), stack.manifest()).unwrap();
    let record = stack.layer("down_0").unwrap();
    let live: Vec<f32> = (0..record.tensor_len()).map(|i| (i as f32).sin()).collect();
    let q_model = TensorBlob::from_f32(record.tensor_shape().to_vec(), live).unwrap();
    let q = composite_q(&stack, &masks, "down_0", 1, 2, &q_model).unwrap();
    assert_eq!(q, q_model);
}

#[test]
fn query_outside_base_comes_from_storage() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let mut labels = LabelMap::constant(16, 16, 0);
    for y in 0..16 {
        for x in 8..16 {
            labels.labels[y * 16 + x] = 1;
        }
    }
    let masks = build_masks(&labels, stack.manifest()).unwrap();
    let record = stack.layer("down_0").unwrap();
    let live = vec![9.0f32; record.tensor_len()];
    let q_model = TensorBlob::from_f32(record.tensor_shape().to_vec(), live.clone()).unwrap();
    let q = composite_q(&stack, &masks, "down_0", 1, 0, &q_model).unwrap().to_f32();
    let stored = stack.tensor_f32(1, "down_0", 1, Which::Q).unwrap();
    let want = masked_sum_oracle(&[live, stored], &masks.layer("down_0").unwrap().labels, 2, 8);
    assert_eq!(q, want);
}

#[test]
fn bundle_export_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let stack = fixture(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = random_label_map(&mut rng, 16, 16, 3);
    let out = dir.path().join("bundle");
    let bundle = export_bundle(&stack, &labels, 0, Provenance::default(), &out).unwrap();

    let text = std::fs::read_to_string(out.join("bundle.json")).unwrap();
    let parsed: BundleManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, bundle);
    assert_eq!(bundle.layers.len(), 3);
    assert_eq!(read_label_png(out.join("labels.png")).unwrap().labels, labels.labels);
    assert_eq!(bundle.label_map_hash, labels.content_hash());

    let masks = build_masks(&labels, stack.manifest()).unwrap();
    for layer in &bundle.layers {
        let m = read_blob(out.join(&layer.masks)).unwrap();
        assert_eq!(m.shape(), &[3, layer.feat_height, layer.feat_width]);
        let want: Vec<f32> = masks
            .one_hot(&layer.layer_id)
            .unwrap()
            .into_iter()
            .flatten()
            .map(f32::from)
            .collect();
        assert_eq!(m.to_f32(), want);
        assert_eq!(layer.timesteps.len(), 3);
        for ts in &layer.timesteps {
            let (k, v) = composite_kv(&stack, &masks, &layer.layer_id, ts.timestep).unwrap();
            assert_eq!(read_blob(out.join(&ts.k)).unwrap(), k);
            assert_eq!(read_blob(out.join(&ts.v)).unwrap(), v);
        }
    }
    for q in &bundle.q_mixing.q_sources {
        assert_ne!(q.image, 0);
        assert!(std::path::Path::new(&q.path).is_file());
    }
}
