mod common;

use std::sync::Arc;

use common::fixture;
use dba_core::scoring::{
    pac_score, score_caption, similarity_score, EmbedInput, EmbeddingProvider, FixtureVectors, HashMockEmbedder,
    ScoringProviders, SpaceId,
};
use dba_core::store::{Acquisition, MediaType};
use dba_core::{EmbeddingVector, ImageAsset, ImageKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook cosine, no rescaling or compensation.
fn oracle(t: &[f64], i: &[f64]) -> f64 {
    let dot: f64 = t.iter().zip(i).map(|(a, b)| a * b).sum();
    let nt: f64 = t.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ni: f64 = i.iter().map(|a| a * a).sum::<f64>().sqrt();
    100.0 * dot / (nt * ni)
}

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 10f64.powi(rng.gen_range(-3..=3));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn ev(space: SpaceId, v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(space, v).unwrap()
}

#[test]
fn similarity_matches_textbook_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..10_000 {
        let dim = rng.gen_range(64..=1024);
        let (t, i) = (vector(&mut rng, dim), vector(&mut rng, dim));
        let want = oracle(&t, &i);
        let got = similarity_score(&ev(SpaceId::Clip, t.clone()), &ev(SpaceId::Clip, i.clone())).unwrap();
        assert!((got - want).abs() < 1e-9, "dim {dim}: {got} vs {want}");
        let self_sim = similarity_score(&ev(SpaceId::Clip, t.clone()), &ev(SpaceId::Clip, t)).unwrap();
        assert!((self_sim - 100.0).abs() < 1e-12, "{self_sim}");
    }
}

#[test]
fn pac_is_zero_for_opposed_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut negatives = 0;
    for _ in 0..2_000 {
        let dim = rng.gen_range(64..=1024);
        let (t, i) = (vector(&mut rng, dim), vector(&mut rng, dim));
        let (t, i) = (ev(SpaceId::Pac, t), ev(SpaceId::Pac, i));
        let cos = similarity_score(&t, &i).unwrap();
        let pac = pac_score(&t, &i, 1.0).unwrap();
        if cos < 0.0 {
            negatives += 1;
            assert_eq!(pac, 0.0);
        } else {
            assert!((pac - cos).abs() < 1e-12);
        }
    }
    assert!(negatives > 500);
}

#[test]
fn mismatched_spaces_and_dimensions_are_rejected() {
    let a = ev(SpaceId::Clip, vec![1.0, 2.0]);
    assert!(similarity_score(&a, &ev(SpaceId::Blip, vec![1.0, 2.0])).is_err());
    assert!(similarity_score(&a, &ev(SpaceId::Clip, vec![1.0, 2.0, 3.0])).is_err());
    let zero = ev(SpaceId::Clip, vec![0.0; 2]);
    assert!(similarity_score(&a, &zero).is_err());
    assert!(EmbeddingVector::new(SpaceId::Clip, vec![1.0, f64::NAN]).is_err());
}

proptest! {
    #[test]
    fn similarity_is_symmetric_bounded_and_scale_free(
        pair in (2usize..256).prop_flat_map(|d| (prop::collection::vec(-1e3f64..1e3, d), prop::collection::vec(-1e3f64..1e3, d))),
        k in 1e-6f64..1e6,
    ) {
        let (t, i) = pair;
        prop_assume!(t.iter().any(|x| *x != 0.0) && i.iter().any(|x| *x != 0.0));
        let a = similarity_score(&ev(SpaceId::Blip, t.clone()), &ev(SpaceId::Blip, i.clone())).unwrap();
        let b = similarity_score(&ev(SpaceId::Blip, i.clone()), &ev(SpaceId::Blip, t.clone())).unwrap();
        let scaled: Vec<f64> = t.iter().map(|x| x * k).collect();
        let c = similarity_score(&ev(SpaceId::Blip, scaled), &ev(SpaceId::Blip, i)).unwrap();
        prop_assert!((-100.0..=100.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((a - c).abs() < 1e-9);
    }
}

#[test]
fn hash_mock_is_unit_norm_and_deterministic() {
    for space in SpaceId::ALL {
        let e = HashMockEmbedder::new(space, 512);
        for n in 0..1000 {
            let id = format!("asset-{n}");
            let v = e.embed(EmbedInput::Asset(&id)).unwrap();
            let norm: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(v, e.embed(EmbedInput::Asset(&id)).unwrap());
        }
    }
}

fn named_asset(id: &str) -> ImageAsset {
    ImageAsset {
        asset_id: id.to_string(),
        kind: ImageKind::ObliqueOrbit,
        acquisition: Acquisition::Imported {
            file_name: format!("{id}.png"),
        },
        width_px: 64,
        height_px: 64,
        media_type: MediaType::Png,
        storage_path: format!("{id}.png"),
    }
}

#[test]
fn fixture_scores_match_frozen_oracle() {
    let vectors = Arc::new(FixtureVectors::load(&fixture("embeddings/perimeter_vectors.json")).unwrap());
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("embeddings/perimeter_expected.json")).unwrap()).unwrap();
    let caption = expected["caption"].as_str().unwrap();
    let rows = expected["triplets"].as_array().unwrap();
    let images: Vec<ImageAsset> = rows.iter().map(|r| named_asset(r["asset_id"].as_str().unwrap())).collect();

    let scores = score_caption(caption, &images, &ScoringProviders::fixture(vectors)).unwrap();
    assert!(scores.failures.is_empty());
    assert_eq!(scores.triplets.len(), rows.len());
    for (got, want) in scores.triplets.iter().zip(rows) {
        assert_eq!(got.asset_id, want["asset_id"].as_str().unwrap());
        for (g, key) in [(got.clip_pct, "clip_pct"), (got.blip_pct, "blip_pct"), (got.pac_pct, "pac_pct")] {
            let w = want[key].as_f64().unwrap();
            assert!((g - w).abs() < 1e-9, "{} {key}: {g} vs {w}", got.asset_id);
        }
    }
}

#[test]
fn unknown_fixture_key_becomes_a_per_image_failure() {
    let vectors = Arc::new(FixtureVectors::load(&fixture("embeddings/perimeter_vectors.json")).unwrap());
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("embeddings/perimeter_expected.json")).unwrap()).unwrap();
    let caption = expected["caption"].as_str().unwrap();
    let images = vec![named_asset("asset-00"), named_asset("asset-missing")];
    let scores = score_caption(caption, &images, &ScoringProviders::fixture(vectors)).unwrap();
    assert_eq!(scores.triplets.len(), 1);
    assert_eq!(scores.failures.len(), 1);
    assert_eq!(scores.failures[0].asset_id, "asset-missing");
}
