//! Property tests over the spec-level invariants that hold for arbitrary
//! inputs, not just the hand-picked cases.

use proptest::prelude::*;

use forgemix_core::blending::alpha_blend;
use forgemix_core::forgery_typing::ForgeryType;
use forgemix_core::imaging::{ssim, GrayImage, ImageBuffer};
use forgemix_core::losses::{cosine_sim, EmbeddingBatch};
use forgemix_core::mask_region::{generate_mask, RegionName, RegionSpec};
use forgemix_core::prompting::{fine_prompt, parse_prompt, PromptKind};

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = ImageBuffer> {
    proptest::collection::vec(0.0f64..=1.0, w * h * 3)
        .prop_map(move |data| ImageBuffer::new(w, h, data).unwrap())
}

fn gray_strategy(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    proptest::collection::vec(0.0f64..=1.0, w * h)
        .prop_map(move |data| GrayImage::new(w, h, data).unwrap())
}

proptest! {
    #[test]
    fn mask_is_symmetric_and_in_range(
        a in image_strategy(8, 8),
        b in image_strategy(8, 8),
    ) {
        let ab = generate_mask(&a, &b).unwrap();
        let ba = generate_mask(&b, &a).unwrap();
        prop_assert_eq!(ab.values(), ba.values());
        prop_assert!(ab.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ssim_symmetric_and_bounded(
        a in gray_strategy(12, 12),
        b in gray_strategy(12, 12),
    ) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn alpha_blend_stays_convex(
        real in image_strategy(8, 8),
        fake in image_strategy(8, 8),
        alpha in 0.0f64..=1.0,
        x0 in 0usize..4,
        y0 in 0usize..4,
    ) {
        let mut membership = vec![false; 64];
        for y in y0..y0 + 4 {
            for x in x0..x0 + 4 {
                membership[y * 8 + x] = true;
            }
        }
        let region = RegionSpec::from_membership(RegionName::Mouth, 8, 8, membership).unwrap();
        let out = alpha_blend(&real, &fake, &region, alpha).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let (r, f, o) = (real.pixel(x, y)[c], fake.pixel(x, y)[c], out.pixel(x, y)[c]);
                    if region.contains(x, y) {
                        prop_assert!(o >= r.min(f) - 1e-12 && o <= r.max(f) + 1e-12);
                    } else {
                        prop_assert_eq!(o, r);
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_invariant_under_positive_scaling(
        rows in proptest::collection::vec(
            proptest::collection::vec(-1.0f64..=1.0, 6),
            2..5,
        ),
        scale_a in 0.01f64..100.0,
        scale_b in 0.01f64..100.0,
    ) {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let Ok(u) = EmbeddingBatch::new(n, 6, flat.clone()) else {
            // a sampled row was (near) zero; nothing to check
            return Ok(());
        };
        let (Ok(scaled_a), Ok(scaled_b)) = (
            EmbeddingBatch::new(n, 6, flat.iter().map(|v| v * scale_a).collect()),
            EmbeddingBatch::new(n, 6, flat.iter().map(|v| v * scale_b).collect()),
        ) else {
            return Ok(());
        };
        let base = cosine_sim(&u, &u).unwrap();
        let scaled = cosine_sim(&scaled_a, &scaled_b).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((base.get(i, j) - scaled.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fine_prompts_round_trip(region_idx in 0usize..4, type_idx in 0usize..5) {
        let region = RegionName::ALL[region_idx];
        let ftype = ForgeryType::ALL[type_idx];
        let prompt = fine_prompt(region, ftype);
        prop_assert_eq!(parse_prompt(&prompt.text), Some(PromptKind::Fine(region, ftype)));
    }
}
