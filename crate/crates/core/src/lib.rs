//! Synthesis of mixed face-forgery images with sentence-level region/type
//! annotations, plus the contrastive objectives and prompt matching used to
//! train and evaluate on them.
//!
//! The pipeline takes paired real/fake face crops with 68-point landmarks,
//! locates the manipulated region, blends the fake region back into the real
//! image (alpha or Poisson), decides the forgery type with measurable
//! criteria, and renders a prompt such as "this is a fake person, the
//! forgery region is mouth, the forgery type is blur".

pub mod blending;
pub mod forgery_typing;
pub mod imaging;
pub mod losses;
pub mod mask_region;
pub mod pipeline;
pub mod preview;
pub mod prompting;
pub mod synthetic;

pub use blending::{alpha_blend, draw_method, poisson_blend, synthesize, BlendConfig, BlendMethod};
pub use forgery_typing::{decide_types, ForgeryType, TypeReport, TypeThresholds};
pub use imaging::{
    glcm, glcm_contrast, laplacian_response, rgb_to_lab, ssim, to_grayscale, variance, GrayImage,
    ImageBuffer,
};
pub use losses::{
    coarse_loss, cosine_sim, fine_loss, match_feature, total_loss, toy_cotrain, C2FConfig,
    EmbeddingBatch, MatchMode,
};
pub use mask_region::{
    derive_regions, extract_forgery_regions, generate_mask, select_region, ForgeryMask,
    LandmarkSet, RegionName, RegionSpec,
};
pub use pipeline::{run, MixedSample, PipelineConfig, RunReport};
pub use prompting::{coarse_prompt, fine_prompt, parse_prompt, vocabulary, CoarseLabel, Prompt};
