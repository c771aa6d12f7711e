//! The four measured forgery-type decisions (color difference, blur,
//! structure abnormal, texture abnormal) plus the selection policy that
//! labels each mixed sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blending::BlendMethod;
use crate::imaging::{
    self, glcm, glcm_contrast, laplacian_raw, ssim, to_grayscale, variance, GrayImage,
    ImageBuffer, ImagingError, GLCM_DIRECTIONS,
};

/// The five forgery types a mixed sample can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForgeryType {
    ColorDifference,
    Blur,
    StructureAbnormal,
    TextureAbnormal,
    BlendBoundary,
}

impl ForgeryType {
    pub const ALL: [ForgeryType; 5] = [
        ForgeryType::ColorDifference,
        ForgeryType::Blur,
        ForgeryType::StructureAbnormal,
        ForgeryType::TextureAbnormal,
        ForgeryType::BlendBoundary,
    ];

    /// Lowercase phrase used in prompts and manifests.
    pub fn as_phrase(self) -> &'static str {
        match self {
            ForgeryType::ColorDifference => "color difference",
            ForgeryType::Blur => "blur",
            ForgeryType::StructureAbnormal => "structure abnormal",
            ForgeryType::TextureAbnormal => "texture abnormal",
            ForgeryType::BlendBoundary => "blend boundary",
        }
    }

    pub fn from_phrase(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_phrase() == s)
    }
}

/// Decision thresholds for the four measured types.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeThresholds {
    pub theta_c_mean: f64,
    pub theta_c_std: f64,
    /// Laplacian-variance gap on 0-255 scaled intensities.
    pub theta_blur: f64,
    pub theta_ssim: f64,
    pub theta_texture: f64,
}

impl Default for TypeThresholds {
    fn default() -> Self {
        Self {
            theta_c_mean: 1.0,
            theta_c_std: 0.5,
            theta_blur: 100.0,
            theta_ssim: 0.97,
            theta_texture: 0.7,
        }
    }
}

impl TypeThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.theta_c_mean <= 0.0
            || self.theta_c_std <= 0.0
            || self.theta_blur <= 0.0
            || self.theta_texture <= 0.0
        {
            return Err("type thresholds must be positive".into());
        }
        if !(self.theta_ssim > 0.0 && self.theta_ssim <= 1.0) {
            return Err(format!("theta_ssim {} outside (0, 1]", self.theta_ssim));
        }
        Ok(())
    }
}

/// Verdicts and raw scores of the four measured decisions, kept for audit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TypeReport {
    pub color_difference: bool,
    pub blur: bool,
    pub structure_abnormal: bool,
    pub texture_abnormal: bool,
    /// Mean over L/a/b of the absolute channel-mean difference.
    pub color_mean_dist: f64,
    /// Mean over L/a/b of the absolute channel-std difference.
    pub color_std_dist: f64,
    /// Laplacian variance gap, real minus fake, on the 0-255 scale.
    pub blur_variance_gap: f64,
    pub ssim: f64,
    /// GLCM contrast gap, real minus fake.
    pub texture_contrast_gap: f64,
}

impl TypeReport {
    pub fn passing(&self) -> Vec<ForgeryType> {
        let mut out = Vec::new();
        if self.color_difference {
            out.push(ForgeryType::ColorDifference);
        }
        if self.blur {
            out.push(ForgeryType::Blur);
        }
        if self.structure_abnormal {
            out.push(ForgeryType::StructureAbnormal);
        }
        if self.texture_abnormal {
            out.push(ForgeryType::TextureAbnormal);
        }
        out
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    variance(values).map(f64::sqrt).unwrap_or(0.0)
}

/// Color difference: channel-wise mean/std distance in Lab space. True when
/// both the mean distance and the std distance clear their thresholds.
pub fn color_difference(
    real: &ImageBuffer,
    fake: &ImageBuffer,
    th: &TypeThresholds,
) -> Result<(bool, f64, f64), ImagingError> {
    if !real.same_dims(fake) {
        return Err(ImagingError::DimensionMismatch(
            real.width(),
            real.height(),
            fake.width(),
            fake.height(),
        ));
    }
    let lr = imaging::rgb_to_lab(real);
    let lf = imaging::rgb_to_lab(fake);
    let channels = [(&lr.l, &lf.l), (&lr.a, &lf.a), (&lr.b, &lf.b)];
    let m = channels
        .iter()
        .map(|(r, f)| (mean(r) - mean(f)).abs())
        .sum::<f64>()
        / 3.0;
    let s = channels
        .iter()
        .map(|(r, f)| (std_dev(r) - std_dev(f)).abs())
        .sum::<f64>()
        / 3.0;
    Ok((m > th.theta_c_mean && s > th.theta_c_std, m, s))
}

/// Blur: Laplacian variance of the real crop must exceed the fake's by more
/// than the threshold. Intensities are scaled to 0-255 first.
pub fn blur_decision(
    real: &GrayImage,
    fake: &GrayImage,
    th: &TypeThresholds,
) -> Result<(bool, f64, f64), ImagingError> {
    if real.width() < 3 || real.height() < 3 || fake.width() < 3 || fake.height() < 3 {
        return Err(ImagingError::ImageTooSmall {
            width: real.width().min(fake.width()),
            height: real.height().min(fake.height()),
            min: 3,
        });
    }
    let scaled_var = |img: &GrayImage| {
        let scaled: Vec<f64> = img.data().iter().map(|v| v * 255.0).collect();
        let lap = laplacian_raw(img.width(), img.height(), &scaled);
        variance(&lap)
    };
    let r_var = scaled_var(real)?;
    let f_var = scaled_var(fake)?;
    Ok((r_var > f_var && (r_var - f_var) > th.theta_blur, r_var, f_var))
}

/// Structure abnormal: SSIM below the threshold.
pub fn structure_decision(
    real: &GrayImage,
    fake: &GrayImage,
    th: &TypeThresholds,
) -> Result<(bool, f64), ImagingError> {
    let s = ssim(real, fake)?;
    Ok((s < th.theta_ssim, s))
}

/// Texture abnormal: GLCM contrast of the real crop must exceed the fake's
/// by more than the threshold.
pub fn texture_decision(
    real: &GrayImage,
    fake: &GrayImage,
    th: &TypeThresholds,
) -> Result<(bool, f64, f64), ImagingError> {
    let cr = glcm_contrast(&glcm(real, &GLCM_DIRECTIONS, false)?)?;
    let cf = glcm_contrast(&glcm(fake, &GLCM_DIRECTIONS, false)?)?;
    Ok((cr > cf && (cr - cf) > th.theta_texture, cr, cf))
}

/// Runs all four measured decisions on the original real/fake crops of the
/// selected region.
pub fn measure_types(
    real_crop: &ImageBuffer,
    fake_crop: &ImageBuffer,
    th: &TypeThresholds,
) -> Result<TypeReport, ImagingError> {
    let (cd, m, s) = color_difference(real_crop, fake_crop, th)?;
    let gray_real = to_grayscale(real_crop);
    let gray_fake = to_grayscale(fake_crop);
    let (bl, r_var, f_var) = blur_decision(&gray_real, &gray_fake, th)?;
    let (st, ssim_value) = structure_decision(&gray_real, &gray_fake, th)?;
    let (tx, cr, cf) = texture_decision(&gray_real, &gray_fake, th)?;
    Ok(TypeReport {
        color_difference: cd,
        blur: bl,
        structure_abnormal: st,
        texture_abnormal: tx,
        color_mean_dist: m,
        color_std_dist: s,
        blur_variance_gap: r_var - f_var,
        ssim: ssim_value,
        texture_contrast_gap: cr - cf,
    })
}

/// Type selection: alpha blending is labeled blend boundary outright (the
/// measured verdicts are still recorded for audit); Poisson samples pick
/// uniformly among passing verdicts, or None when nothing passes.
pub fn decide_types<R: Rng>(
    real_crop: &ImageBuffer,
    fake_crop: &ImageBuffer,
    method: &BlendMethod,
    th: &TypeThresholds,
    rng: &mut R,
) -> Result<(TypeReport, Option<ForgeryType>), ImagingError> {
    let report = measure_types(real_crop, fake_crop, th)?;
    let selected = match method {
        BlendMethod::Alpha { .. } => Some(ForgeryType::BlendBoundary),
        BlendMethod::Poisson { .. } => {
            let passing = report.passing();
            if passing.is_empty() {
                None
            } else {
                Some(passing[rng.random_range(0..passing.len())])
            }
        }
    };
    Ok((report, selected))
}
