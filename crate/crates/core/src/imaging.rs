//! Pure numerical image primitives shared by the forgery-type decision
//! algorithms: grayscale, CIE Lab conversion, Laplacian response, variance,
//! SSIM, and GLCM contrast.
//!
//! All pixel math is double precision on values normalized to `[0, 1]`;
//! 8-bit data is converted once at load time.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("image is {width}x{height} but this operation needs at least {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("co-occurrence matrix is not normalized")]
    NotNormalized,
}

/// RGB image with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image from interleaved RGB data. Values are clamped to `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ImageTooSmall {
                width,
                height,
                min: 1,
            });
        }
        if data.len() != width * height * 3 {
            return Err(ImagingError::DimensionMismatch(
                width,
                height,
                data.len() / 3,
                1,
            ));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from 8-bit RGB bytes by dividing by 255.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImagingError> {
        if bytes.len() != width * height * 3 {
            return Err(ImagingError::DimensionMismatch(
                width,
                height,
                bytes.len() / 3,
                1,
            ));
        }
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, data)
    }

    /// Constant-colored image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self, ImagingError> {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0].clamp(0.0, 1.0);
        self.data[i + 1] = rgb[1].clamp(0.0, 1.0);
        self.data[i + 2] = rgb[2].clamp(0.0, 1.0);
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Axis-aligned crop; the rectangle must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, ImagingError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(ImagingError::DimensionMismatch(w, h, self.width, self.height));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Self::new(w, h, data)
    }

    /// Quantizes back to 8-bit RGB bytes (round half away from zero).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Single-channel intensity image, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ImageTooSmall {
                width,
                height,
                min: 1,
            });
        }
        if data.len() != width * height {
            return Err(ImagingError::DimensionMismatch(width, height, data.len(), 1));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// CIE L*a*b* image stored as planar channels. L in `[0, 100]`.
#[derive(Debug, Clone)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// 256x256 gray-level co-occurrence matrix.
#[derive(Debug, Clone)]
pub struct Glcm {
    matrix: Vec<f64>,
    normalized: bool,
}

pub const GLCM_LEVELS: usize = 256;

/// Right, down, left, up unit offsets.
pub const GLCM_DIRECTIONS: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

impl Glcm {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * GLCM_LEVELS + j]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn sum(&self) -> f64 {
        self.matrix.iter().sum()
    }
}

/// Luma conversion with BT.601 weights.
pub fn to_grayscale(img: &ImageBuffer) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

// sRGB <-> XYZ (D65) constants.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const LAB_EPS: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(ft: f64) -> f64 {
    let cube = ft * ft * ft;
    if cube > LAB_EPS {
        cube
    } else {
        (116.0 * ft - 16.0) / LAB_KAPPA
    }
}

/// sRGB -> linear RGB -> XYZ (D65) -> CIE L*a*b* per pixel.
pub fn rgb_to_lab(img: &ImageBuffer) -> LabImage {
    let n = img.width * img.height;
    let mut l = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let (lr, lg, lb) = (
            srgb_to_linear(px[0]),
            srgb_to_linear(px[1]),
            srgb_to_linear(px[2]),
        );
        let x = SRGB_TO_XYZ[0][0] * lr + SRGB_TO_XYZ[0][1] * lg + SRGB_TO_XYZ[0][2] * lb;
        let y = SRGB_TO_XYZ[1][0] * lr + SRGB_TO_XYZ[1][1] * lg + SRGB_TO_XYZ[1][2] * lb;
        let z = SRGB_TO_XYZ[2][0] * lr + SRGB_TO_XYZ[2][1] * lg + SRGB_TO_XYZ[2][2] * lb;
        let fx = lab_f(x / D65_WHITE[0]);
        let fy = lab_f(y / D65_WHITE[1]);
        let fz = lab_f(z / D65_WHITE[2]);
        l.push((116.0 * fy - 16.0).clamp(0.0, 100.0));
        a.push(500.0 * (fx - fy));
        b.push(200.0 * (fy - fz));
    }
    LabImage {
        width: img.width,
        height: img.height,
        l,
        a,
        b,
    }
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut values are clamped to `[0, 1]`.
pub fn lab_to_rgb(lab: &LabImage) -> ImageBuffer {
    let n = lab.width * lab.height;
    let mut data = Vec::with_capacity(n * 3);
    // XYZ -> linear sRGB (inverse of SRGB_TO_XYZ).
    const XYZ_TO_SRGB: [[f64; 3]; 3] = [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ];
    for i in 0..n {
        let fy = (lab.l[i] + 16.0) / 116.0;
        let fx = fy + lab.a[i] / 500.0;
        let fz = fy - lab.b[i] / 200.0;
        let xr = lab_f_inv(fx);
        let yr = if lab.l[i] > LAB_KAPPA * LAB_EPS {
            fy * fy * fy
        } else {
            lab.l[i] / LAB_KAPPA
        };
        let zr = lab_f_inv(fz);
        let (x, y, z) = (xr * D65_WHITE[0], yr * D65_WHITE[1], zr * D65_WHITE[2]);
        let lr = XYZ_TO_SRGB[0][0] * x + XYZ_TO_SRGB[0][1] * y + XYZ_TO_SRGB[0][2] * z;
        let lg = XYZ_TO_SRGB[1][0] * x + XYZ_TO_SRGB[1][1] * y + XYZ_TO_SRGB[1][2] * z;
        let lb = XYZ_TO_SRGB[2][0] * x + XYZ_TO_SRGB[2][1] * y + XYZ_TO_SRGB[2][2] * z;
        data.push(linear_to_srgb(lr).clamp(0.0, 1.0));
        data.push(linear_to_srgb(lg).clamp(0.0, 1.0));
        data.push(linear_to_srgb(lb).clamp(0.0, 1.0));
    }
    ImageBuffer {
        width: lab.width,
        height: lab.height,
        data,
    }
}

pub(crate) fn laplacian_raw(width: usize, height: usize, data: &[f64]) -> Vec<f64> {
    let at = |x: isize, y: isize| -> f64 {
        // replicate border padding
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        data[y * width + x]
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height as isize {
        for x in 0..width as isize {
            out.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    out
}

/// 4-neighbor Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]` with replicate padding.
/// Returns one response value per pixel in row-major order.
pub fn laplacian_response(img: &GrayImage) -> Result<Vec<f64>, ImagingError> {
    if img.width < 3 || img.height < 3 {
        return Err(ImagingError::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 3,
        });
    }
    Ok(laplacian_raw(img.width, img.height, &img.data))
}

/// Population variance (divide by count).
pub fn variance(values: &[f64]) -> Result<f64, ImagingError> {
    if values.is_empty() {
        return Err(ImagingError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let g = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = g;
            sum += g;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) on the `[0, 1]`
/// dynamic range. Windows slide over valid positions only.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, ImagingError> {
    if a.width != b.width || a.height != b.height {
        return Err(ImagingError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(ImagingError::ImageTooSmall {
            width: a.width,
            height: a.height,
            min: SSIM_WINDOW,
        });
    }
    let w = ssim_window_weights();
    let mut acc = 0.0;
    let mut count = 0usize;
    for wy in 0..=a.height - SSIM_WINDOW {
        for wx in 0..=a.width - SSIM_WINDOW {
            let mut mu1 = 0.0;
            let mut mu2 = 0.0;
            let mut m11 = 0.0;
            let mut m22 = 0.0;
            let mut m12 = 0.0;
            for ky in 0..SSIM_WINDOW {
                let row = (wy + ky) * a.width + wx;
                for kx in 0..SSIM_WINDOW {
                    let weight = w[ky * SSIM_WINDOW + kx];
                    let p = a.data[row + kx];
                    let q = b.data[row + kx];
                    mu1 += weight * p;
                    mu2 += weight * q;
                    m11 += weight * p * p;
                    m22 += weight * q * q;
                    m12 += weight * p * q;
                }
            }
            let s1 = m11 - mu1 * mu1;
            let s2 = m22 - mu2 * mu2;
            let s12 = m12 - mu1 * mu2;
            let num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2);
            let den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s1 + s2 + SSIM_C2);
            acc += num / den;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn quantize_level(v: f64) -> usize {
    ((v * 255.0).round()).clamp(0.0, 255.0) as usize
}

/// Co-occurrence matrix: counts at unit offsets for each direction are
/// averaged, then normalized to sum 1. With `symmetric`, each pair also
/// counts in transposed position.
pub fn glcm(
    img: &GrayImage,
    directions: &[(i32, i32)],
    symmetric: bool,
) -> Result<Glcm, ImagingError> {
    if img.width < 2 || img.height < 2 {
        return Err(ImagingError::ImageTooSmall {
            width: img.width,
            height: img.height,
            min: 2,
        });
    }
    if directions.is_empty() {
        return Err(ImagingError::EmptyInput);
    }
    let levels: Vec<usize> = img.data.iter().map(|&v| quantize_level(v)).collect();
    let mut acc = vec![0.0f64; GLCM_LEVELS * GLCM_LEVELS];
    for &(dx, dy) in directions {
        let mut counts = vec![0.0f64; GLCM_LEVELS * GLCM_LEVELS];
        for y in 0..img.height as i32 {
            for x in 0..img.width as i32 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= img.width as i32 || ny >= img.height as i32 {
                    continue;
                }
                let i = levels[y as usize * img.width + x as usize];
                let j = levels[ny as usize * img.width + nx as usize];
                counts[i * GLCM_LEVELS + j] += 1.0;
                if symmetric {
                    counts[j * GLCM_LEVELS + i] += 1.0;
                }
            }
        }
        for (a, c) in acc.iter_mut().zip(&counts) {
            *a += c;
        }
    }
    let dirs = directions.len() as f64;
    for v in &mut acc {
        *v /= dirs;
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for v in &mut acc {
            *v /= total;
        }
    }
    Ok(Glcm {
        matrix: acc,
        normalized: true,
    })
}

/// Texture contrast: `sum |i-j|^2 P(i,j)` over the normalized matrix.
pub fn glcm_contrast(g: &Glcm) -> Result<f64, ImagingError> {
    if !g.normalized || (g.sum() - 1.0).abs() > 1e-9 {
        return Err(ImagingError::NotNormalized);
    }
    let mut acc = 0.0;
    for i in 0..GLCM_LEVELS {
        for j in 0..GLCM_LEVELS {
            let d = i as f64 - j as f64;
            acc += d * d * g.matrix[i * GLCM_LEVELS + j];
        }
    }
    Ok(acc)
}
