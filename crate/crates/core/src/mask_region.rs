//! Forgery mask from a real/fake pair, landmark-derived facial regions, and
//! region extraction against a mask-mean threshold.

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::imaging::ImageBuffer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("expected 68 landmark points, got {0}")]
    BadLandmarkCount(usize),
    #[error("landmark {index} at ({x}, {y}) is outside {width}x{height} by more than {slack} px")]
    LandmarkOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
        slack: f64,
    },
    #[error("degenerate hull for region {0}")]
    DegenerateHull(&'static str),
    #[error("region {0} has no member pixels")]
    EmptyRegion(&'static str),
    #[error("threshold {0} outside (0, 1)")]
    ThetaOutOfRange(f64),
}

/// Per-pixel forgery evidence, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgeryMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ForgeryMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, MaskError> {
        if values.len() != width * height {
            return Err(MaskError::DimensionMismatch(width, height, values.len(), 1));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// dlib 68-point landmark layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct LandmarkFile {
    points: Vec<[f64; 2]>,
}

pub const LANDMARK_COUNT: usize = 68;

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MaskError> {
        if points.len() != LANDMARK_COUNT {
            return Err(MaskError::BadLandmarkCount(points.len()));
        }
        Ok(Self { points })
    }

    /// Parses the landmark JSON document: `{"points": [[x, y], ...]}` with
    /// exactly 68 entries in dlib order.
    pub fn from_json(text: &str) -> Result<Self, MaskError> {
        let file: LandmarkFile =
            serde_json::from_str(text).map_err(|_| MaskError::BadLandmarkCount(0))?;
        let points = file.points.iter().map(|p| (p[0], p[1])).collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// All coordinates must lie within the image bounds, give or take `slack`.
    pub fn check_bounds(&self, width: usize, height: usize, slack: f64) -> Result<(), MaskError> {
        for (index, &(x, y)) in self.points.iter().enumerate() {
            if x < -slack
                || y < -slack
                || x > width as f64 - 1.0 + slack
                || y > height as f64 - 1.0 + slack
                || !x.is_finite()
                || !y.is_finite()
            {
                return Err(MaskError::LandmarkOutOfBounds {
                    index,
                    x,
                    y,
                    width,
                    height,
                    slack,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionName {
    Mouth,
    Nose,
    Eyes,
    Face,
}

impl RegionName {
    pub const ALL: [RegionName; 4] = [
        RegionName::Mouth,
        RegionName::Nose,
        RegionName::Eyes,
        RegionName::Face,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionName::Mouth => "mouth",
            RegionName::Nose => "nose",
            RegionName::Eyes => "eyes",
            RegionName::Face => "face",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "mouth" => Some(RegionName::Mouth),
            "nose" => Some(RegionName::Nose),
            "eyes" => Some(RegionName::Eyes),
            "face" => Some(RegionName::Face),
            _ => None,
        }
    }

    /// dlib landmark indices spanned by this region.
    fn landmark_range(self) -> std::ops::RangeInclusive<usize> {
        match self {
            RegionName::Mouth => 48..=67,
            RegionName::Nose => 27..=35,
            RegionName::Eyes => 17..=47,
            RegionName::Face => 0..=67,
        }
    }
}

/// Rasterized facial region: a boolean membership mask over the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub name: RegionName,
    width: usize,
    height: usize,
    membership: Vec<bool>,
    pixel_count: usize,
}

impl RegionSpec {
    pub fn from_membership(
        name: RegionName,
        width: usize,
        height: usize,
        membership: Vec<bool>,
    ) -> Result<Self, MaskError> {
        if membership.len() != width * height {
            return Err(MaskError::DimensionMismatch(width, height, membership.len(), 1));
        }
        let pixel_count = membership.iter().filter(|&&m| m).count();
        if pixel_count == 0 {
            return Err(MaskError::EmptyRegion(name.as_str()));
        }
        Ok(Self {
            name,
            width,
            height,
            membership,
            pixel_count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.membership[y * self.width + x]
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    /// Tight bounding box `(x0, y0, w, h)` of the member pixels.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        let (mut x0, mut y0, mut x1, mut y1) = (self.width, self.height, 0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.contains(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    /// Membership restricted to the image interior (one-pixel margin).
    /// Returns None when nothing remains.
    pub fn clipped_to_interior(&self) -> Option<Self> {
        let mut membership = vec![false; self.width * self.height];
        let mut pixel_count = 0;
        if self.width > 2 && self.height > 2 {
            for y in 1..self.height - 1 {
                for x in 1..self.width - 1 {
                    if self.contains(x, y) {
                        membership[y * self.width + x] = true;
                        pixel_count += 1;
                    }
                }
            }
        }
        if pixel_count == 0 {
            return None;
        }
        Some(Self {
            name: self.name,
            width: self.width,
            height: self.height,
            membership,
            pixel_count,
        })
    }

    pub fn touches_border(&self) -> bool {
        for x in 0..self.width {
            if self.contains(x, 0) || self.contains(x, self.height - 1) {
                return true;
            }
        }
        for y in 0..self.height {
            if self.contains(0, y) || self.contains(self.width - 1, y) {
                return true;
            }
        }
        false
    }
}

/// Per-pixel mean over the RGB channels of `|real - fake|`.
pub fn generate_mask(real: &ImageBuffer, fake: &ImageBuffer) -> Result<ForgeryMask, MaskError> {
    if !real.same_dims(fake) {
        return Err(MaskError::DimensionMismatch(
            real.width(),
            real.height(),
            fake.width(),
            fake.height(),
        ));
    }
    let values = real
        .data()
        .chunks_exact(3)
        .zip(fake.data().chunks_exact(3))
        .map(|(r, f)| {
            ((r[0] - f[0]).abs() + (r[1] - f[1]).abs() + (r[2] - f[2]).abs()) / 3.0
        })
        .collect();
    ForgeryMask::new(real.width(), real.height(), values)
}

const HULL_EPS: f64 = 1e-9;

/// Andrew's monotone chain; returns the hull in counter-clockwise order
/// (y axis pointing down, so "counter-clockwise" in image coordinates).
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(hull: &[(f64, f64)]) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}

/// Inclusive point-in-convex-polygon test for a CCW hull.
fn hull_contains(hull: &[(f64, f64)], px: f64, py: f64) -> bool {
    for i in 0..hull.len() {
        let (x0, y0) = hull[i];
        let (x1, y1) = hull[(i + 1) % hull.len()];
        let cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
        if cross < -HULL_EPS {
            return false;
        }
    }
    true
}

fn rasterize_hull(
    name: RegionName,
    hull: &[(f64, f64)],
    width: usize,
    height: usize,
) -> Result<RegionSpec, MaskError> {
    let min_x = hull.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = hull.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let x_lo = min_x.floor().max(0.0) as usize;
    let x_hi = (max_x.ceil() as i64).min(width as i64 - 1).max(0) as usize;
    let y_lo = min_y.floor().max(0.0) as usize;
    let y_hi = (max_y.ceil() as i64).min(height as i64 - 1).max(0) as usize;

    let mut membership = vec![false; width * height];
    if min_x <= width as f64 && min_y <= height as f64 {
        for y in y_lo..=y_hi.min(height - 1) {
            for x in x_lo..=x_hi.min(width - 1) {
                if hull_contains(hull, x as f64, y as f64) {
                    membership[y * width + x] = true;
                }
            }
        }
    }
    RegionSpec::from_membership(name, width, height, membership)
        .map_err(|_| MaskError::DegenerateHull(name.as_str()))
}

/// Derives the four facial regions (mouth, nose, eyes, face) as filled convex
/// hulls of their landmark index ranges, rasterized over a `width` x `height`
/// grid.
pub fn derive_regions(
    landmarks: &LandmarkSet,
    width: usize,
    height: usize,
) -> Result<[RegionSpec; 4], MaskError> {
    let mut out = Vec::with_capacity(4);
    for name in RegionName::ALL {
        let range = name.landmark_range();
        let pts = &landmarks.points()[*range.start()..=*range.end()];
        let hull = convex_hull(pts);
        if hull.len() < 3 || polygon_area(&hull) < 1e-12 {
            return Err(MaskError::DegenerateHull(name.as_str()));
        }
        out.push(rasterize_hull(name, &hull, width, height)?);
    }
    Ok(out.try_into().expect("four regions"))
}

/// Mean mask value over the region's member pixels.
pub fn region_mean(mask: &ForgeryMask, region: &RegionSpec) -> Result<f64, MaskError> {
    if mask.width != region.width || mask.height != region.height {
        return Err(MaskError::DimensionMismatch(
            mask.width,
            mask.height,
            region.width,
            region.height,
        ));
    }
    if region.pixel_count == 0 {
        return Err(MaskError::EmptyRegion(region.name.as_str()));
    }
    let mut acc = 0.0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if region.contains(x, y) {
                acc += mask.get(x, y);
            }
        }
    }
    Ok(acc / region.pixel_count as f64)
}

/// Regions whose mean mask value exceeds `theta`, in fixed
/// mouth/nose/eyes/face order.
pub fn extract_forgery_regions(
    mask: &ForgeryMask,
    regions: &[RegionSpec; 4],
    theta: f64,
) -> Result<Vec<RegionName>, MaskError> {
    if theta <= 0.0 || theta >= 1.0 {
        return Err(MaskError::ThetaOutOfRange(theta));
    }
    let mut out = Vec::new();
    for region in regions {
        if region_mean(mask, region)? > theta {
            out.push(region.name);
        }
    }
    Ok(out)
}

/// Uniform choice among the candidates; None when the list is empty.
pub fn select_region<R: Rng>(candidates: &[RegionName], rng: &mut R) -> Option<RegionName> {
    if candidates.is_empty() {
        return None;
    }
    Some(candidates[rng.random_range(0..candidates.len())])
}
