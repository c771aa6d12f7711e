//! Deterministic synthetic face pairs for fixtures and demos: a 68-point
//! landmark template, textured base images, and forged counterparts whose
//! artifact is confined to one facial region.

use std::fs;
use std::io;
use std::path::Path;

use crate::imaging::ImageBuffer;
use crate::mask_region::{derive_regions, LandmarkSet, RegionName};
use crate::pipeline::save_png;

/// Face-shaped 68-point template in dlib order, scaled into the frame and
/// shifted by `(dx, dy)` pixels.
pub fn landmark_points(width: usize, height: usize, dx: f64, dy: f64) -> Vec<(f64, f64)> {
    let w = width as f64;
    let h = height as f64;
    let cx = w / 2.0 + dx;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(68);
    // jaw 0-16: lower half ellipse
    for i in 0..17 {
        let t = i as f64 / 16.0 * std::f64::consts::PI;
        pts.push((cx - (w * 0.42) * t.cos(), h * 0.45 + dy + (h * 0.48) * t.sin()));
    }
    // brows 17-21 and 22-26
    for i in 0..5 {
        pts.push((w * (0.16 + 0.06 * i as f64) + dx, h * (0.30 - 0.01 * (i % 2) as f64) + dy));
    }
    for i in 0..5 {
        pts.push((w * (0.60 + 0.06 * i as f64) + dx, h * (0.30 - 0.01 * (i % 2) as f64) + dy));
    }
    // nose bridge 27-30, base 31-35
    for i in 0..4 {
        pts.push((cx, h * (0.36 + 0.05 * i as f64) + dy));
    }
    for i in 0..5 {
        pts.push((cx + w * 0.05 * (i as f64 - 2.0), h * 0.56 + dy));
    }
    // eyes 36-41, 42-47
    let mut eye = |ecx: f64| {
        for i in 0..6 {
            let t = i as f64 / 6.0 * std::f64::consts::TAU;
            pts.push((ecx + w * 0.07 * t.cos(), h * 0.38 + dy + h * 0.03 * t.sin()));
        }
    };
    eye(w * 0.30 + dx);
    eye(w * 0.70 + dx);
    // mouth: outer 48-59, inner 60-67
    for i in 0..12 {
        let t = i as f64 / 12.0 * std::f64::consts::TAU;
        pts.push((cx + w * 0.18 * t.cos(), h * 0.72 + dy + h * 0.09 * t.sin()));
    }
    for i in 0..8 {
        let t = i as f64 / 8.0 * std::f64::consts::TAU;
        pts.push((cx + w * 0.10 * t.cos(), h * 0.72 + dy + h * 0.045 * t.sin()));
    }
    pts
}

pub fn landmarks(width: usize, height: usize, dx: f64, dy: f64) -> LandmarkSet {
    LandmarkSet::new(landmark_points(width, height, dx, dy)).expect("template has 68 points")
}

fn lcg(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 33) % 10_000) as f64 / 9_999.0
}

/// Smooth gradient plus fine per-pixel noise, so every crop carries texture.
pub fn face_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let gx = x as f64 / (width - 1).max(1) as f64;
            let gy = y as f64 / (height - 1).max(1) as f64;
            let base = [
                0.45 + 0.18 * gx,
                0.35 + 0.15 * gy,
                0.30 + 0.10 * (gx + gy) / 2.0,
            ];
            for b in base {
                data.push((b + 0.20 * (lcg(&mut state) - 0.5)).clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::new(width, height, data).expect("generated data is in range")
}

fn box_blur(img: &ImageBuffer, radius: i64) -> ImageBuffer {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = ((x + dx).clamp(0, w - 1), (y + dy).clamp(0, h - 1));
                    let p = img.pixel(nx as usize, ny as usize);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
            }
            for c in 0..3 {
                data.push(acc[c] / n);
            }
        }
    }
    ImageBuffer::new(img.width(), img.height(), data).expect("blur stays in range")
}

pub struct SyntheticPair {
    pub real: ImageBuffer,
    pub fake: ImageBuffer,
    pub landmarks: LandmarkSet,
    pub modified_region: RegionName,
}

/// Real image plus a fake that is color-shifted and blurred inside one organ
/// hull (mouth, nose, or eyes, rotating with `index`).
pub fn forged_pair(width: usize, height: usize, index: u64) -> SyntheticPair {
    let real = face_image(width, height, index + 1);
    let shift = ((index % 3) as f64 - 1.0) * 1.5;
    let marks = landmarks(width, height, shift, 0.0);
    let regions = derive_regions(&marks, width, height).expect("template regions are valid");
    let organ = match index % 3 {
        0 => RegionName::Mouth,
        1 => RegionName::Nose,
        _ => RegionName::Eyes,
    };
    let region = regions
        .iter()
        .find(|r| r.name == organ)
        .expect("organ is one of the derived regions");

    let blurred = box_blur(&real, 2);
    let mut fake = real.clone();
    let color_shift = [0.25, -0.15, 0.20];
    for y in 0..height {
        for x in 0..width {
            // a faint global ripple keeps the fake off the real everywhere
            // (well under the region threshold) so gradient-domain blending
            // has a boundary mismatch to reconcile
            let ripple = 0.012 * ((x as f64 * 7.0 + y as f64 * 3.0) / 10.0).sin();
            if region.contains(x, y) {
                let p = blurred.pixel(x, y);
                fake.set_pixel(
                    x,
                    y,
                    [
                        p[0] + color_shift[0] + ripple,
                        p[1] + color_shift[1] + ripple,
                        p[2] + color_shift[2] + ripple,
                    ],
                );
            } else {
                let p = real.pixel(x, y);
                fake.set_pixel(x, y, [p[0] + ripple, p[1] + ripple, p[2] + ripple]);
            }
        }
    }
    SyntheticPair {
        real,
        fake,
        landmarks: marks,
        modified_region: organ,
    }
}

pub fn landmarks_json(marks: &LandmarkSet) -> String {
    let points: Vec<[f64; 2]> = marks.points().iter().map(|&(x, y)| [x, y]).collect();
    serde_json::json!({ "points": points }).to_string()
}

/// Writes a `real/`, `fake/`, `landmarks/` tree under `root`. Stems are
/// `pair00`, `pair01`, ... With `edge_cases`, two extra stems are appended:
/// an identical pair (no forged region) and a malformed landmark file.
/// Returns the number of stems written.
pub fn write_fixture_tree(
    root: &Path,
    normal_pairs: usize,
    edge_cases: bool,
) -> io::Result<usize> {
    let real_dir = root.join("real");
    let fake_dir = root.join("fake");
    let lm_dir = root.join("landmarks");
    fs::create_dir_all(&real_dir)?;
    fs::create_dir_all(&fake_dir)?;
    fs::create_dir_all(&lm_dir)?;

    let err = |e: crate::pipeline::PipelineError| io::Error::other(e.to_string());
    let mut total = 0usize;
    for i in 0..normal_pairs {
        let stem = format!("pair{i:02}");
        let pair = forged_pair(64, 64, i as u64);
        save_png(&real_dir.join(format!("{stem}.png")), &pair.real).map_err(err)?;
        save_png(&fake_dir.join(format!("{stem}.png")), &pair.fake).map_err(err)?;
        fs::write(lm_dir.join(format!("{stem}.json")), landmarks_json(&pair.landmarks))?;
        total += 1;
    }
    if edge_cases {
        // identical pair: zero mask, skipped as no-region
        let stem = format!("pair{:02}", normal_pairs);
        let img = face_image(64, 64, 1234);
        save_png(&real_dir.join(format!("{stem}.png")), &img).map_err(err)?;
        save_png(&fake_dir.join(format!("{stem}.png")), &img).map_err(err)?;
        fs::write(
            lm_dir.join(format!("{stem}.json")),
            landmarks_json(&landmarks(64, 64, 0.0, 0.0)),
        )?;
        total += 1;

        // malformed landmark file
        let stem = format!("pair{:02}", normal_pairs + 1);
        let pair = forged_pair(64, 64, 7777);
        save_png(&real_dir.join(format!("{stem}.png")), &pair.real).map_err(err)?;
        save_png(&fake_dir.join(format!("{stem}.png")), &pair.fake).map_err(err)?;
        fs::write(lm_dir.join(format!("{stem}.json")), "{\"points\": [[1, 2]]}")?;
        total += 1;
    }
    Ok(total)
}
