//! Inspection montages: real | fake | mask | mixed panels per sample with
//! the prompt rendered as a text strip underneath.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use crate::imaging::ImageBuffer;
use crate::mask_region::generate_mask;
use crate::pipeline::{load_image, read_manifest, save_png, MixedSample, PipelineError};

const STRIP_HEIGHT: usize = 11;
const GLYPH_W: usize = 6;

/// 5x7 bitmap glyphs for the prompt alphabet (lowercase, space, comma).
fn glyph(c: char) -> [u8; 7] {
    match c {
        'a' => [0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111],
        'b' => [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b11110],
        'c' => [0b00000, 0b00000, 0b01110, 0b10000, 0b10000, 0b10001, 0b01110],
        'd' => [0b00001, 0b00001, 0b01101, 0b10011, 0b10001, 0b10001, 0b01111],
        'e' => [0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110],
        'f' => [0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000],
        'g' => [0b00000, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110],
        'h' => [0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001],
        'i' => [0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110],
        'j' => [0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100],
        'k' => [0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010],
        'l' => [0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'm' => [0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101],
        'n' => [0b00000, 0b00000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001],
        'o' => [0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110],
        'p' => [0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000],
        'q' => [0b00000, 0b00000, 0b01101, 0b10011, 0b01111, 0b00001, 0b00001],
        'r' => [0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000],
        's' => [0b00000, 0b00000, 0b01110, 0b10000, 0b01110, 0b00001, 0b11110],
        't' => [0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110],
        'u' => [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101],
        'v' => [0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'w' => [0b00000, 0b00000, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'x' => [0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001],
        'y' => [0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110],
        'z' => [0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111],
        ',' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00110, 0b00100, 0b01000],
        _ => [0; 7],
    }
}

struct Canvas {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    fn blit(&mut self, img: &ImageBuffer, x0: usize, y0: usize) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                if x0 + x < self.width && y0 + y < self.height {
                    let p = img.pixel(x, y);
                    let i = ((y0 + y) * self.width + x0 + x) * 3;
                    self.data[i] = p[0];
                    self.data[i + 1] = p[1];
                    self.data[i + 2] = p[2];
                }
            }
        }
    }

    fn draw_text(&mut self, text: &str, x0: usize, y0: usize) {
        for (k, c) in text.chars().enumerate() {
            let rows = glyph(c);
            let cx = x0 + k * GLYPH_W;
            if cx + 5 > self.width {
                break;
            }
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (1 << (4 - rx)) != 0 {
                        let i = ((y0 + ry) * self.width + cx + rx) * 3;
                        if y0 + ry < self.height {
                            self.data[i] = 1.0;
                            self.data[i + 1] = 1.0;
                            self.data[i + 2] = 1.0;
                        }
                    }
                }
            }
        }
    }

    fn into_image(self) -> ImageBuffer {
        ImageBuffer::new(self.width, self.height, self.data).expect("canvas is a valid image")
    }
}

fn mask_panel(real: &ImageBuffer, fake: &ImageBuffer) -> Result<ImageBuffer, PipelineError> {
    let mask = generate_mask(real, fake).map_err(|e| PipelineError::Manifest(0, e.to_string()))?;
    let mut data = Vec::with_capacity(mask.width() * mask.height() * 3);
    for v in mask.values() {
        data.extend_from_slice(&[*v, *v, *v]);
    }
    Ok(ImageBuffer::new(mask.width(), mask.height(), data)
        .expect("mask dimensions are valid"))
}

fn stem_of(path: &str) -> Option<String> {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.to_string())
}

/// Renders `real | fake | mask | mixed` rows for the requested sample ids
/// (manifest stems) and writes a PNG montage.
pub fn preview(manifest_path: &Path, ids: &[String], out_path: &Path) -> Result<(), PipelineError> {
    let file = fs::File::open(manifest_path)?;
    let samples = read_manifest(BufReader::new(file))?;

    let mut selected: Vec<&MixedSample> = Vec::new();
    for id in ids {
        let found = samples
            .iter()
            .find(|s| stem_of(&s.mixed_path).as_deref() == Some(id.as_str()));
        match found {
            Some(s) => selected.push(s),
            None => return Err(PipelineError::MissingImage(id.clone())),
        }
    }
    if selected.is_empty() {
        return Err(PipelineError::MissingImage("<empty id list>".into()));
    }

    let mut rows = Vec::new();
    let mut panel_w = 0usize;
    let mut total_h = 0usize;
    for sample in &selected {
        let real = load_image(Path::new(&sample.real_path))
            .map_err(|_| PipelineError::MissingImage(sample.real_path.clone()))?;
        let fake = load_image(Path::new(&sample.fake_path))
            .map_err(|_| PipelineError::MissingImage(sample.fake_path.clone()))?;
        let mixed = load_image(Path::new(&sample.mixed_path))
            .map_err(|_| PipelineError::MissingImage(sample.mixed_path.clone()))?;
        let mask = mask_panel(&real, &fake)?;
        panel_w = panel_w.max(real.width());
        total_h += real.height() + STRIP_HEIGHT;
        rows.push((real, fake, mask, mixed, sample.prompt.clone()));
    }

    let mut canvas = Canvas::new(panel_w * 4, total_h);
    let mut y = 0usize;
    for (real, fake, mask, mixed, prompt) in rows {
        let h = real.height();
        canvas.blit(&real, 0, y);
        canvas.blit(&fake, panel_w, y);
        canvas.blit(&mask, panel_w * 2, y);
        canvas.blit(&mixed, panel_w * 3, y);
        canvas.draw_text(&prompt, 2, y + h + 2);
        y += h + STRIP_HEIGHT;
    }
    save_png(out_path, &canvas.into_image())
}
