//! Dataset ingestion, per-pair orchestration, manifest and report output.
//!
//! A run scans three roots (real images, fake images, landmark JSON) paired
//! by filename stem, processes every triple deterministically under a
//! per-sample seed, writes mixed PNGs, and emits a JSONL manifest plus a run
//! report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::{synthesize, BlendConfig, BlendError, BlendRecord};
use crate::forgery_typing::{decide_types, TypeReport, TypeThresholds};
use crate::imaging::ImageBuffer;
use crate::mask_region::{
    derive_regions, extract_forgery_regions, generate_mask, region_mean, select_region,
    LandmarkSet, RegionName,
};
use crate::prompting::{fine_prompt, parse_prompt, PromptKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing directory {0}")]
    MissingDirectory(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {0}: {1}")]
    Manifest(usize, String),
    #[error("missing image for id {0}")]
    MissingImage(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub real_dir: PathBuf,
    pub fake_dir: PathBuf,
    pub landmarks_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub images_dir: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    /// Mask-mean threshold for region extraction.
    pub theta: f64,
    /// Landmark coordinates may exceed the image bounds by this many pixels.
    pub landmark_slack: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            theta: 0.05,
            landmark_slack: 8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub types: TypeThresholds,
    #[serde(default)]
    pub blend: BlendConfig,
    #[serde(default)]
    pub c2f: crate::losses::C2FConfig,
}

fn default_workers() -> usize {
    1
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let dirs = [
            &self.input.real_dir,
            &self.input.fake_dir,
            &self.input.landmarks_dir,
        ];
        for (i, a) in dirs.iter().enumerate() {
            for b in dirs.iter().skip(i + 1) {
                if a == b {
                    return Err(PipelineError::Config(format!(
                        "input roots must be distinct, {} repeats",
                        a.display()
                    )));
                }
            }
        }
        if dirs.iter().any(|d| **d == self.output.images_dir) {
            return Err(PipelineError::Config(
                "images_dir must differ from the input roots".into(),
            ));
        }
        if !(self.region.theta > 0.0 && self.region.theta < 1.0) {
            return Err(PipelineError::Config(format!(
                "region.theta {} outside (0, 1)",
                self.region.theta
            )));
        }
        if self.region.landmark_slack < 0.0 {
            return Err(PipelineError::Config("landmark_slack must be >= 0".into()));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        self.types.validate().map_err(PipelineError::Config)?;
        self.blend.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.c2f.validate().map_err(PipelineError::Config)?;
        Ok(())
    }
}

/// Why a scanned pair produced no sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkipReason {
    Unmatched,
    UnreadableImage,
    BadLandmarks,
    NoRegion,
    NoType,
    SolverDiverged,
    RegionTouchesBorder,
    ProcessingError,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::Unmatched => "unmatched",
            SkipReason::UnreadableImage => "unreadable-image",
            SkipReason::BadLandmarks => "bad-landmarks",
            SkipReason::NoRegion => "no-region",
            SkipReason::NoType => "no-type",
            SkipReason::SolverDiverged => "solver-diverged",
            SkipReason::RegionTouchesBorder => "region-touches-border",
            SkipReason::ProcessingError => "processing-error",
        }
    }
}

/// Paths of one matched (real, fake, landmarks) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub stem: String,
    pub real: PathBuf,
    pub fake: PathBuf,
    pub landmarks: PathBuf,
}

/// Mean mask values over each of the four regions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionMeans {
    pub mouth: f64,
    pub nose: f64,
    pub eyes: f64,
    pub face: f64,
}

/// One manifest record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixedSample {
    pub real_path: String,
    pub fake_path: String,
    pub mixed_path: String,
    pub region: String,
    pub method: BlendRecord,
    pub verdicts: TypeReport,
    pub selected_type: String,
    pub prompt: String,
    pub region_means: RegionMeans,
    pub seed: u64,
}

/// Run accounting; `pairs_scanned = samples_emitted + sum(skips)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub pairs_scanned: usize,
    pub samples_emitted: usize,
    pub skips: BTreeMap<String, usize>,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn total_skips(&self) -> usize {
        self.skips.values().sum()
    }
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn scan_dir(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    names.sort();
    for path in names {
        if !path.is_file() {
            continue;
        }
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            // first extension in sort order wins on duplicate stems
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

/// Scans the three roots and pairs files by stem. Returns the matched
/// triples in lexicographic stem order plus the unmatched stems.
pub fn ingest(
    cfg: &PipelineConfig,
) -> Result<(Vec<PairSpec>, Vec<(String, SkipReason)>), PipelineError> {
    let real = scan_dir(&cfg.input.real_dir, &IMAGE_EXTS)?;
    let fake = scan_dir(&cfg.input.fake_dir, &IMAGE_EXTS)?;
    let landmarks = scan_dir(&cfg.input.landmarks_dir, &["json"])?;

    let mut stems: Vec<String> = real
        .keys()
        .chain(fake.keys())
        .chain(landmarks.keys())
        .cloned()
        .collect();
    stems.sort();
    stems.dedup();

    let mut triples = Vec::new();
    let mut skipped = Vec::new();
    for stem in stems {
        match (real.get(&stem), fake.get(&stem), landmarks.get(&stem)) {
            (Some(r), Some(f), Some(l)) => triples.push(PairSpec {
                stem,
                real: r.clone(),
                fake: f.clone(),
                landmarks: l.clone(),
            }),
            _ => skipped.push((stem, SkipReason::Unmatched)),
        }
    }
    Ok((triples, skipped))
}

/// FNV-1a over the global seed and the pair stem; stable across platforms.
pub fn sample_seed(global_seed: u64, stem: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in global_seed.to_le_bytes().iter().chain(b"/").chain(stem.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

pub fn load_image(path: &Path) -> Result<ImageBuffer, PipelineError> {
    let img = image::open(path)
        .map_err(|e| PipelineError::Manifest(0, format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::from_rgb8(w as usize, h as usize, img.as_raw())
        .map_err(|e| PipelineError::Manifest(0, e.to_string()))
}

pub fn save_png(path: &Path, img: &ImageBuffer) -> Result<(), PipelineError> {
    let raw = img.to_rgb8();
    let rgb = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Io(std::io::Error::other(e.to_string())))
}

/// Runs the full chain on one triple: mask, region extraction and selection,
/// blend-method draw, synthesis, type decision, prompt rendering, image
/// write. Returns the manifest record or the reason the pair was skipped.
pub fn process_pair(spec: &PairSpec, cfg: &PipelineConfig) -> Result<MixedSample, SkipReason> {
    let real = load_image(&spec.real).map_err(|_| SkipReason::UnreadableImage)?;
    let fake = load_image(&spec.fake).map_err(|_| SkipReason::UnreadableImage)?;
    if !real.same_dims(&fake) {
        return Err(SkipReason::ProcessingError);
    }

    let landmarks_text =
        fs::read_to_string(&spec.landmarks).map_err(|_| SkipReason::BadLandmarks)?;
    let landmarks = LandmarkSet::from_json(&landmarks_text).map_err(|_| SkipReason::BadLandmarks)?;
    landmarks
        .check_bounds(real.width(), real.height(), cfg.region.landmark_slack)
        .map_err(|_| SkipReason::BadLandmarks)?;

    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, &spec.stem));

    let mask = generate_mask(&real, &fake).map_err(|_| SkipReason::ProcessingError)?;
    let regions =
        derive_regions(&landmarks, real.width(), real.height()).map_err(|_| SkipReason::BadLandmarks)?;
    let means = RegionMeans {
        mouth: region_mean(&mask, &regions[0]).map_err(|_| SkipReason::ProcessingError)?,
        nose: region_mean(&mask, &regions[1]).map_err(|_| SkipReason::ProcessingError)?,
        eyes: region_mean(&mask, &regions[2]).map_err(|_| SkipReason::ProcessingError)?,
        face: region_mean(&mask, &regions[3]).map_err(|_| SkipReason::ProcessingError)?,
    };
    let candidates = extract_forgery_regions(&mask, &regions, cfg.region.theta)
        .map_err(|_| SkipReason::ProcessingError)?;
    let selected_name = match select_region(&candidates, &mut rng) {
        Some(name) => name,
        None => return Err(SkipReason::NoRegion),
    };
    let region = regions
        .iter()
        .find(|r| r.name == selected_name)
        .expect("selected name comes from the derived regions");

    let synthesis = synthesize(&real, &fake, region, &cfg.blend, &mut rng).map_err(|e| match e {
        BlendError::RegionTouchesBorder => SkipReason::RegionTouchesBorder,
        BlendError::SolverDiverged { .. } => SkipReason::SolverDiverged,
        _ => SkipReason::ProcessingError,
    })?;

    let (bx, by, bw, bh) = region.bounding_box();
    let real_crop = real.crop(bx, by, bw, bh).map_err(|_| SkipReason::ProcessingError)?;
    let fake_crop = fake.crop(bx, by, bw, bh).map_err(|_| SkipReason::ProcessingError)?;
    let (verdicts, selected_type) =
        decide_types(&real_crop, &fake_crop, &synthesis.method, &cfg.types, &mut rng)
            .map_err(|_| SkipReason::ProcessingError)?;
    let selected_type = match selected_type {
        Some(t) => t,
        None => return Err(SkipReason::NoType),
    };

    let mixed_path = cfg.output.images_dir.join(format!("{}.png", spec.stem));
    save_png(&mixed_path, &synthesis.image).map_err(|_| SkipReason::ProcessingError)?;

    let prompt = fine_prompt(selected_name, selected_type);
    Ok(MixedSample {
        real_path: spec.real.display().to_string(),
        fake_path: spec.fake.display().to_string(),
        mixed_path: mixed_path.display().to_string(),
        region: selected_name.as_str().to_string(),
        method: synthesis.record,
        verdicts,
        selected_type: selected_type.as_phrase().to_string(),
        prompt: prompt.text,
        region_means: means,
        seed: sample_seed(cfg.seed, &spec.stem),
    })
}

/// Processes every matched triple (in parallel when configured), writing the
/// manifest in ingestion order regardless of worker scheduling.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&cfg.output.images_dir)?;
    if let Some(parent) = cfg.output.manifest_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }

    let (pairs, pre_skips) = ingest(cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<Result<MixedSample, SkipReason>> =
        pool.install(|| pairs.par_iter().map(|p| process_pair(p, cfg)).collect());

    let mut manifest = BufWriter::new(fs::File::create(&cfg.output.manifest_path)?);
    let mut skips: BTreeMap<String, usize> = BTreeMap::new();
    let mut emitted = 0usize;
    for (_, reason) in &pre_skips {
        *skips.entry(reason.as_str().to_string()).or_insert(0) += 1;
    }
    for result in &results {
        match result {
            Ok(sample) => {
                let line = serde_json::to_string(sample)
                    .map_err(|e| PipelineError::Manifest(0, e.to_string()))?;
                writeln!(manifest, "{line}")?;
                emitted += 1;
            }
            Err(reason) => {
                *skips.entry(reason.as_str().to_string()).or_insert(0) += 1;
            }
        }
    }
    manifest.flush()?;

    let report = RunReport {
        pairs_scanned: pairs.len() + pre_skips.len(),
        samples_emitted: emitted,
        skips,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let report_path = report_path_for(&cfg.output.manifest_path);
    fs::write(&report_path, serde_json::to_string_pretty(&report)? )?;
    Ok(report)
}

pub fn report_path_for(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("report.json")
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Manifest(0, e.to_string())
    }
}

/// A manifest-record invariant violation.
#[derive(Debug, Clone, PartialEq)]
pub struct LintIssue {
    pub line: usize,
    pub message: String,
}

/// Validates every manifest record: the prompt must round-trip to the
/// recorded region and type, blend boundary must coincide exactly with alpha
/// blending, and region means must be in range.
pub fn lint_manifest<R: BufRead>(reader: R) -> Result<Vec<LintIssue>, PipelineError> {
    let mut issues = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MixedSample = match serde_json::from_str(&line) {
            Ok(s) => s,
            Err(e) => {
                issues.push(LintIssue {
                    line: lineno,
                    message: format!("unparseable record: {e}"),
                });
                continue;
            }
        };
        let region = RegionName::from_str(&sample.region);
        if region.is_none() {
            issues.push(LintIssue {
                line: lineno,
                message: format!("unknown region {:?}", sample.region),
            });
        }
        match parse_prompt(&sample.prompt) {
            Some(PromptKind::Fine(r, t)) => {
                if Some(r) != region || t.as_phrase() != sample.selected_type {
                    issues.push(LintIssue {
                        line: lineno,
                        message: "prompt does not match region/type fields".into(),
                    });
                }
            }
            _ => issues.push(LintIssue {
                line: lineno,
                message: format!("prompt off template: {:?}", sample.prompt),
            }),
        }
        let is_alpha = matches!(sample.method, BlendRecord::Alpha { .. });
        let is_boundary = sample.selected_type == "blend boundary";
        if is_alpha != is_boundary {
            issues.push(LintIssue {
                line: lineno,
                message: "blend boundary label must coincide with alpha blending".into(),
            });
        }
        for (name, v) in [
            ("mouth", sample.region_means.mouth),
            ("nose", sample.region_means.nose),
            ("eyes", sample.region_means.eyes),
            ("face", sample.region_means.face),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                issues.push(LintIssue {
                    line: lineno,
                    message: format!("region mean {name} = {v} out of range"),
                });
            }
        }
    }
    Ok(issues)
}

/// Reads a manifest back into records.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<MixedSample>, PipelineError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MixedSample = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Manifest(idx + 1, e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}
