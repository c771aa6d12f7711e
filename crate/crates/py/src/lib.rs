//! Python bindings: images, masks, regions, blending, forgery typing,
//! prompts, contrastive losses, the prompt matcher, and the full pipeline
//! runner.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use forgemix_core::blending as blend;
use forgemix_core::forgery_typing as typing;
use forgemix_core::imaging;
use forgemix_core::losses;
use forgemix_core::mask_region as regions;
use forgemix_core::pipeline;
use forgemix_core::prompting;
use forgemix_core::synthetic;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// RGB image with values in [0, 1], interleaved row-major data.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: imaging::ImageBuffer,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: imaging::ImageBuffer::new(width, height, data).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, rgb: [f64; 3]) -> PyResult<Self> {
        Ok(Self {
            inner: imaging::ImageBuffer::filled(width, height, rgb).map_err(value_err)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.inner.pixel(x, y)
    }

    /// BT.601 luma values, row-major.
    fn grayscale(&self) -> Vec<f64> {
        imaging::to_grayscale(&self.inner).data().to_vec()
    }

    /// CIE L*a*b* planes as (L, a, b) lists.
    fn to_lab(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let lab = imaging::rgb_to_lab(&self.inner);
        (lab.l, lab.a, lab.b)
    }

    fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.crop(x0, y0, w, h).map_err(value_err)?,
        })
    }
}

fn gray_from(width: usize, height: usize, data: Vec<f64>) -> PyResult<imaging::GrayImage> {
    imaging::GrayImage::new(width, height, data).map_err(value_err)
}

fn region_from(membership: Vec<bool>, width: usize, height: usize) -> PyResult<regions::RegionSpec> {
    regions::RegionSpec::from_membership(regions::RegionName::Face, width, height, membership)
        .map_err(value_err)
}

/// Mean local SSIM between two gray images (11x11 Gaussian window).
#[pyfunction]
fn ssim(width: usize, height: usize, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    let a = gray_from(width, height, a)?;
    let b = gray_from(width, height, b)?;
    imaging::ssim(&a, &b).map_err(value_err)
}

/// GLCM contrast over the four orthogonal unit directions.
#[pyfunction]
fn glcm_contrast(width: usize, height: usize, gray: Vec<f64>) -> PyResult<f64> {
    let img = gray_from(width, height, gray)?;
    let g = imaging::glcm(&img, &imaging::GLCM_DIRECTIONS, false).map_err(value_err)?;
    imaging::glcm_contrast(&g).map_err(value_err)
}

/// Population variance of the Laplacian response on 0-255 scaled intensities.
#[pyfunction]
fn laplacian_variance(width: usize, height: usize, gray: Vec<f64>) -> PyResult<f64> {
    let img = gray_from(width, height, gray.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    let response = imaging::laplacian_response(&img).map_err(value_err)?;
    let scaled: Vec<f64> = response.iter().map(|v| v * 255.0).collect();
    imaging::variance(&scaled).map_err(value_err)
}

/// Per-pixel mean absolute RGB difference, the forgery evidence mask.
#[pyfunction]
fn generate_mask(real: &PyImage, fake: &PyImage) -> PyResult<Vec<f64>> {
    let mask = regions::generate_mask(&real.inner, &fake.inner).map_err(value_err)?;
    Ok(mask.values().to_vec())
}

/// Rasterized facial region memberships keyed by region name.
#[pyfunction]
fn derive_region_masks(
    points: Vec<(f64, f64)>,
    width: usize,
    height: usize,
) -> PyResult<std::collections::HashMap<String, Vec<bool>>> {
    let marks = regions::LandmarkSet::new(points).map_err(value_err)?;
    let derived = regions::derive_regions(&marks, width, height).map_err(value_err)?;
    Ok(derived
        .into_iter()
        .map(|r| (r.name.as_str().to_string(), r.membership().to_vec()))
        .collect())
}

/// Region names whose mean mask value exceeds theta, in fixed order.
#[pyfunction]
fn extract_forgery_regions(
    mask: Vec<f64>,
    width: usize,
    height: usize,
    points: Vec<(f64, f64)>,
    theta: f64,
) -> PyResult<Vec<String>> {
    let mask = regions::ForgeryMask::new(width, height, mask).map_err(value_err)?;
    let marks = regions::LandmarkSet::new(points).map_err(value_err)?;
    let derived = regions::derive_regions(&marks, width, height).map_err(value_err)?;
    let names = regions::extract_forgery_regions(&mask, &derived, theta).map_err(value_err)?;
    Ok(names.iter().map(|n| n.as_str().to_string()).collect())
}

/// Convex alpha mix of the fake region into the real image.
#[pyfunction]
fn alpha_blend(
    real: &PyImage,
    fake: &PyImage,
    membership: Vec<bool>,
    alpha: f64,
) -> PyResult<PyImage> {
    let region = region_from(membership, real.inner.width(), real.inner.height())?;
    Ok(PyImage {
        inner: blend::alpha_blend(&real.inner, &fake.inner, &region, alpha).map_err(value_err)?,
    })
}

/// Gradient-domain composite of the fake region into the real image.
#[pyfunction]
#[pyo3(signature = (real, fake, membership, tolerance=1e-6, max_iters=10000))]
fn poisson_blend(
    real: &PyImage,
    fake: &PyImage,
    membership: Vec<bool>,
    tolerance: f64,
    max_iters: usize,
) -> PyResult<PyImage> {
    let region = region_from(membership, real.inner.width(), real.inner.height())?;
    let out = blend::poisson_blend(&real.inner, &fake.inner, &region, tolerance, max_iters)
        .map_err(value_err)?;
    Ok(PyImage { inner: out.image })
}

/// Verdicts and raw scores of the four measured forgery-type decisions.
#[pyfunction]
fn measure_types<'py>(
    py: Python<'py>,
    real_crop: &PyImage,
    fake_crop: &PyImage,
) -> PyResult<Bound<'py, PyDict>> {
    let report = typing::measure_types(&real_crop.inner, &fake_crop.inner, &typing::TypeThresholds::default())
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("color_difference", report.color_difference)?;
    d.set_item("blur", report.blur)?;
    d.set_item("structure_abnormal", report.structure_abnormal)?;
    d.set_item("texture_abnormal", report.texture_abnormal)?;
    d.set_item("color_mean_dist", report.color_mean_dist)?;
    d.set_item("color_std_dist", report.color_std_dist)?;
    d.set_item("blur_variance_gap", report.blur_variance_gap)?;
    d.set_item("ssim", report.ssim)?;
    d.set_item("texture_contrast_gap", report.texture_contrast_gap)?;
    Ok(d)
}

#[pyfunction]
fn coarse_prompt(label: &str) -> PyResult<String> {
    match label {
        "real" => Ok(prompting::coarse_prompt(prompting::CoarseLabel::Real).text),
        "fake" => Ok(prompting::coarse_prompt(prompting::CoarseLabel::Fake).text),
        other => Err(value_err(format!("label must be real or fake, got {other}"))),
    }
}

#[pyfunction]
fn fine_prompt(region: &str, forgery_type: &str) -> PyResult<String> {
    let region = regions::RegionName::from_str(region)
        .ok_or_else(|| value_err(format!("unknown region {region}")))?;
    let ftype = typing::ForgeryType::from_phrase(forgery_type)
        .ok_or_else(|| value_err(format!("unknown forgery type {forgery_type}")))?;
    Ok(prompting::fine_prompt(region, ftype).text)
}

/// The 22 matcher prompts in vocabulary order.
#[pyfunction]
fn vocabulary() -> Vec<String> {
    prompting::vocabulary().into_iter().map(|p| p.text).collect()
}

/// Parses a prompt back to its kind; None when off template.
#[pyfunction]
fn parse_prompt<'py>(py: Python<'py>, text: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
    let Some(kind) = prompting::parse_prompt(text) else {
        return Ok(None);
    };
    let d = PyDict::new(py);
    match kind {
        prompting::PromptKind::CoarseReal => {
            d.set_item("kind", "coarse")?;
            d.set_item("label", "real")?;
        }
        prompting::PromptKind::CoarseFake => {
            d.set_item("kind", "coarse")?;
            d.set_item("label", "fake")?;
        }
        prompting::PromptKind::Fine(region, ftype) => {
            d.set_item("kind", "fine")?;
            d.set_item("region", region.as_str())?;
            d.set_item("type", ftype.as_phrase())?;
        }
    }
    Ok(Some(d))
}

fn batch_from(rows: Vec<Vec<f64>>) -> PyResult<losses::EmbeddingBatch> {
    let n = rows.len();
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    losses::EmbeddingBatch::new(n, dim, data).map_err(value_err)
}

/// Pairwise cosine similarity between two row batches.
#[pyfunction]
fn cosine_sim(u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let u = batch_from(u)?;
    let v = batch_from(v)?;
    let sims = losses::cosine_sim(&u, &v).map_err(value_err)?;
    Ok((0..sims.rows)
        .map(|i| (0..sims.cols).map(|j| sims.get(i, j)).collect())
        .collect())
}

/// Coarse + fine objective values: dict with coarse, fine, total.
#[pyfunction]
#[pyo3(signature = (coarse_visual, coarse_text, labels, fine_visual, fine_text, phi=0.1, tau=1.0))]
#[allow(clippy::too_many_arguments)]
fn total_loss<'py>(
    py: Python<'py>,
    coarse_visual: Vec<Vec<f64>>,
    coarse_text: Vec<Vec<f64>>,
    labels: Vec<u8>,
    fine_visual: Vec<Vec<f64>>,
    fine_text: Vec<Vec<f64>>,
    phi: f64,
    tau: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = losses::C2FConfig {
        phi,
        tau,
        ..Default::default()
    };
    cfg.validate().map_err(value_err)?;
    let report = losses::total_loss(
        &batch_from(coarse_visual)?,
        &batch_from(coarse_text)?,
        &labels,
        &batch_from(fine_visual)?,
        &batch_from(fine_text)?,
        &cfg,
    )
    .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("coarse", report.coarse)?;
    d.set_item("fine", report.fine)?;
    d.set_item("total", report.total)?;
    Ok(d)
}

/// Argmax cosine match against vocabulary-aligned prompt features.
#[pyfunction]
fn match_feature<'py>(
    py: Python<'py>,
    feature: Vec<f64>,
    text_features: Vec<Vec<f64>>,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "coarse" => losses::MatchMode::Coarse,
        "fine" => losses::MatchMode::Fine,
        other => return Err(value_err(format!("mode must be coarse or fine, got {other}"))),
    };
    let text = batch_from(text_features)?;
    let outcome = losses::match_feature(&feature, &text, mode).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("vocabulary_index", outcome.vocabulary_index)?;
    d.set_item("similarity", outcome.similarity)?;
    match outcome.label {
        losses::MatchLabel::Coarse(label) => {
            d.set_item("label", if label == prompting::CoarseLabel::Real { "real" } else { "fake" })?;
        }
        losses::MatchLabel::Fine(region, ftype) => {
            d.set_item("region", region.as_str())?;
            d.set_item("type", ftype.as_phrase())?;
        }
    }
    Ok(d)
}

/// Gradient-descent demo on free embeddings; returns loss trace endpoints
/// and the trained fine retrieval accuracy.
#[pyfunction]
#[pyo3(signature = (coarse_batch=32, fine_batch=24, dim=32, steps=500, lr=5.0, seed=0))]
fn cotrain_demo<'py>(
    py: Python<'py>,
    coarse_batch: usize,
    fine_batch: usize,
    dim: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = losses::ToyDataset::random(coarse_batch, fine_batch, dim, &mut rng);
    let out = losses::toy_cotrain(ds, &losses::C2FConfig::default(), steps, lr).map_err(value_err)?;
    let sims = losses::cosine_sim(&out.dataset.fine_visual, &out.dataset.fine_text)
        .map_err(value_err)?;
    let mut hits = 0usize;
    for i in 0..fine_batch {
        let mut best = 0;
        for j in 1..fine_batch {
            if sims.get(i, j) > sims.get(i, best) {
                best = j;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    let d = PyDict::new(py);
    d.set_item("initial_loss", out.trace[0])?;
    d.set_item("final_loss", *out.trace.last().unwrap())?;
    d.set_item("fine_top1_accuracy", hits as f64 / fine_batch as f64)?;
    Ok(d)
}

/// Runs the synthesis pipeline for a TOML config file; returns the report.
#[pyfunction]
#[pyo3(signature = (config_path, seed=None, workers=None))]
fn generate<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = pipeline::PipelineConfig::load(&config_path).map_err(value_err)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    let report = pipeline::run(&cfg).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("pairs_scanned", report.pairs_scanned)?;
    d.set_item("samples_emitted", report.samples_emitted)?;
    let skips = PyDict::new(py);
    for (reason, count) in &report.skips {
        skips.set_item(reason, count)?;
    }
    d.set_item("skips", skips)?;
    d.set_item("wall_time_secs", report.wall_time_secs)?;
    Ok(d)
}

/// Writes a synthetic real/fake/landmarks fixture tree for demos and tests.
#[pyfunction]
#[pyo3(signature = (root, normal_pairs=8, edge_cases=true))]
fn write_fixture_tree(root: PathBuf, normal_pairs: usize, edge_cases: bool) -> PyResult<usize> {
    synthetic::write_fixture_tree(&root, normal_pairs, edge_cases).map_err(value_err)
}

/// 68-point synthetic landmark template scaled into a frame.
#[pyfunction]
#[pyo3(signature = (width, height, dx=0.0, dy=0.0))]
fn landmark_points(width: usize, height: usize, dx: f64, dy: f64) -> Vec<(f64, f64)> {
    synthetic::landmark_points(width, height, dx, dy)
}

#[pymodule]
fn forgemix(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(glcm_contrast, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_variance, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(derive_region_masks, m)?)?;
    m.add_function(wrap_pyfunction!(extract_forgery_regions, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_blend, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_blend, m)?)?;
    m.add_function(wrap_pyfunction!(measure_types, m)?)?;
    m.add_function(wrap_pyfunction!(coarse_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(fine_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(vocabulary, m)?)?;
    m.add_function(wrap_pyfunction!(parse_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_sim, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(match_feature, m)?)?;
    m.add_function(wrap_pyfunction!(cotrain_demo, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture_tree, m)?)?;
    m.add_function(wrap_pyfunction!(landmark_points, m)?)?;
    Ok(())
}
