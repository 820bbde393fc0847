//! Python module `svgfont`: path canonicalization, rendering, and the
//! latent tools of a frozen model bundle.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use svgfont::labels::label_of_str;
use svgfont::latent::{apply_concept, confidence, style_z, DEFAULT_SAMPLES};
use svgfont::raster::{render as render_glyph, Viewbox};
use svgfont::svg_path::{normalize, serialize_path, Glyph};
use svgfont_service::{decode_one, to_svg, ModelBundle};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn label(s: &str) -> PyResult<usize> {
    label_of_str(s).ok_or_else(|| value_err(format!("{s:?} is not in the 62-class set")))
}

/// Canonical relative path data: clockwise contours starting top-most.
#[pyfunction]
fn canonicalize(d: &str, label_char: &str) -> PyResult<String> {
    let g = Glyph::from_path(label(label_char)?, d).map_err(value_err)?;
    Ok(serialize_path(&normalize(&g).map_err(value_err)?))
}

/// 64×64 coverage, row-major, of path data framed by a square viewbox.
#[pyfunction]
fn render(d: &str, min_x: f64, min_y: f64, size: f64) -> PyResult<Vec<f32>> {
    let g = Glyph::from_path(0, d).map_err(value_err)?;
    let r = render_glyph(&g, &Viewbox::new(min_x, min_y, size)).map_err(value_err)?;
    Ok(r.as_slice().to_vec())
}

/// A frozen bundle directory as written by `svgfont bundle`.
#[pyclass(name = "Bundle")]
struct PyBundle {
    inner: ModelBundle,
}

impl PyBundle {
    fn check_z(&self, z: &[f64]) -> PyResult<()> {
        if z.len() != self.inner.z_dim() {
            return Err(value_err(format!(
                "z has {} entries, the model uses {}",
                z.len(),
                self.inner.z_dim()
            )));
        }
        Ok(())
    }

    fn glyph(&self, svg: &str, label_char: &str) -> PyResult<Glyph> {
        let g = Glyph::from_path(label(label_char)?, svg).map_err(value_err)?;
        self.inner.meta.prepare(&g).map_err(value_err)
    }
}

#[pymethods]
impl PyBundle {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(PyBundle {
            inner: ModelBundle::load(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn z_dim(&self) -> usize {
        self.inner.z_dim()
    }

    #[getter]
    fn concepts(&self) -> Vec<String> {
        self.inner.concepts.keys().cloned().collect()
    }

    /// `(z, sigma2_mean)` of one glyph given in font units.
    fn encode(&self, svg: &str, label_char: &str) -> PyResult<(Vec<f64>, f64)> {
        let g = self.glyph(svg, label_char)?;
        let r = render_glyph(&g, &self.inner.meta.viewbox).map_err(value_err)?;
        let latent = self.inner.models.vae.encode(r.as_slice(), g.label).map_err(value_err)?;
        Ok((latent.mu.clone(), confidence(&latent)))
    }

    /// Averaged style code of several `(svg, char)` glyphs.
    fn style(&self, glyphs: Vec<(String, String)>) -> PyResult<Vec<f64>> {
        let gs = glyphs
            .iter()
            .map(|(svg, c)| self.glyph(svg, c))
            .collect::<PyResult<Vec<_>>>()?;
        style_z(&self.inner.models.vae, &self.inner.meta.viewbox, &gs).map_err(value_err)
    }

    /// Path data for each target character, same bytes as the HTTP service
    /// gives for the same seed.
    #[pyo3(signature = (z, targets, n = DEFAULT_SAMPLES, seed = 0))]
    fn propagate(&self, py: Python<'_>, z: Vec<f64>, targets: &str, n: usize, seed: u64) -> PyResult<Vec<String>> {
        self.check_z(&z)?;
        let labels = targets
            .chars()
            .map(|c| label(&c.to_string()))
            .collect::<PyResult<Vec<_>>>()?;
        let b = &self.inner;
        py.detach(|| {
            labels
                .iter()
                .map(|&l| decode_one(b, &z, l, n, seed).map(|g| to_svg(&g)))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(value_err)
    }

    /// One glyph of `label_char` per α along a named concept.
    #[pyo3(signature = (z, concept, alphas, label_char, n = DEFAULT_SAMPLES, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn apply_concept(
        &self,
        py: Python<'_>,
        z: Vec<f64>,
        concept: &str,
        alphas: Vec<f64>,
        label_char: &str,
        n: usize,
        seed: u64,
    ) -> PyResult<Vec<String>> {
        self.check_z(&z)?;
        let c = self
            .inner
            .concepts
            .get(concept)
            .ok_or_else(|| PyKeyError::new_err(concept.to_string()))?;
        let zs = apply_concept(&z, c, &alphas).map_err(value_err)?;
        let l = label(label_char)?;
        let b = &self.inner;
        py.detach(|| {
            zs.iter()
                .map(|z| decode_one(b, z, l, n, seed).map(|g| to_svg(&g)))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(value_err)
    }
}

#[pymodule(name = "svgfont")]
fn svgfont_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_class::<PyBundle>()?;
    Ok(())
}
