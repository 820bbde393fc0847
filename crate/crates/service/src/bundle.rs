//! A frozen model bundle: both models, the corpus metadata they were
//! trained against, and named concept directions.
//!
//! On disk a bundle is one directory holding `vae.toml`/`vae.ckpt`,
//! `decoder.toml`/`decoder.ckpt` and `bundle.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svgfont::dataset::CorpusMeta;
use svgfont::latent::{ConceptDirection, Models};
use svgfont::svg_decoder::{DecoderError, SvgDecoder};
use svgfont::vae::{Vae, VaeError};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("inconsistent bundle: {0}")]
    Mismatch(String),
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    meta: CorpusMeta,
    temperature: f64,
    concepts: Vec<ConceptDirection>,
}

pub struct ModelBundle {
    pub models: Models<f32>,
    pub meta: CorpusMeta,
    pub concepts: BTreeMap<String, Vec<f64>>,
}

impl ModelBundle {
    /// Checks that the decoder, the viewbox and every concept agree with
    /// the VAE's latent width.
    pub fn new(models: Models<f32>, meta: CorpusMeta, concepts: Vec<ConceptDirection>) -> Result<Self, BundleError> {
        let z = models.vae.config.z_dim;
        if models.decoder.config.z_dim != z {
            return Err(BundleError::Mismatch(format!(
                "decoder takes z of width {}, VAE produces {z}",
                models.decoder.config.z_dim
            )));
        }
        if models.viewbox != meta.viewbox {
            return Err(BundleError::Mismatch(
                "model viewbox differs from corpus metadata".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for c in concepts {
            if c.c.len() != z {
                return Err(BundleError::Mismatch(format!(
                    "concept {:?} has width {}, expected {z}",
                    c.name,
                    c.c.len()
                )));
            }
            map.insert(c.name, c.c);
        }
        Ok(ModelBundle {
            models,
            meta,
            concepts: map,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.models.vae.config.z_dim
    }

    pub fn save(&self, dir: &Path) -> Result<(), BundleError> {
        std::fs::create_dir_all(dir)?;
        self.models.vae.save(dir)?;
        self.models.decoder.save(dir)?;
        let file = BundleFile {
            meta: self.meta.clone(),
            temperature: self.models.temperature,
            concepts: self
                .concepts
                .iter()
                .map(|(name, c)| ConceptDirection {
                    name: name.clone(),
                    c: c.clone(),
                })
                .collect(),
        };
        std::fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let file: BundleFile = serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
        let models = Models {
            vae: Vae::load(dir)?,
            decoder: SvgDecoder::load(dir)?,
            viewbox: file.meta.viewbox,
            temperature: file.temperature,
        };
        Self::new(models, file.meta, file.concepts)
    }
}
