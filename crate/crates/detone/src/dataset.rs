//! Corpus ingestion and training-example generation.
//!
//! Every source image is converted to grayscale once, then the gradient
//! map and the halftone are computed over the full image before any
//! cropping: error diffusion is spatially causal, so halftoning a crop is
//! not the crop of the halftone, and Sobel responses at crop borders
//! would differ too. Patches are aligned 32x32 windows cut from the three
//! full-size planes.

use std::fs;
use std::path::Path;

use detone_core::container::{self, ContainerError, Reader};
use detone_core::halftone::{
    error_diffuse_fs, sobel_gradient, GradientImage, GrayImage, HalftoneImage,
};
use detone_core::tensor::{Dims, Tensor};
use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

/// Side length of training patches.
pub const PATCH_SIZE: usize = 32;

/// Magic string of the on-disk patch cache (same container envelope as
/// checkpoints).
pub const PATCH_CACHE_MAGIC: &[u8; 8] = b"SAHTDAT1";
const PATCH_CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot list corpus directory {path}: {source}")]
    ListDir {
        path: String,
        source: std::io::Error,
    },
    #[error("no usable images in {path} (need at least {}x{} pixels)", PATCH_SIZE, PATCH_SIZE)]
    EmptyCorpus { path: String },
    #[error("batch needs exactly {expected} patches, got {got}")]
    WrongBatchSize { expected: usize, got: usize },
    #[error("patch cache {path}: {source}")]
    Cache {
        path: String,
        source: ContainerError,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One source image with its derived planes. The gradient and halftone
/// are always recomputable from `gray`; [`ImageTriple::verify`] does
/// exactly that.
#[derive(Clone, Debug)]
pub struct ImageTriple {
    pub gray: GrayImage,
    pub gradient: GradientImage,
    pub halftone: HalftoneImage,
    pub source_id: String,
}

impl ImageTriple {
    /// Derive gradient and halftone planes from a grayscale image.
    pub fn from_gray(gray: GrayImage, source_id: String) -> Self {
        let gradient = sobel_gradient(&gray).expect("ingestion enforces the minimum size");
        let halftone = error_diffuse_fs(&gray).expect("gray invariants hold");
        ImageTriple {
            gray,
            gradient,
            halftone,
            source_id,
        }
    }

    /// Recompute both derived planes and compare bit-exactly.
    pub fn verify(&self) -> bool {
        let recomputed = ImageTriple::from_gray(self.gray.clone(), self.source_id.clone());
        recomputed.gradient == self.gradient && recomputed.halftone == self.halftone
    }

    pub fn height(&self) -> usize {
        self.gray.height()
    }

    pub fn width(&self) -> usize {
        self.gray.width()
    }
}

/// Aligned 32x32 windows cut from one triple at a common corner.
#[derive(Clone, Debug)]
pub struct PatchTriple {
    pub gray: GrayImage,
    pub gradient: GradientImage,
    pub halftone: HalftoneImage,
    pub origin: PatchOrigin,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub source_id: String,
    pub y: usize,
    pub x: usize,
}

/// One training mini-batch as three aligned tensors of shape
/// `(B, 1, 32, 32)`. Halftone values are binary; gray and gradient stay
/// in [0, 1] with no further normalization.
#[derive(Clone, Debug)]
pub struct Batch {
    pub halftone: Tensor<f32>,
    pub gray: Tensor<f32>,
    pub gradient: Tensor<f32>,
}

/// Read every image in `dir` (sorted by file name for determinism),
/// convert to grayscale, and derive the gradient and halftone planes over
/// the full image. Unreadable files and images smaller than the patch
/// size are skipped with a warning; an empty result is a hard error.
pub fn ingest_corpus(dir: &Path) -> Result<Vec<ImageTriple>, DatasetError> {
    let display = dir.display().to_string();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|source| DatasetError::ListDir {
            path: display.clone(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let triples: Vec<ImageTriple> = paths
        .par_iter()
        .filter_map(|path| {
            let image = match crate::imageio::read_image(path) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return None;
                }
            };
            let gray = image.into_gray();
            if gray.height() < PATCH_SIZE || gray.width() < PATCH_SIZE {
                warn!(
                    "skipping {}: {}x{} is smaller than the {}x{} patch size",
                    path.display(),
                    gray.height(),
                    gray.width(),
                    PATCH_SIZE,
                    PATCH_SIZE
                );
                return None;
            }
            let source_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            Some(ImageTriple::from_gray(gray, source_id))
        })
        .collect();
    if triples.is_empty() {
        return Err(DatasetError::EmptyCorpus { path: display });
    }
    Ok(triples)
}

/// Draw `count` aligned patch triples: uniform source image, uniform
/// valid top-left corner, with replacement. Deterministic for a fixed
/// seed.
pub fn sample_patches(triples: &[ImageTriple], count: usize, seed: u64) -> Vec<PatchTriple> {
    assert!(!triples.is_empty(), "cannot sample from an empty corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = &triples[rng.random_range(0..triples.len())];
            let y = rng.random_range(0..=t.height() - PATCH_SIZE);
            let x = rng.random_range(0..=t.width() - PATCH_SIZE);
            PatchTriple {
                gray: t.gray.crop(y, x, PATCH_SIZE),
                gradient: t.gradient.crop(y, x, PATCH_SIZE),
                halftone: t.halftone.crop(y, x, PATCH_SIZE),
                origin: PatchOrigin {
                    source_id: t.source_id.clone(),
                    y,
                    x,
                },
            }
        })
        .collect()
}

/// Stack patches into the three batch tensors, in list order.
pub fn make_batch(patches: &[PatchTriple], expected: usize) -> Result<Batch, DatasetError> {
    if patches.len() != expected {
        return Err(DatasetError::WrongBatchSize {
            expected,
            got: patches.len(),
        });
    }
    let dims = Dims::new(patches.len(), 1, PATCH_SIZE, PATCH_SIZE);
    let stack = |select: fn(&PatchTriple) -> &[f32]| -> Tensor<f32> {
        let mut data = Vec::with_capacity(dims.count());
        for p in patches {
            data.extend_from_slice(select(p));
        }
        Tensor::from_vec(dims, data).expect("patch sizes are fixed")
    };
    Ok(Batch {
        halftone: stack(|p| p.halftone.data()),
        gray: stack(|p| p.gray.data()),
        gradient: stack(|p| p.gradient.data()),
    })
}

/// Serialize patches into the shared container envelope (magic
/// `SAHTDAT1`). Useful for freezing a sampled pool on disk.
pub fn save_patch_cache(path: &Path, patches: &[PatchTriple]) -> Result<(), DatasetError> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(patches.len() as u32).to_le_bytes());
    payload.extend_from_slice(&(PATCH_SIZE as u32).to_le_bytes());
    for p in patches {
        let id = p.origin.source_id.as_bytes();
        payload.extend_from_slice(&(id.len() as u32).to_le_bytes());
        payload.extend_from_slice(id);
        payload.extend_from_slice(&(p.origin.y as u32).to_le_bytes());
        payload.extend_from_slice(&(p.origin.x as u32).to_le_bytes());
        for plane in [p.gray.data(), p.gradient.data(), p.halftone.data()] {
            for v in plane {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let bytes = container::seal(PATCH_CACHE_MAGIC, PATCH_CACHE_VERSION, &payload);
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_patch_cache(path: &Path) -> Result<Vec<PatchTriple>, DatasetError> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: display.clone(),
        source,
    })?;
    let wrap = |source: ContainerError| DatasetError::Cache {
        path: display.clone(),
        source,
    };
    let payload = container::unseal(PATCH_CACHE_MAGIC, PATCH_CACHE_VERSION, &bytes).map_err(wrap)?;
    let mut r = Reader::new(payload, 12);
    let count = r.u32().map_err(wrap)? as usize;
    let size = r.u32().map_err(wrap)? as usize;
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32().map_err(wrap)? as usize;
        let id = String::from_utf8_lossy(r.take(id_len).map_err(wrap)?).into_owned();
        let y = r.u32().map_err(wrap)? as usize;
        let x = r.u32().map_err(wrap)? as usize;
        let gray = r.f32_slice(size * size).map_err(wrap)?;
        let gradient = r.f32_slice(size * size).map_err(wrap)?;
        let halftone = r.f32_slice(size * size).map_err(wrap)?;
        patches.push(PatchTriple {
            gray: GrayImage::from_raw(size, size, gray),
            gradient: GradientImage::from_raw(size, size, gradient),
            halftone: HalftoneImage::from_raw(size, size, halftone),
            origin: PatchOrigin {
                source_id: id,
                y,
                x,
            },
        });
    }
    Ok(patches)
}
