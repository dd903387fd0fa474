use crate::error::{Error, Result};
use crate::signal::{AudioClip, SAMPLE_RATE};
use crate::tensor::Tensor;

/// A clip (or one fixed-length chunk of a clip) cut into `T × P` patches,
/// with the clip's multi-hot label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patches: Tensor<f32>,
    pub label: Vec<f32>,
    pub clip_id: String,
    /// Clip the chunk was cut from; equals `clip_id` for single-chunk clips.
    pub source_id: String,
}

impl PatchSequence {
    pub fn new(patches: Tensor<f32>, label: Vec<f32>, clip_id: impl Into<String>) -> Result<Self> {
        if patches.rank() != 2 || patches.shape()[0] == 0 {
            return Err(Error::shape("patch sequence", patches.shape(), &[1, 0]));
        }
        if !label.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::validation("label", "entries must be 0 or 1"));
        }
        if !label.contains(&1.0) {
            return Err(Error::validation("label", "needs at least one positive class"));
        }
        let clip_id = clip_id.into();
        Ok(PatchSequence {
            patches,
            label,
            source_id: clip_id.clone(),
            clip_id,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn patch_length(&self) -> usize {
        self.patches.shape()[1]
    }
}

/// Cut a 16 kHz clip into non-overlapping, unwindowed patches of
/// `patch_length` samples. A trailing partial patch is dropped.
pub fn patchify(clip: &AudioClip, patch_length: usize) -> Result<Tensor<f32>> {
    if patch_length == 0 {
        return Err(Error::validation("patch_length", "must be at least 1"));
    }
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::validation(
            "sample_rate",
            format!("patchify expects {SAMPLE_RATE} Hz, got {}", clip.sample_rate),
        ));
    }
    let t = clip.samples.len() / patch_length;
    if t == 0 {
        return Err(Error::TooShort {
            len: clip.samples.len(),
            needed: patch_length,
        });
    }
    Tensor::new(&[t, patch_length], clip.samples[..t * patch_length].to_vec())
}
