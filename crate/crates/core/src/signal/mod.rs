//! Audio decoding, resampling, patching, synthetic data and batching.

pub mod dataset;
pub mod patch;
pub mod resample;
pub mod synth;
pub mod wav;

pub use dataset::{Batch, BatchIter, Dataset, DatasetManifest, LoadOptions, ManifestEntry, Split};
pub use patch::{patchify, PatchSequence};
pub use resample::resample;
pub use synth::{generate_synthetic, synthesize, FamilySpec, GeneratorKind, SynthSpec};
pub use wav::{decode_wav, decode_wav_bytes, encode_wav_f32, encode_wav_i16};

/// Rate every clip is brought to before patching.
pub const SAMPLE_RATE: u32 = 16_000;

/// 25 ms at 16 kHz.
pub const DEFAULT_PATCH_LENGTH: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
