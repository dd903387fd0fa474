//! Encode a 44.1 kHz tone as WAV, decode it, resample to 16 kHz and cut it
//! into 25 ms patches.

use adaf::signal::{decode_wav_bytes, encode_wav_f32, patchify, resample, DEFAULT_PATCH_LENGTH, SAMPLE_RATE};

fn main() -> adaf::Result<()> {
    let rate = 44_100;
    let samples: Vec<f32> = (0..rate)
        .map(|i| 0.5 * (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / rate as f32).sin())
        .collect();
    let bytes = encode_wav_f32(&samples, rate);
    let clip = decode_wav_bytes(&bytes, "tone.wav")?;
    println!(
        "decoded {} samples at {} Hz ({} bytes)",
        clip.samples.len(),
        clip.sample_rate,
        bytes.len()
    );
    let clip = resample(&clip, SAMPLE_RATE)?;
    println!("resampled to {} samples at {} Hz", clip.samples.len(), clip.sample_rate);
    let patches = patchify(&clip, DEFAULT_PATCH_LENGTH)?;
    println!("patches: {:?}", patches.shape());
    Ok(())
}
