//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use crate::error::{Error, Result};
use crate::signal::AudioClip;

pub const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 8.0;
/// Passband edge relative to the lower of the two Nyquist frequencies.
const CUTOFF: f64 = 0.97;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// One row of [`TAPS_PER_PHASE`] coefficients per output phase, each row
/// normalized to unit DC gain.
fn phase_table(up: usize, cutoff: f64) -> Vec<f64> {
    let half = (TAPS_PER_PHASE / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let mut table = vec![0.0; up * TAPS_PER_PHASE];
    for (p, row) in table.chunks_mut(TAPS_PER_PHASE).enumerate() {
        let frac = p as f64 / up as f64;
        for (j, c) in row.iter_mut().enumerate() {
            let d = j as f64 - (half - 1.0) - frac;
            let r = d / half;
            let w = if r.abs() <= 1.0 {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
            } else {
                0.0
            };
            *c = cutoff * sinc(cutoff * d) * w;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|c| *c /= s);
    }
    table
}

/// Resample to `target_rate`. Same-rate input is returned unchanged; the
/// output holds `floor(len · target / source)` samples.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::validation("target_rate", "must be positive"));
    }
    if clip.sample_rate == 0 {
        return Err(Error::validation("sample_rate", "must be positive"));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(clip.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = clip.sample_rate as u64 / g;
    let cutoff = CUTOFF * (up as f64 / down as f64).min(1.0);
    let table = phase_table(up as usize, cutoff);

    let x = &clip.samples;
    let n_out = (x.len() as u64 * up / down) as usize;
    let offset = TAPS_PER_PHASE as i64 / 2 - 1;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let pos = n * down;
        let base = (pos / up) as i64 - offset;
        let row = &table[(pos % up) as usize * TAPS_PER_PHASE..][..TAPS_PER_PHASE];
        let mut acc = 0.0f64;
        for (j, &c) in row.iter().enumerate() {
            let m = base + j as i64;
            if m >= 0 && (m as usize) < x.len() {
                acc += c * x[m as usize] as f64;
            }
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    })
}
