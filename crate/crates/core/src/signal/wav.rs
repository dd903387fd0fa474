//! RIFF/WAVE reading (16-bit PCM and 32-bit float) and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Decode {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav_bytes(&bytes, &path.to_string_lossy())
}

/// Decode a WAV image. Channels are averaged to mono; 16-bit samples are
/// divided by 32768 and float samples are clamped to `[-1, 1]`.
pub fn decode_wav_bytes(bytes: &[u8], source_id: &str) -> Result<AudioClip> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(Error::Decode {
            offset: 0,
            reason: "missing RIFF tag".into(),
        });
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(Error::Decode {
            offset: 8,
            reason: "missing WAVE tag".into(),
        });
    }

    let mut format: Option<Format> = None;
    loop {
        let chunk_at = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Decode {
                        offset: chunk_at,
                        reason: format!("fmt chunk too small ({size} bytes)"),
                    });
                }
                let body = r.take(size, "fmt chunk")?;
                let mut f = Reader { buf: body, pos: 0 };
                let mut tag = f.u16("format tag")?;
                let channels = f.u16("channel count")?;
                let sample_rate = f.u32("sample rate")?;
                f.u32("byte rate")?;
                f.u16("block align")?;
                let bits = f.u16("bits per sample")?;
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::Decode {
                            offset: chunk_at,
                            reason: "extensible fmt chunk too small".into(),
                        });
                    }
                    tag = u16::from_le_bytes([body[24], body[25]]);
                }
                if channels == 0 || sample_rate == 0 {
                    return Err(Error::Decode {
                        offset: chunk_at + 8,
                        reason: "zero channels or sample rate".into(),
                    });
                }
                format = Some(Format {
                    tag,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let fmt = format.as_ref().ok_or_else(|| Error::Decode {
                    offset: chunk_at,
                    reason: "data chunk before fmt chunk".into(),
                })?;
                let data = r.take(size, "data chunk")?;
                return decode_samples(fmt, data, chunk_at + 8, source_id);
            }
            _ => {
                r.take(size, "chunk body")?;
            }
        }
        if size % 2 == 1 && r.pos < bytes.len() {
            r.pos += 1;
        }
    }
}

fn decode_samples(fmt: &Format, data: &[u8], offset: usize, source_id: &str) -> Result<AudioClip> {
    let width = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (tag, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {tag} with {bits} bits per sample"
            )))
        }
    };
    let channels = fmt.channels as usize;
    let frame = width * channels;
    if data.len() % frame != 0 {
        return Err(Error::Decode {
            offset: offset + data.len() - data.len() % frame,
            reason: format!(
                "data length {} is not a whole number of {frame}-byte frames",
                data.len()
            ),
        });
    }
    let frames = data.len() / frame;
    if frames == 0 {
        return Err(Error::Decode {
            offset,
            reason: "empty data chunk".into(),
        });
    }
    let read = |b: &[u8]| -> f32 {
        if width == 2 {
            i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0
        } else {
            f32::from_le_bytes([b[0], b[1], b[2], b[3]]).clamp(-1.0, 1.0)
        }
    };
    let samples = data
        .chunks_exact(frame)
        .map(|fr| {
            let sum: f32 = fr.chunks_exact(width).map(read).sum();
            (sum / channels as f32).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: fmt.sample_rate,
        source_id: source_id.to_string(),
    })
}

fn header(tag: u16, channels: u16, sample_rate: u32, bits: u16, data_len: usize) -> Vec<u8> {
    let block = channels as u32 * bits as u32 / 8;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out
}

/// Mono 32-bit float WAV image.
pub fn encode_wav_f32(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let mut out = header(FORMAT_FLOAT, 1, sample_rate, 32, samples.len() * 4);
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Interleaved 16-bit PCM WAV image with `channels` channels.
pub fn encode_wav_i16(frames: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
    let mut out = header(FORMAT_PCM, channels, sample_rate, 16, frames.len() * 2);
    for s in frames {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_scaling() {
        let wav = encode_wav_i16(&[0, 16384, -32768], 1, 16000);
        let clip = decode_wav_bytes(&wav, "t").unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let mut wav = header(FORMAT_FLOAT, 2, 8000, 32, 8);
        wav.extend_from_slice(&1.0f32.to_le_bytes());
        wav.extend_from_slice(&0.0f32.to_le_bytes());
        let clip = decode_wav_bytes(&wav, "t").unwrap();
        assert_eq!(clip.samples, vec![0.5]);
        assert_eq!(clip.sample_rate, 8000);
    }

    #[test]
    fn truncated_data_chunk_is_an_error() {
        let mut wav = encode_wav_i16(&[1, 2, 3, 4], 1, 16000);
        wav.truncate(wav.len() - 3);
        match decode_wav_bytes(&wav, "t") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 44),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_names_offset() {
        let mut wav = encode_wav_i16(&[1], 1, 16000);
        wav[8] = b'X';
        assert!(matches!(
            decode_wav_bytes(&wav, "t"),
            Err(Error::Decode { offset: 8, .. })
        ));
    }

    #[test]
    fn unsupported_bit_depth() {
        let mut wav = header(FORMAT_PCM, 1, 16000, 24, 3);
        wav.extend_from_slice(&[0, 0, 0]);
        assert!(matches!(decode_wav_bytes(&wav, "t"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let base = encode_wav_i16(&[16384], 1, 16000);
        let mut wav = base[..36].to_vec();
        wav.extend_from_slice(b"LIST");
        wav.extend_from_slice(&3u32.to_le_bytes());
        wav.extend_from_slice(&[1, 2, 3, 0]);
        wav.extend_from_slice(&base[36..]);
        let clip = decode_wav_bytes(&wav, "t").unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn float_round_trip_is_exact() {
        let s = vec![0.25f32, -0.125, 0.999];
        let clip = decode_wav_bytes(&encode_wav_f32(&s, 16000), "t").unwrap();
        assert_eq!(clip.samples, s);
    }
}
