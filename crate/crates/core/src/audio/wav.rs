//! Minimal RIFF/WAVE reader and writer.
//!
//! Supports format tags 1 (PCM16) and 3 (IEEE float32), any channel count.
//! PCM16 samples are normalized by 1/32768 on read so that integer zero maps
//! to exactly 0.0; float32 samples pass through unchanged, which makes the
//! float32 write/read round trip bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Pcm16,
    Float32,
}

/// Metadata returned by [`write_wav`].
#[derive(Debug, Clone, Copy, Default)]
pub struct WriteInfo {
    /// Number of samples clamped into `[-1, 1]` before PCM16 quantization.
    pub clamped_samples: usize,
}

const PCM16_SCALE: f64 = 32768.0;

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format(format!("truncated {what}")))
}

fn u16_le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Read a RIFF/WAVE file into an [`AudioClip`].
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);

    let mut hdr = [0u8; 12];
    read_exact_or_format(&mut r, &mut hdr, "RIFF header")?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::format("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;

    // Walk chunks until both fmt and data are seen.
    loop {
        let mut chdr = [0u8; 8];
        match r.read_exact(&mut chdr) {
            Ok(()) => {}
            Err(_) => break,
        }
        let id = [chdr[0], chdr[1], chdr[2], chdr[3]];
        let size = u32_le(&chdr[4..8]) as usize;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt chunk too small"));
                }
                let mut body = vec![0u8; size];
                read_exact_or_format(&mut r, &mut body, "fmt chunk")?;
                let tag = u16_le(&body[0..2]);
                let channels = u16_le(&body[2..4]);
                let rate = u32_le(&body[4..8]);
                let bits = u16_le(&body[14..16]);
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let mut body = vec![0u8; size];
                read_exact_or_format(&mut r, &mut body, "data chunk")?;
                data = Some(body);
            }
            _ => {
                // skip unknown chunk (word-aligned)
                let skip = size + (size & 1);
                let mut body = vec![0u8; skip];
                read_exact_or_format(&mut r, &mut body, "chunk body")?;
            }
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::format("missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format("missing data chunk"))?;
    if channels == 0 {
        return Err(Error::format("fmt declares zero channels"));
    }
    if rate == 0 {
        return Err(Error::format("fmt declares zero sample rate"));
    }

    let channels = channels as usize;
    let samples: Array2<f64> = match (tag, bits) {
        (1, 16) => {
            let bytes_per_frame = 2 * channels;
            if data.len() % bytes_per_frame != 0 {
                return Err(Error::format("PCM16 data chunk not frame-aligned"));
            }
            let frames = data.len() / bytes_per_frame;
            if frames == 0 {
                return Err(Error::format("empty data chunk"));
            }
            let mut out = Array2::zeros((channels, frames));
            for f in 0..frames {
                for c in 0..channels {
                    let off = (f * channels + c) * 2;
                    let v = i16::from_le_bytes([data[off], data[off + 1]]);
                    out[[c, f]] = v as f64 / PCM16_SCALE;
                }
            }
            out
        }
        (3, 32) => {
            let bytes_per_frame = 4 * channels;
            if data.len() % bytes_per_frame != 0 {
                return Err(Error::format("float32 data chunk not frame-aligned"));
            }
            let frames = data.len() / bytes_per_frame;
            if frames == 0 {
                return Err(Error::format("empty data chunk"));
            }
            let mut out = Array2::zeros((channels, frames));
            for f in 0..frames {
                for c in 0..channels {
                    let off = (f * channels + c) * 4;
                    let v = f32::from_le_bytes([
                        data[off],
                        data[off + 1],
                        data[off + 2],
                        data[off + 3],
                    ]);
                    out[[c, f]] = v as f64;
                }
            }
            out
        }
        (tag, bits) => {
            return Err(Error::Unsupported(format!(
                "WAV format tag {tag} with {bits} bits per sample"
            )))
        }
    };

    AudioClip::new(samples, rate)
}

/// Write a clip as RIFF/WAVE with the chosen sample encoding.
///
/// PCM16 rounds to the nearest integer after scaling by 32768 and clamps out
/// of range values; the clamp count is reported in the returned [`WriteInfo`].
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>, encoding: Encoding) -> Result<WriteInfo> {
    let channels = clip.channels();
    let frames = clip.num_samples();
    let rate = clip.sample_rate();
    let (tag, bits): (u16, u16) = match encoding {
        Encoding::Pcm16 => (1, 16),
        Encoding::Float32 => (3, 32),
    };
    let bytes_per_sample = (bits / 8) as u32;
    let block_align = channels as u32 * bytes_per_sample;
    let data_size = frames as u32 * block_align;

    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);

    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_size).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(&(channels as u16).to_le_bytes())?;
    w.write_all(&rate.to_le_bytes())?;
    w.write_all(&(rate * block_align).to_le_bytes())?;
    w.write_all(&(block_align as u16).to_le_bytes())?;
    w.write_all(&bits.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_size.to_le_bytes())?;

    let mut info = WriteInfo::default();
    let samples = clip.samples();
    match encoding {
        Encoding::Pcm16 => {
            for f in 0..frames {
                for c in 0..channels {
                    let v = samples[[c, f]];
                    let clamped = v.clamp(-1.0, 1.0);
                    if clamped != v {
                        info.clamped_samples += 1;
                    }
                    let q = (clamped * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_all(&q.to_le_bytes())?;
                }
            }
        }
        Encoding::Float32 => {
            for f in 0..frames {
                for c in 0..channels {
                    w.write_all(&(samples[[c, f]] as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    if info.clamped_samples > 0 {
        log::warn!(
            "write_wav: clamped {} out-of-range samples for PCM16",
            info.clamped_samples
        );
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use rand::Rng;

    #[test]
    fn pcm16_constant_half_scale() {
        // 1 second, 8 kHz mono, constant 16384 -> all samples 0.5
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let clip = AudioClip::mono(vec![0.5; 8000], 8000).unwrap();
        write_wav(&clip, &path, Encoding::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.num_samples(), 8000);
        assert!(back.samples().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn truncated_data_chunk_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let clip = AudioClip::mono(vec![0.1; 64], 8000).unwrap();
        write_wav(&clip, &path, Encoding::Pcm16).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_wav(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn float32_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let mut rng = StreamSeed::new(3).derive("wav-test").rng();
        let samples: Vec<f64> = (0..500)
            .map(|_| (rng.gen_range(-1.0f64..1.0) as f32) as f64)
            .collect();
        let clip = AudioClip::new(
            Array2::from_shape_vec((2, 250), samples).unwrap(),
            44100,
        )
        .unwrap();
        write_wav(&clip, &path, Encoding::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples(), clip.samples());
        assert_eq!(back.sample_rate(), 44100);
    }

    #[test]
    fn pcm16_clamps_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cl.wav");
        let clip = AudioClip::mono(vec![1.5, 0.0, -2.0], 8000).unwrap();
        let info = write_wav(&clip, &path, Encoding::Pcm16).unwrap();
        assert_eq!(info.clamped_samples, 2);
        let back = read_wav(&path).unwrap();
        // 1.0 * 32768 clamps to i16::MAX
        assert!((back.channel(0)[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(back.channel(0)[1], 0.0);
        assert_eq!(back.channel(0)[2], -1.0);
    }

    #[test]
    fn all_zero_pcm16_data_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        let clip = AudioClip::mono(vec![0.0; 100], 8000).unwrap();
        write_wav(&clip, &path, Encoding::Pcm16).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 44 + 200);
        assert!(bytes[44..].iter().all(|&b| b == 0));
    }

    #[test]
    fn unsupported_encoding_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.wav");
        let clip = AudioClip::mono(vec![0.1; 16], 8000).unwrap();
        write_wav(&clip, &path, Encoding::Pcm16).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] = 7; // mangle the format tag
        std::fs::write(&path, &bytes).unwrap();
        match read_wav(&path) {
            Err(Error::Unsupported(_)) => {}
            other => panic!("expected unsupported error, got {other:?}"),
        }
    }
}
