//! Minimal RIFF/WAVE reader for 8- and 16-bit integer PCM.

use std::path::Path;

use super::AudioSignal;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Format {
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::MalformedWav(msg) => Error::MalformedWav(format!("{}: {msg}", path.display())),
        Error::UnsupportedWav { chunk, detail } => Error::UnsupportedWav {
            chunk,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn chunk_name(id: &[u8]) -> String {
    id.iter()
        .map(|&c| if c.is_ascii_graphic() || c == b' ' { c as char } else { '?' })
        .collect()
}

/// Decodes a WAV byte stream, averaging channels down to mono.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioSignal> {
    if bytes.len() < 12 {
        return Err(Error::MalformedWav("file shorter than the RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::MalformedWav(format!(
            "expected 'RIFF' magic, found '{}'",
            chunk_name(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav(format!(
            "expected 'WAVE' form type, found '{}'",
            chunk_name(&bytes[8..12])
        )));
    }

    let mut format: Option<Format> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedWav(format!(
                    "chunk '{}' declares {} bytes but only {} remain",
                    chunk_name(id),
                    size,
                    bytes.len() - body_start
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => {
                let fmt = format.as_ref().ok_or_else(|| {
                    Error::MalformedWav("'data' chunk precedes the 'fmt ' chunk".into())
                })?;
                return decode_pcm(body, fmt);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    Err(Error::MalformedWav(if format.is_some() {
        "no 'data' chunk".into()
    } else {
        "no 'fmt ' chunk".into()
    }))
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::MalformedWav(format!(
            "'fmt ' chunk is {} bytes, expected at least 16",
            body.len()
        )));
    }
    let mut tag = read_u16(body, 0);
    if tag == FORMAT_EXTENSIBLE && body.len() >= 26 {
        // First two bytes of the sub-format GUID carry the actual format code.
        tag = read_u16(body, 24);
    }
    if tag != FORMAT_PCM {
        return Err(Error::UnsupportedWav {
            chunk: "fmt ".into(),
            detail: format!("format tag 0x{tag:04x} is not integer PCM"),
        });
    }
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let bits_per_sample = read_u16(body, 14);
    if channels == 0 {
        return Err(Error::MalformedWav("'fmt ' chunk declares zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::MalformedWav("'fmt ' chunk declares a zero sample rate".into()));
    }
    if bits_per_sample != 8 && bits_per_sample != 16 {
        return Err(Error::UnsupportedWav {
            chunk: "fmt ".into(),
            detail: format!("{bits_per_sample}-bit samples (only 8 and 16 are supported)"),
        });
    }
    Ok(Format {
        channels,
        sample_rate,
        bits_per_sample,
    })
}

fn decode_pcm(data: &[u8], fmt: &Format) -> Result<AudioSignal> {
    let bytes_per_sample = (fmt.bits_per_sample / 8) as usize;
    let channels = fmt.channels as usize;
    let block = bytes_per_sample * channels;
    let frames = data.len() / block;
    if frames == 0 {
        return Err(Error::MalformedWav("'data' chunk holds no complete sample frames".into()));
    }
    let sample = |at: usize| -> f64 {
        match bytes_per_sample {
            1 => (data[at] as f64 - 128.0) / 128.0,
            _ => i16::from_le_bytes([data[at], data[at + 1]]) as f64 / 32768.0,
        }
    };
    let samples = (0..frames)
        .map(|f| {
            let base = f * block;
            let sum: f64 = (0..channels).map(|c| sample(base + c * bytes_per_sample)).sum();
            sum / channels as f64
        })
        .collect();
    AudioSignal::new(samples, fmt.sample_rate)
}

/// Writes mono 16-bit PCM. Samples are clamped to `[-1, 1)`.
pub fn write_wav_i16(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav_i16(signal.samples(), signal.sample_rate(), 1);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_wav_i16(interleaved: &[f64], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = interleaved.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2 * channels as u32).to_le_bytes());
    out.extend_from_slice(&(2 * channels).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in interleaved {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_i16(samples: &[i16], channels: u16, sample_rate: u32) -> Vec<u8> {
        let f: Vec<f64> = samples.iter().map(|&s| s as f64 / 32768.0).collect();
        encode_wav_i16(&f, sample_rate, channels)
    }

    #[test]
    fn silence_decodes_to_zeros() {
        let sig = parse_wav(&raw_i16(&[0; 64], 1, 16000)).unwrap();
        assert_eq!(sig.len(), 64);
        assert_eq!(sig.sample_rate(), 16000);
        assert!(sig.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn half_scale_sample() {
        let sig = parse_wav(&raw_i16(&[16384, -16384, -32768], 1, 8000)).unwrap();
        assert_eq!(sig.samples(), &[0.5, -0.5, -1.0]);
    }

    #[test]
    fn stereo_is_averaged() {
        let a = (0.2 * 32768.0) as i16;
        let b = (0.6 * 32768.0) as i16;
        let sig = parse_wav(&raw_i16(&[a, b, a, b], 2, 8000)).unwrap();
        assert_eq!(sig.len(), 2);
        let expected = (a as f64 + b as f64) / 2.0 / 32768.0;
        for &s in sig.samples() {
            assert!((s - expected).abs() < 1e-15);
            assert!((s - 0.4).abs() < 1e-4);
        }
    }

    #[test]
    fn eight_bit_unsigned() {
        let mut bytes = raw_i16(&[0], 1, 8000);
        // rewrite as an 8-bit file with samples 128, 192, 0
        bytes.truncate(36);
        bytes[32..34].copy_from_slice(&1u16.to_le_bytes());
        bytes[34..36].copy_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[128, 192, 0]);
        bytes.push(0); // pad byte
        let sig = parse_wav(&bytes).unwrap();
        assert_eq!(sig.samples(), &[0.0, 0.5, -1.0]);
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = raw_i16(&[100, 200], 1, 8000);
        let mut bytes = plain[..12].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[12..]);
        let sig = parse_wav(&bytes).unwrap();
        assert_eq!(sig.len(), 2);
    }

    #[test]
    fn compressed_format_names_fmt_chunk() {
        let mut bytes = raw_i16(&[0; 4], 1, 8000);
        bytes[20..22].copy_from_slice(&0x0011u16.to_le_bytes()); // IMA ADPCM
        match parse_wav(&bytes) {
            Err(Error::UnsupportedWav { chunk, detail }) => {
                assert_eq!(chunk, "fmt ");
                assert!(detail.contains("0x0011"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse_wav(b"RIFX0000WAVE"), Err(Error::MalformedWav(_))));
        assert!(matches!(parse_wav(b"RIFF"), Err(Error::MalformedWav(_))));
        let mut truncated = raw_i16(&[1, 2, 3], 1, 8000);
        truncated.truncate(truncated.len() - 2);
        assert!(matches!(parse_wav(&truncated), Err(Error::MalformedWav(_))));
        let mut no_fmt = b"RIFF\0\0\0\0WAVE".to_vec();
        no_fmt.extend_from_slice(b"data");
        no_fmt.extend_from_slice(&2u32.to_le_bytes());
        no_fmt.extend_from_slice(&[0, 0]);
        assert!(matches!(parse_wav(&no_fmt), Err(Error::MalformedWav(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let sig = AudioSignal::new(vec![0.25, -0.5, 0.0, 0.75], 11025).unwrap();
        write_wav_i16(&path, &sig).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back, sig);
        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }
}
