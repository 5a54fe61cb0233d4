//! RIFF/WAVE reading and writing, plus sample-rate conversion for `--resample`.
//!
//! Reads 8/16/24/32-bit integer PCM and 32/64-bit float, including
//! `WAVE_FORMAT_EXTENSIBLE`. Writes 16/24-bit PCM and 32-bit float.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::audio::StereoWaveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Output sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    #[serde(rename = "pcm16")]
    Pcm16,
    #[serde(rename = "pcm24")]
    Pcm24,
    #[default]
    #[serde(rename = "float32")]
    Float32,
}

impl BitDepth {
    fn bits(self) -> u16 {
        match self {
            BitDepth::Pcm16 => 16,
            BitDepth::Pcm24 => 24,
            BitDepth::Float32 => 32,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            BitDepth::Float32 => FORMAT_FLOAT,
            _ => FORMAT_PCM,
        }
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    block_align: u16,
}

fn unsupported(path: &Path, detail: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Reads a WAV file. Mono files are duplicated into both channels; files with more
/// than two channels are rejected.
pub fn read_audio(path: impl AsRef<Path>) -> Result<StereoWaveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<StereoWaveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(unsupported(path, "not a RIFF/WAVE file"));
    }
    let mut format = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size);
        if body_end > bytes.len() {
            // A truncated data chunk is tolerated only as the final chunk, rounded down to whole frames.
            if id == b"data" {
                data = Some(&bytes[body_start..]);
                break;
            }
            return Err(unsupported(path, "truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(unsupported(path, "fmt chunk too short"));
                }
                let mut tag = u16_at(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(unsupported(path, "extensible fmt chunk too short"));
                    }
                    tag = u16_at(body, 24);
                }
                format = Some(Format {
                    tag,
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    block_align: u16_at(body, 12),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| unsupported(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| unsupported(path, "missing data chunk"))?;

    if format.channels == 0 || format.channels > 2 {
        return Err(unsupported(
            path,
            format!("{} channels (only mono and stereo are supported)", format.channels),
        ));
    }
    let bytes_per_sample = (format.bits as usize).div_ceil(8);
    if bytes_per_sample == 0 || format.block_align as usize != bytes_per_sample * format.channels as usize {
        return Err(unsupported(path, "inconsistent block alignment"));
    }
    let decode_sample: fn(&[u8]) -> f32 = match (format.tag, format.bits) {
        (FORMAT_PCM, 8) => |b| (b[0] as f32 - 128.0) / 128.0,
        (FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32_768.0,
        (FORMAT_PCM, 24) => |b| {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f32 / 8_388_608.0
        },
        (FORMAT_PCM, 32) => |b| (i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0) as f32,
        (FORMAT_FLOAT, 32) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        (FORMAT_FLOAT, 64) => |b| {
            f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as f32
        },
        (tag, bits) => {
            return Err(unsupported(
                path,
                format!("format tag {tag} with {bits} bits per sample"),
            ))
        }
    };

    let frame_bytes = format.block_align as usize;
    let frames = data.len() / frame_bytes;
    let mut left = Vec::with_capacity(frames);
    let mut right = Vec::with_capacity(frames);
    for frame in data.chunks_exact(frame_bytes) {
        let l = decode_sample(&frame[..bytes_per_sample]);
        let r = if format.channels == 2 {
            decode_sample(&frame[bytes_per_sample..])
        } else {
            l
        };
        left.push(l);
        right.push(r);
    }
    StereoWaveform::new(left, right, format.sample_rate)
        .map_err(|e| unsupported(path, e.to_string()))
}

/// Writes a stereo WAV file. Integer formats are clipped to full scale.
pub fn write_audio(path: impl AsRef<Path>, w: &StereoWaveform, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(w, depth);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode(w: &StereoWaveform, depth: BitDepth) -> Vec<u8> {
    let channels = 2u16;
    let bytes_per_sample = depth.bits() as usize / 8;
    let block_align = channels as usize * bytes_per_sample;
    let data_len = w.len() * block_align;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&depth.format_tag().to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&((w.sample_rate() as usize * block_align) as u32).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&depth.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for (&l, &r) in w.left().iter().zip(w.right()) {
        for s in [l, r] {
            match depth {
                BitDepth::Float32 => out.extend_from_slice(&s.to_le_bytes()),
                BitDepth::Pcm16 => {
                    let v = (s as f64 * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
                    out.extend_from_slice(&v.to_le_bytes());
                }
                BitDepth::Pcm24 => {
                    let v = (s as f64 * 8_388_608.0)
                        .round()
                        .clamp(-8_388_608.0, 8_388_607.0) as i32;
                    out.extend_from_slice(&v.to_le_bytes()[..3]);
                }
            }
        }
    }
    out
}

/// Reads a file for a session running at `session_rate`. A different file rate is an
/// error unless `resample` is set, in which case the audio is converted.
pub fn load_for_session(
    path: impl AsRef<Path>,
    session_rate: u32,
    resample: bool,
) -> Result<StereoWaveform> {
    let w = read_audio(path)?;
    if w.sample_rate() == session_rate {
        Ok(w)
    } else if resample {
        resample_to(&w, session_rate)
    } else {
        Err(Error::SampleRateMismatch {
            expected: session_rate,
            got: w.sample_rate(),
        })
    }
}

/// Zero crossings of the interpolation kernel on each side.
const RESAMPLE_HALF_TAPS: usize = 32;

/// Band-limited resampling with a Hann-windowed sinc kernel (linear phase).
pub fn resample_to(w: &StereoWaveform, to_rate: u32) -> Result<StereoWaveform> {
    if to_rate == 0 {
        return Err(Error::InvalidParameter("target sample rate must be > 0".into()));
    }
    let from = w.sample_rate() as f64;
    let to = to_rate as f64;
    if w.sample_rate() == to_rate {
        return Ok(w.clone());
    }
    let cutoff = (to / from).min(1.0);
    let out_len = ((w.len() as f64) * to / from).round() as usize;
    let half_width = RESAMPLE_HALF_TAPS as f64 / cutoff;
    let convert = |x: &[f32]| -> Vec<f32> {
        (0..out_len)
            .map(|n| {
                let t = n as f64 * from / to;
                let lo = (t - half_width).ceil().max(0.0) as usize;
                let hi = ((t + half_width).floor() as usize).min(x.len().saturating_sub(1));
                let mut acc = 0.0;
                for (k, &s) in x.iter().enumerate().take(hi + 1).skip(lo) {
                    let d = t - k as f64;
                    let arg = PI * d * cutoff;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                    acc += s as f64 * cutoff * sinc * win;
                }
                acc as f32
            })
            .collect()
    };
    let (l, r) = crate::par::join(|| convert(w.left()), || convert(w.right()));
    StereoWaveform::new(l, r, to_rate)
}
