//! RIFF/WAVE reading (16-bit PCM, 32-bit float) and 32-bit float writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::framing::Waveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub waveform: Waveform<f32>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
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
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a WAV byte stream. 16-bit samples map to `v / 32768`.
pub fn decode(bytes: &[u8]) -> Result<Audio> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(Error::parse(0, "missing RIFF tag"));
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(Error::parse(8, "missing WAVE tag"));
    }
    let mut format: Option<Format> = None;
    loop {
        let chunk_at = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        let body_at = r.pos;
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::parse(
                    chunk_at as u64 + 4,
                    format!("fmt chunk too short ({size} bytes)"),
                ));
            }
            let mut code = r.u16("format code")?;
            let channels = r.u16("channel count")?;
            let sample_rate = r.u32("sample rate")?;
            r.u32("byte rate")?;
            let block_align = r.u16("block align")?;
            let bits = r.u16("bits per sample")?;
            if code == FORMAT_EXTENSIBLE {
                if size < 40 {
                    return Err(Error::parse(body_at as u64, "extensible fmt chunk too short"));
                }
                r.take(8, "extension header")?;
                let sub_at = r.pos;
                code = r.u16("sub-format")?;
                if code != FORMAT_PCM && code != FORMAT_FLOAT {
                    return Err(Error::parse(sub_at as u64, format!("unsupported sub-format {code}")));
                }
            }
            if channels == 0 {
                return Err(Error::parse(body_at as u64 + 2, "zero channels"));
            }
            match (code, bits) {
                (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => {}
                _ => {
                    return Err(Error::parse(
                        body_at as u64,
                        format!("unsupported codec: format {code} with {bits} bits per sample"),
                    ))
                }
            }
            if block_align as usize != channels as usize * bits as usize / 8 {
                return Err(Error::parse(
                    body_at as u64 + 12,
                    format!("inconsistent block align {block_align}"),
                ));
            }
            format = Some(Format {
                code,
                channels,
                sample_rate,
                bits,
            });
            r.pos = body_at;
            r.take(size + size % 2, "fmt chunk")?;
        } else if id == b"data" {
            let fmt = format.ok_or_else(|| Error::parse(chunk_at as u64, "data chunk before fmt chunk"))?;
            let data = r.take(size, "sample data")?;
            let width = fmt.bits as usize / 8;
            let c = fmt.channels as usize;
            let frame = width * c;
            if !size.is_multiple_of(frame) {
                return Err(Error::parse(
                    body_at as u64,
                    format!("data size {size} is not a multiple of the {frame}-byte frame"),
                ));
            }
            let n = size / frame;
            let mut channels = vec![Vec::with_capacity(n); c];
            for (i, s) in data.chunks_exact(width).enumerate() {
                let v = if fmt.code == FORMAT_PCM {
                    i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
                } else {
                    let v = f32::from_le_bytes([s[0], s[1], s[2], s[3]]);
                    if !v.is_finite() {
                        return Err(Error::parse((body_at + i * width) as u64, "non-finite sample"));
                    }
                    v
                };
                channels[i % c].push(v);
            }
            return Ok(Audio {
                sample_rate: fmt.sample_rate,
                waveform: Waveform::new(channels)?,
            });
        } else {
            r.take(size + size % 2, "chunk body").map_err(|_| {
                Error::parse(
                    chunk_at as u64,
                    format!("chunk `{}` overruns the file", String::from_utf8_lossy(id)),
                )
            })?;
        }
    }
}

/// Encodes as 32-bit IEEE float with `fmt`, `fact` and `data` chunks.
pub fn encode(waveform: &Waveform<f32>, sample_rate: u32) -> Vec<u8> {
    let c = waveform.num_channels();
    let n = waveform.len();
    let data_len = (c * n * 4) as u32;
    let mut out = Vec::with_capacity(58 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(4 + 26 + 12 + 8 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&18u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * c as u32 * 4).to_le_bytes());
    out.extend_from_slice(&((c * 4) as u16).to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(b"fact");
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..n {
        for ch in waveform.channels() {
            out.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform<f32>, sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(waveform, sample_rate)).map_err(|e| Error::io(path, e))
}
