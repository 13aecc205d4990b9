//! Line-oriented dataset manifest.
//!
//! ```text
//! # dllrnn manifest v1
//! id=0 mixture=ex00000_mix.wav direct=ex00000_direct.wav room=4.2x3.7x2.9 absorption=0.21 snr_db=-3.5 noise_sources=4 seed=17
//! ```
//!
//! Fields are tab-separated (shown as spaces above) `key=value` pairs in
//! any order. Paths are relative to the manifest's directory unless
//! absolute. Blank lines and lines starting with `#` are ignored, except
//! that the first line must be the header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "# dllrnn manifest v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture: PathBuf,
    pub direct: PathBuf,
    pub room: [f64; 3],
    pub absorption: f64,
    pub snr_db: f64,
    pub noise_sources: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl ManifestRecord {
    fn to_line(&self) -> String {
        let mut s = String::new();
        let [l, w, h] = self.room;
        write!(
            s,
            "id={}\tmixture={}\tdirect={}\troom={l}x{w}x{h}\tabsorption={}\tsnr_db={}\tnoise_sources={}\tseed={}",
            self.id,
            self.mixture.display(),
            self.direct.display(),
            self.absorption,
            self.snr_db,
            self.noise_sources,
            self.seed
        )
        .unwrap();
        s
    }

    fn parse_line(line: &str, offset: u64) -> Result<Self> {
        let mut id = None;
        let mut mixture = None;
        let mut direct = None;
        let mut room = None;
        let mut absorption = None;
        let mut snr_db = None;
        let mut noise_sources = None;
        let mut seed = None;
        let mut col = 0u64;
        for field in line.split('\t') {
            let at = offset + col;
            col += field.len() as u64 + 1;
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(at, format!("field `{field}` is not key=value")))?;
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(at, format!("`{key}` has invalid number `{v}`")))
            };
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>()
                    .map_err(|_| Error::parse(at, format!("`{key}` has invalid integer `{v}`")))
            };
            let slot_filled = match key {
                "id" => id.replace(value.to_string()).is_some(),
                "mixture" => mixture.replace(PathBuf::from(value)).is_some(),
                "direct" => direct.replace(PathBuf::from(value)).is_some(),
                "room" => {
                    let parts = value.split('x').map(num).collect::<Result<Vec<_>>>()?;
                    let dims: [f64; 3] = parts.try_into().map_err(|_| Error::parse(at, "room must be LxWxH"))?;
                    room.replace(dims).is_some()
                }
                "absorption" => absorption.replace(num(value)?).is_some(),
                "snr_db" => snr_db.replace(num(value)?).is_some(),
                "noise_sources" => noise_sources.replace(int(value)? as usize).is_some(),
                "seed" => seed.replace(int(value)?).is_some(),
                _ => return Err(Error::parse(at, format!("unknown field `{key}`"))),
            };
            if slot_filled {
                return Err(Error::parse(at, format!("duplicate field `{key}`")));
            }
        }
        let missing = |k: &str| Error::parse(offset, format!("record is missing `{k}`"));
        Ok(Self {
            id: id.ok_or_else(|| missing("id"))?,
            mixture: mixture.ok_or_else(|| missing("mixture"))?,
            direct: direct.ok_or_else(|| missing("direct"))?,
            room: room.ok_or_else(|| missing("room"))?,
            absorption: absorption.ok_or_else(|| missing("absorption"))?,
            snr_db: snr_db.ok_or_else(|| missing("snr_db"))?,
            noise_sources: noise_sources.ok_or_else(|| missing("noise_sources"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().unwrap_or("");
        if header.trim_end() != MANIFEST_HEADER {
            return Err(Error::parse(0, format!("expected header `{MANIFEST_HEADER}`")));
        }
        let mut offset = header.len() as u64;
        let mut records = Vec::new();
        for raw in lines {
            let line = raw.trim_end_matches(['\n', '\r']);
            if !line.trim().is_empty() && !line.starts_with('#') {
                records.push(ManifestRecord::parse_line(line, offset)?);
            }
            offset += raw.len() as u64;
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Resolves a record path against the manifest's directory.
pub fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest_path.parent().unwrap_or(Path::new("")).join(p)
}
