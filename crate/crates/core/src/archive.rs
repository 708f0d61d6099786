//! Model archives: every enrolled speaker plus the front-end settings that
//! produced the training features.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "DSPIDARC"  u32 version
//! repeated:   [u8; 4] tag   u64 payload length   payload
//! ```
//!
//! Sections are `FEAT` (feature config), `CONF` (training parameters as
//! config text), and one `SPKR` per speaker. Floats are stored as raw bits,
//! so a save/load/save cycle is byte-identical.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, WindowFunction};
use crate::gmm::GmmModel;
use crate::identify::SpeakerModel;
use crate::pct::PctMatrix;

pub const MAGIC: &[u8; 8] = b"DSPIDARC";
pub const FORMAT_VERSION: u32 = 1;
const TEXT_HEADER: &str = "disparity-id archive";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub feature_config: FeatureConfig,
    /// Training parameters as `key = value` text, kept for provenance.
    pub training_config: String,
    pub models: Vec<SpeakerModel>,
}

impl ModelArchive {
    pub fn new(feature_config: FeatureConfig, training_config: String, models: Vec<SpeakerModel>) -> Result<Self> {
        let archive = Self {
            feature_config,
            training_config,
            models,
        };
        archive.validate()?;
        Ok(archive)
    }

    /// All models share one dimension and the feature config's fingerprint,
    /// and speaker ids are unique.
    pub fn validate(&self) -> Result<()> {
        self.feature_config.validate()?;
        let fp = self.feature_config.fingerprint();
        let first = self
            .models
            .first()
            .ok_or_else(|| Error::Archive("archive holds no speaker models".into()))?;
        let dim = first.dim();
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.speaker_id.as_str()) {
                return Err(Error::Archive(format!("speaker '{}' stored twice", m.speaker_id)));
            }
            if m.dim() != dim || m.pct.dim() != dim {
                return Err(Error::Archive(format!(
                    "speaker '{}' has dimension {} but the archive uses {dim}",
                    m.speaker_id,
                    m.dim()
                )));
            }
            if m.feature_fingerprint != fp {
                return Err(Error::FingerprintMismatch {
                    model: m.feature_fingerprint,
                    features: fp,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        section(&mut out, b"FEAT", &encode_features(&self.feature_config));
        section(&mut out, b"CONF", self.training_config.as_bytes());
        for m in &self.models {
            section(&mut out, b"SPKR", &encode_speaker(m));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Archive("not a model archive (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Archive(format!(
                "archive format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut features = None;
        let mut training_config = None;
        let mut models = Vec::new();
        while !r.is_empty() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| Error::Archive("section too large".into()))?;
            let mut payload = Reader::new(r.take(len)?);
            match &tag {
                b"FEAT" => features = Some(decode_features(&mut payload)?),
                b"CONF" => {
                    let text = std::str::from_utf8(payload.take(len)?)
                        .map_err(|_| Error::Archive("CONF section is not UTF-8".into()))?;
                    training_config = Some(text.to_owned());
                }
                b"SPKR" => models.push(decode_speaker(&mut payload)?),
                other => {
                    return Err(Error::Archive(format!(
                        "unknown section '{}'",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
            if !payload.is_empty() {
                return Err(Error::Archive(format!(
                    "section '{}' has {} trailing bytes",
                    String::from_utf8_lossy(&tag),
                    payload.remaining()
                )));
            }
        }
        let feature_config = features.ok_or_else(|| Error::Archive("missing FEAT section".into()))?;
        let training_config = training_config.ok_or_else(|| Error::Archive("missing CONF section".into()))?;
        Self::new(feature_config, training_config, models)
    }

    /// Writes atomically: a temporary file in the target directory is
    /// renamed over `path` once complete.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Archive(msg) => Error::Archive(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Lossless line-oriented export; floats use shortest round-trip form.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let f = &self.feature_config;
        let mut out = String::new();
        let _ = writeln!(out, "{TEXT_HEADER} {FORMAT_VERSION}");
        let _ = writeln!(out, "window_size {:?}", f.window_size);
        let _ = writeln!(out, "window_shift {:?}", f.window_shift);
        let _ = writeln!(out, "num_filters {}", f.num_filters);
        let _ = writeln!(out, "num_ceps {}", f.num_ceps);
        let _ = writeln!(out, "min_freq {:?}", f.min_freq);
        let _ = writeln!(out, "max_freq {:?}", f.max_freq);
        let _ = writeln!(out, "use_delta {}", f.use_delta);
        let _ = writeln!(out, "pre_emphasis {:?}", f.pre_emphasis);
        let _ = writeln!(out, "window_function {}", f.window_function.name());
        for line in self.training_config.lines() {
            let _ = writeln!(out, "config {line}");
        }
        let floats = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for m in &self.models {
            let _ = writeln!(
                out,
                "speaker {} {} {:016x} {}",
                m.dim(),
                m.gmm.num_components(),
                m.feature_fingerprint,
                m.speaker_id
            );
            let _ = writeln!(out, "pct {}", floats(m.pct.as_row_major()));
            let _ = writeln!(out, "eigenvalues {}", floats(m.pct.eigenvalues()));
            let _ = writeln!(out, "weights {}", floats(m.gmm.weights()));
            for mean in m.gmm.means() {
                let _ = writeln!(out, "mean {}", floats(mean));
            }
            for var in m.gmm.variances() {
                let _ = writeln!(out, "variance {}", floats(var));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        TextParser::new(text).parse()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_bits().to_le_bytes());
    }
}

fn encode_features(f: &FeatureConfig) -> Vec<u8> {
    let mut out = Vec::new();
    put_f64s(&mut out, &[f.window_size, f.window_shift]);
    out.extend_from_slice(&(f.num_filters as u64).to_le_bytes());
    out.extend_from_slice(&(f.num_ceps as u64).to_le_bytes());
    put_f64s(&mut out, &[f.min_freq, f.max_freq]);
    out.push(f.use_delta as u8);
    put_f64s(&mut out, &[f.pre_emphasis]);
    let name = f.window_function.name().as_bytes();
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name);
    out
}

fn decode_features(r: &mut Reader<'_>) -> Result<FeatureConfig> {
    let window_size = r.f64()?;
    let window_shift = r.f64()?;
    let num_filters = r.usize()?;
    let num_ceps = r.usize()?;
    let min_freq = r.f64()?;
    let max_freq = r.f64()?;
    let use_delta = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Archive(format!("bad use_delta byte {b}"))),
    };
    let pre_emphasis = r.f64()?;
    let name = r.string()?;
    let window_function = WindowFunction::from_name(&name)
        .ok_or_else(|| Error::Archive(format!("unknown window function '{name}'")))?;
    Ok(FeatureConfig {
        window_size,
        window_shift,
        num_filters,
        num_ceps,
        min_freq,
        max_freq,
        use_delta,
        pre_emphasis,
        window_function,
    })
}

fn encode_speaker(m: &SpeakerModel) -> Vec<u8> {
    let mut out = Vec::new();
    let id = m.speaker_id.as_bytes();
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&m.feature_fingerprint.to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.gmm.num_components() as u32).to_le_bytes());
    put_f64s(&mut out, m.pct.as_row_major());
    put_f64s(&mut out, m.pct.eigenvalues());
    put_f64s(&mut out, m.gmm.weights());
    for mean in m.gmm.means() {
        put_f64s(&mut out, mean);
    }
    for var in m.gmm.variances() {
        put_f64s(&mut out, var);
    }
    out
}

fn decode_speaker(r: &mut Reader<'_>) -> Result<SpeakerModel> {
    let speaker_id = r.string()?;
    let feature_fingerprint = r.u64()?;
    let dim = r.u32()? as usize;
    let k = r.u32()? as usize;
    if dim == 0 || k == 0 {
        return Err(Error::Archive(format!("speaker '{speaker_id}' has an empty model")));
    }
    let pct = r.f64s(dim * dim)?;
    let eig = r.f64s(dim)?;
    let weights = r.f64s(k)?;
    let means = (0..k).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
    let variances = (0..k).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
    build_speaker(speaker_id, feature_fingerprint, dim, pct, eig, weights, means, variances)
}

#[allow(clippy::too_many_arguments)]
fn build_speaker(
    speaker_id: String,
    feature_fingerprint: u64,
    dim: usize,
    pct: Vec<f64>,
    eig: Vec<f64>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
) -> Result<SpeakerModel> {
    let wrap = |e: Error| Error::Archive(format!("speaker '{speaker_id}': {e}"));
    let pct = PctMatrix::from_parts(dim, pct, eig).map_err(wrap)?;
    let gmm = GmmModel::new(weights, means, variances).map_err(wrap)?;
    if gmm.dim() != dim {
        return Err(wrap(Error::DimensionMismatch { expected: dim, found: gmm.dim() }));
    }
    Ok(SpeakerModel {
        speaker_id,
        gmm,
        pct,
        feature_fingerprint,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Archive(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Archive("count out of range".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.saturating_mul(8) > self.remaining() {
            return Err(Error::Archive(format!("truncated: {n} values do not fit")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Archive("string is not UTF-8".into()))
    }
}

struct TextParser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> TextParser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn err(line: usize, msg: impl std::fmt::Display) -> Error {
        Error::Archive(format!("text line {}: {msg}", line + 1))
    }

    fn next_field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self
            .lines
            .next()
            .ok_or_else(|| Error::Archive(format!("text ends before '{key}'")))?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
            .ok_or_else(|| Self::err(n, format!("expected '{key}'")))?;
        Ok((n, rest))
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, v) = self.next_field(key)?;
        v.trim().parse().map_err(|_| Self::err(n, format!("bad value for {key}")))
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let (n, v) = self.next_field(key)?;
        let vals = v
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Self::err(n, format!("bad number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(Self::err(n, format!("{key} has {} values, expected {expected}", vals.len())));
        }
        Ok(vals)
    }

    fn parse(mut self) -> Result<ModelArchive> {
        let (n, version) = self.next_field(TEXT_HEADER)?;
        if version.trim() != FORMAT_VERSION.to_string() {
            return Err(Self::err(n, format!("unsupported version '{version}'")));
        }
        let window_size = self.value("window_size")?;
        let window_shift = self.value("window_shift")?;
        let num_filters = self.value("num_filters")?;
        let num_ceps = self.value("num_ceps")?;
        let min_freq = self.value("min_freq")?;
        let max_freq = self.value("max_freq")?;
        let use_delta = self.value("use_delta")?;
        let pre_emphasis = self.value("pre_emphasis")?;
        let (n, wf) = self.next_field("window_function")?;
        let window_function = WindowFunction::from_name(wf.trim())
            .ok_or_else(|| Self::err(n, format!("unknown window function '{wf}'")))?;
        let feature_config = FeatureConfig {
            window_size,
            window_shift,
            num_filters,
            num_ceps,
            min_freq,
            max_freq,
            use_delta,
            pre_emphasis,
            window_function,
        };
        let mut training_config = String::new();
        while let Some((_, line)) = self.lines.peek() {
            let Some(rest) = line.strip_prefix("config ") else { break };
            training_config.push_str(rest);
            training_config.push('\n');
            self.lines.next();
        }
        let mut models = Vec::new();
        while self.lines.peek().is_some() {
            let (n, header) = self.next_field("speaker")?;
            let mut parts = header.splitn(4, ' ');
            let mut field = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| Self::err(n, format!("speaker line lacks {what}")))
            };
            let dim: usize = field("dimension")?.parse().map_err(|_| Self::err(n, "bad dimension"))?;
            let k: usize = field("component count")?.parse().map_err(|_| Self::err(n, "bad component count"))?;
            let fp = u64::from_str_radix(field("fingerprint")?, 16).map_err(|_| Self::err(n, "bad fingerprint"))?;
            let id = field("speaker id")?.to_owned();
            let pct = self.floats("pct", dim * dim)?;
            let eig = self.floats("eigenvalues", dim)?;
            let weights = self.floats("weights", k)?;
            let means = (0..k).map(|_| self.floats("mean", dim)).collect::<Result<Vec<_>>>()?;
            let variances = (0..k).map(|_| self.floats("variance", dim)).collect::<Result<Vec<_>>>()?;
            models.push(build_speaker(id, fp, dim, pct, eig, weights, means, variances)?);
        }
        ModelArchive::new(feature_config, training_config, models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_archive() -> ModelArchive {
        let fc = FeatureConfig::default();
        let fp = fc.fingerprint();
        let d = fc.feature_dim();
        let model = |id: &str, shift: f64| SpeakerModel {
            speaker_id: id.into(),
            gmm: GmmModel::new(
                vec![0.25, 0.75],
                vec![vec![shift; d], vec![-shift / 3.0; d]],
                vec![vec![0.1 + shift; d], vec![1.0 / 3.0; d]],
            )
            .unwrap(),
            pct: PctMatrix::identity(d),
            feature_fingerprint: fp,
        };
        ModelArchive::new(fc, "measure = ld\n".into(), vec![model("alice", 0.7), model("bob smith", 1.1)]).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let a = sample_archive();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = ModelArchive::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let a = sample_archive();
        let back = ModelArchive::from_text(&a.to_text()).unwrap();
        assert_eq!(back.to_bytes(), a.to_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample_archive().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelArchive::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(ModelArchive::from_bytes(&bad).unwrap_err().to_string().contains("version 9"));
        assert!(ModelArchive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(ModelArchive::from_bytes(&bytes[..12]).is_err());
    }

    #[test]
    fn rejects_inconsistent_models() {
        let mut a = sample_archive();
        a.models[1].feature_fingerprint ^= 1;
        assert!(a.validate().is_err());
        let mut a = sample_archive();
        a.models[1].speaker_id = "alice".into();
        assert!(a.validate().is_err());
        let mut a = sample_archive();
        a.models.clear();
        assert!(a.validate().is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.dsp");
        let a = sample_archive();
        a.save(&path).unwrap();
        a.save(&path).unwrap();
        assert_eq!(ModelArchive::load(&path).unwrap(), a);
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
