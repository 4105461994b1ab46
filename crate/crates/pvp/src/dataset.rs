//! Append-only episode container with a JSON manifest.
//!
//! `episodes.bin` starts with a 16-byte header (`PVPEPIS\0`, `u32` schema
//! version, `u32` zero) followed by records. All integers and floats are
//! little endian. A record is
//!
//! ```text
//! u32 payload length | u32 CRC-32 of payload | payload
//! ```
//!
//! and the payload is
//!
//! ```text
//! u32 action count T | u32 frame count (T + 1) | u32 raster length F
//! u8 flags (1 noise-aug, 2 ccg, 4 tr, 8 success) | u8 source | u8 scenario | u8 0
//! u64 seed | u32 regrasps | u32 target
//! 7 x f64 start pose (qw qx qy qz tx ty tz) | 7 x f64 grasp offset
//! (T + 1) x (F x f32 raster, 7 x f32 proprio)
//! T x (6 x f32 delta, u8 gripper)
//! ```

use crate::error::{Error, Result};
use pvp_core::collect::{Action, Episode, EpisodeMeta, Source};
use pvp_core::se3::Pose;
use pvp_core::sim::{ObservationFrame, Scenario, PROPRIO_LEN};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAGIC: [u8; 8] = *b"PVPEPIS\0";
pub const HEADER_LEN: u64 = 16;
pub const DATA_FILE: &str = "episodes.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

const FIXED_LEN: usize = 4 * 3 + 4 + 8 + 4 + 4 + 56 + 56;
const ACTION_BYTES: usize = 6 * 4 + 1;

const NOISE_AUG: u8 = 1;
const CCG: u8 = 2;
const TR: u8 = 4;
const SUCCESS: u8 = 8;

pub fn file_header() -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[..8].copy_from_slice(&MAGIC);
    h[8..12].copy_from_slice(&SCHEMA_VERSION.to_le_bytes());
    h
}

/// Serializes one episode as a complete record.
pub fn encode_record(e: &Episode) -> Result<Vec<u8>> {
    if e.is_empty() {
        return Err(pvp_core::Error::Episode("episode has no tuples".into()).into());
    }
    if e.frames.len() != e.actions.len() + 1 {
        return Err(pvp_core::Error::Episode(format!("{} frames for {} actions", e.frames.len(), e.actions.len())).into());
    }
    let f = e.frames[0].raster.len();
    if e.frames.iter().any(|fr| fr.raster.len() != f) {
        return Err(pvp_core::Error::Episode("frames differ in size".into()).into());
    }
    let m = &e.meta;
    let mut p = Vec::with_capacity(FIXED_LEN + e.frames.len() * (f + PROPRIO_LEN) * 4 + e.actions.len() * ACTION_BYTES);
    p.extend_from_slice(&(e.actions.len() as u32).to_le_bytes());
    p.extend_from_slice(&(e.frames.len() as u32).to_le_bytes());
    p.extend_from_slice(&(f as u32).to_le_bytes());
    let flags = (m.noise_aug as u8 * NOISE_AUG) | (m.ccg as u8 * CCG) | (m.tr as u8 * TR) | (m.success as u8 * SUCCESS);
    p.extend_from_slice(&[flags, m.source.code(), m.scenario.code(), 0]);
    p.extend_from_slice(&m.seed.to_le_bytes());
    p.extend_from_slice(&m.regrasps.to_le_bytes());
    p.extend_from_slice(&m.target.to_le_bytes());
    p.extend_from_slice(&m.start.to_le_bytes());
    p.extend_from_slice(&m.grasp_offset.to_le_bytes());
    for fr in &e.frames {
        for v in fr.raster.iter().chain(&fr.proprio) {
            p.extend_from_slice(&v.to_le_bytes());
        }
    }
    for a in &e.actions {
        for v in a.delta {
            p.extend_from_slice(&v.to_le_bytes());
        }
        p.push(a.gripper as u8);
    }
    let mut out = Vec::with_capacity(8 + p.len());
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
    out.extend_from_slice(&p);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn pose(&mut self) -> Option<Pose> {
        self.take(56).map(|b| Pose::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a checksummed payload.
pub fn decode_payload(payload: &[u8], offset: u64) -> Result<Episode> {
    let bad = |reason: &str| Error::Integrity { offset, reason: reason.to_string() };
    let mut c = Cursor { buf: payload, at: 0 };
    let short = || bad("payload shorter than its header");
    let t = c.u32().ok_or_else(short)? as usize;
    let nf = c.u32().ok_or_else(short)? as usize;
    let f = c.u32().ok_or_else(short)? as usize;
    if t == 0 || nf != t + 1 {
        return Err(bad("inconsistent frame and action counts"));
    }
    let expect = FIXED_LEN + nf * (f + PROPRIO_LEN) * 4 + t * ACTION_BYTES;
    if payload.len() != expect {
        return Err(bad(&format!("payload is {} bytes, header implies {expect}", payload.len())));
    }
    let b = c.take(4).ok_or_else(short)?;
    let (flags, source, scenario) = (b[0], b[1], b[2]);
    let source = Source::from_code(source).ok_or_else(|| bad("unknown source code"))?;
    let scenario = Scenario::from_code(scenario).ok_or_else(|| bad("unknown scenario code"))?;
    let seed = c.u64().ok_or_else(short)?;
    let regrasps = c.u32().ok_or_else(short)?;
    let target = c.u32().ok_or_else(short)?;
    let start = c.pose().ok_or_else(short)?;
    let grasp_offset = c.pose().ok_or_else(short)?;
    let mut frames = Vec::with_capacity(nf);
    for _ in 0..nf {
        let raster: Vec<f32> = (0..f).map(|_| c.f32().unwrap()).collect();
        let proprio: [f32; PROPRIO_LEN] = std::array::from_fn(|_| c.f32().unwrap());
        frames.push(ObservationFrame { raster, proprio });
    }
    let mut actions = Vec::with_capacity(t);
    for _ in 0..t {
        let delta: [f32; 6] = std::array::from_fn(|_| c.f32().unwrap());
        let g = c.take(1).unwrap()[0];
        if g > 1 {
            return Err(bad("gripper byte is not 0 or 1"));
        }
        actions.push(Action { delta, gripper: g == 1 });
    }
    let meta = EpisodeMeta {
        seed,
        scenario,
        source,
        noise_aug: flags & NOISE_AUG != 0,
        ccg: flags & CCG != 0,
        tr: flags & TR != 0,
        regrasps,
        success: flags & SUCCESS != 0,
        target,
        start,
        grasp_offset,
    };
    Ok(Episode { meta, frames, actions })
}

/// Appends `e` to `sink`, positioned at byte `offset`; returns the offset.
pub fn write_episode<W: Write>(sink: &mut W, offset: u64, e: &Episode) -> Result<u64> {
    let rec = encode_record(e)?;
    sink.write_all(&rec).map_err(|source| Error::Write { offset, source })?;
    Ok(offset)
}

/// Reads the record starting at `offset`.
pub fn read_episode<R: Read + Seek>(src: &mut R, offset: u64) -> Result<Episode> {
    let len = src.seek(SeekFrom::End(0)).map_err(|source| Error::Write { offset, source })?;
    if offset < HEADER_LEN || offset + 8 > len {
        return Err(Error::Range { offset, len });
    }
    src.seek(SeekFrom::Start(offset)).map_err(|source| Error::Write { offset, source })?;
    let mut head = [0u8; 8];
    src.read_exact(&mut head).map_err(|source| Error::Write { offset, source })?;
    let n = u32::from_le_bytes(head[..4].try_into().unwrap()) as u64;
    let crc = u32::from_le_bytes(head[4..].try_into().unwrap());
    if offset + 8 + n > len {
        return Err(Error::Integrity { offset, reason: format!("record of {n} bytes runs past end of data") });
    }
    let mut payload = vec![0u8; n as usize];
    src.read_exact(&mut payload).map_err(|source| Error::Write { offset, source })?;
    if crc32fast::hash(&payload) != crc {
        return Err(Error::Integrity { offset, reason: "checksum mismatch".into() });
    }
    decode_payload(&payload, offset)
}

/// Collection flags shared by the episodes of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub source: Source,
    pub noise_aug: bool,
    pub ccg: bool,
    pub tr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub offset: u64,
    pub seed: u64,
    pub length: usize,
    pub success: bool,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub data_file: String,
    pub count: usize,
    pub flags: Flags,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    pub records: Vec<RecordInfo>,
}

impl Manifest {
    pub fn offsets(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.offset)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.seed)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema version {} is not supported", self.schema_version));
        }
        if self.count != self.records.len() {
            return Err(format!("count {} but {} records", self.count, self.records.len()));
        }
        if self.records.windows(2).any(|w| w[0].offset >= w[1].offset) {
            return Err("offsets not strictly increasing".into());
        }
        Ok(())
    }
}

/// Streams episodes into `dir/episodes.bin`; `finish` writes the manifest.
pub struct DatasetWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    offset: u64,
    manifest: Manifest,
}

impl DatasetWriter {
    pub fn create(dir: &Path, flags: Flags, config_hash: String, created_unix: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(DATA_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&file_header()).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            data_file: DATA_FILE.into(),
            count: 0,
            flags,
            config_hash,
            created_unix,
            records: Vec::new(),
        };
        Ok(DatasetWriter { dir: dir.to_path_buf(), out, offset: HEADER_LEN, manifest })
    }

    pub fn append(&mut self, e: &Episode) -> Result<u64> {
        let rec = encode_record(e)?;
        let at = self.offset;
        self.out.write_all(&rec).map_err(|source| Error::Write { offset: at, source })?;
        self.offset += rec.len() as u64;
        let m = &e.meta;
        self.manifest.records.push(RecordInfo {
            offset: at,
            seed: m.seed,
            length: e.len(),
            success: m.success,
            flags: Flags { source: m.source, noise_aug: m.noise_aug, ccg: m.ccg, tr: m.tr },
        });
        self.manifest.count += 1;
        Ok(at)
    }

    pub fn finish(mut self) -> Result<Manifest> {
        let data = self.dir.join(DATA_FILE);
        self.out.flush().map_err(|e| Error::io(&data, e))?;
        let path = self.dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// A dataset directory opened for reading.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        manifest.validate().map_err(|reason| Error::Format { path: path.clone(), reason })?;
        let data = dir.join(&manifest.data_file);
        let mut head = [0u8; HEADER_LEN as usize];
        File::open(&data)
            .and_then(|mut f| f.read_exact(&mut head))
            .map_err(|e| Error::io(&data, e))?;
        if head[..8] != MAGIC {
            return Err(Error::Format { path: data, reason: "not an episode file".into() });
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != SCHEMA_VERSION {
            return Err(Error::Format { path: data, reason: format!("schema version {version} is not supported") });
        }
        Ok(Dataset { dir: dir.to_path_buf(), manifest })
    }

    fn reader(&self) -> Result<BufReader<File>> {
        let path = self.dir.join(&self.manifest.data_file);
        Ok(BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?))
    }

    /// Random access to episode `k`.
    pub fn read(&self, k: usize) -> Result<Episode> {
        let rec = self.manifest.records.get(k).ok_or(Error::Range { offset: k as u64, len: self.manifest.count as u64 })?;
        read_episode(&mut self.reader()?, rec.offset).map_err(|e| name_record(e, k))
    }

    /// All episodes in file order.
    pub fn load(&self) -> Result<Vec<Episode>> {
        let mut r = self.reader()?;
        self.manifest.records.iter().enumerate().map(|(k, rec)| read_episode(&mut r, rec.offset).map_err(|e| name_record(e, k))).collect()
    }

    /// The first `n` episodes.
    pub fn load_first(&self, n: usize) -> Result<Vec<Episode>> {
        let mut r = self.reader()?;
        self.manifest
            .records
            .iter()
            .take(n)
            .enumerate()
            .map(|(k, rec)| read_episode(&mut r, rec.offset).map_err(|e| name_record(e, k)))
            .collect()
    }
}

fn name_record(e: Error, k: usize) -> Error {
    match e {
        Error::Integrity { offset, reason } => Error::Integrity { offset, reason: format!("record {k}: {reason}") },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

impl LengthStats {
    pub fn of(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().sum::<usize>() as f64 / n;
        let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        Some(LengthStats {
            count: lengths.len(),
            mean,
            std: var.sqrt(),
            min: *lengths.iter().min().unwrap(),
            max: *lengths.iter().max().unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub length: LengthStats,
    pub successes: usize,
    /// Keyed by `source[+noise][+ccg][+tr]`.
    pub by_flags: BTreeMap<String, LengthStats>,
}

fn flag_key(f: &Flags) -> String {
    let mut k = match f.source {
        Source::Pvp => "pvp".to_string(),
        Source::Kinesthetic => "kinesthetic".to_string(),
    };
    for (on, name) in [(f.noise_aug, "+noise"), (f.ccg, "+ccg"), (f.tr, "+tr")] {
        if on {
            k.push_str(name);
        }
    }
    k
}

/// Length statistics from the manifest alone.
pub fn dataset_stats(m: &Manifest) -> Result<DatasetStats> {
    let lengths: Vec<usize> = m.records.iter().map(|r| r.length).collect();
    let length = LengthStats::of(&lengths).ok_or_else(|| Error::Config("dataset has no episodes".into()))?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in &m.records {
        groups.entry(flag_key(&r.flags)).or_default().push(r.length);
    }
    let by_flags = groups.into_iter().map(|(k, v)| (k, LengthStats::of(&v).unwrap())).collect();
    Ok(DatasetStats { length, successes: m.records.iter().filter(|r| r.success).count(), by_flags })
}
