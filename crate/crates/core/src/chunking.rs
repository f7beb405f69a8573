//! Chunk length from the IO budget, fixed-length chunk plans and the chunk
//! manifest.
//!
//! A training step of `B` clips at average bitrate `ρ` over chunks of length
//! `T` reads `B·ρ·T` bits; the disk delivers `S_r·Δ` bytes per step. Bitrates
//! are bits per second, read speeds are bytes per second.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Slack applied when no margin is given.
pub const DEFAULT_SAFETY_MARGIN: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("invalid chunking configuration: {0}")]
    Config(String),
    #[error("span [{start}, {end}) is outside source `{source_id}` (duration {duration}s)")]
    Range {
        source_id: String,
        start: f64,
        end: f64,
        duration: f64,
    },
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("manifest {path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Clips per training step.
    pub batch_size: f64,
    /// Average stream bitrate, bits/sec.
    pub avg_bitrate: f64,
    /// Sustained read speed, bytes/sec.
    pub read_speed: f64,
    /// Time of one training step, sec.
    pub step_time: f64,
}

impl HardwareProfile {
    fn validate(&self) -> Result<(), ChunkError> {
        let fields = [
            ("batch_size", self.batch_size),
            ("avg_bitrate", self.avg_bitrate),
            ("read_speed", self.read_speed),
            ("step_time", self.step_time),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ChunkError::Config(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Bits the disk can deliver during one step.
    pub fn bits_per_step(&self) -> f64 {
        self.read_speed * 8.0 * self.step_time
    }
}

/// Longest chunk length, in seconds, for which one step's reads fit the disk
/// budget, scaled by `safety_margin`.
pub fn solve_chunk_length(profile: &HardwareProfile, safety_margin: f64) -> Result<f64, ChunkError> {
    profile.validate()?;
    if !(safety_margin > 0.0 && safety_margin <= 1.0) {
        return Err(ChunkError::Config(format!(
            "safety margin must lie in (0, 1], got {safety_margin}"
        )));
    }
    Ok(safety_margin * profile.bits_per_step() / (profile.batch_size * profile.avg_bitrate))
}

/// Whole-second chunk lengths derived from a solved bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChunkLengthAdvice {
    pub t_max: f64,
    /// Bound rounded to the nearest second.
    pub nearest_sec: u64,
    /// Largest whole-second length that still honors the bound.
    pub practical_sec: u64,
}

impl ChunkLengthAdvice {
    pub fn from_bound(t_max: f64) -> Self {
        Self {
            t_max,
            nearest_sec: t_max.round_ties_even() as u64,
            practical_sec: t_max.floor() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub source_id: String,
    pub chunk_length: f64,
    pub duration: f64,
    /// `[start, end)` seconds per chunk, in order.
    pub boundaries: Vec<(f64, f64)>,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }
}

/// Number of `chunk_length` chunks needed to tile `duration`; ratios within
/// 1e-9 of an integer count as exact fits.
pub fn chunk_count(duration: f64, chunk_length: f64) -> usize {
    let ratio = duration / chunk_length;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Tiles `[0, duration)` with fixed-length chunks. The final chunk keeps
/// whatever remains.
pub fn plan_chunks(
    source_id: impl Into<String>,
    duration: f64,
    chunk_length: f64,
) -> Result<ChunkPlan, ChunkError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(ChunkError::Config(format!("duration must be positive, got {duration}")));
    }
    if !(chunk_length.is_finite() && chunk_length > 0.0) {
        return Err(ChunkError::Config(format!(
            "chunk length must be positive, got {chunk_length}"
        )));
    }
    let count = chunk_count(duration, chunk_length);
    let boundaries = (0..count)
        .map(|k| {
            let start = k as f64 * chunk_length;
            let end = if k + 1 == count {
                duration
            } else {
                (k + 1) as f64 * chunk_length
            };
            (start, end)
        })
        .collect();
    Ok(ChunkPlan {
        source_id: source_id.into(),
        chunk_length,
        duration,
        boundaries,
    })
}

/// Leading manifest line: how the chunks were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub chunk_length: f64,
    pub mode: String,
    /// Codec toolchain and the argument template used for every chunk.
    pub toolchain: String,
    pub args_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkRecord {
    pub source_id: String,
    pub chunk_index: u32,
    pub chunk_path: PathBuf,
    /// Source time covered by the chunk, seconds.
    pub start_sec: f64,
    pub end_sec: f64,
    pub width: u32,
    pub height: u32,
    /// Bits per second.
    pub avg_bitrate: f64,
    pub keyframe_aligned: bool,
    /// Actual cut minus planned cut, seconds. Non-zero only for remuxed
    /// chunks whose boundary had no keyframe.
    #[serde(default)]
    pub drift_sec: f64,
}

impl ChunkRecord {
    pub fn duration(&self) -> f64 {
        self.end_sec - self.start_sec
    }
}

/// One piece of a located span, in chunk-local seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSpan {
    pub chunk_path: PathBuf,
    pub chunk_index: u32,
    pub local_start: f64,
    pub local_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkManifest {
    pub header: ManifestHeader,
    records: Vec<ChunkRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ManifestHeader),
    Chunk(ChunkRecord),
}

impl ChunkManifest {
    pub fn new(header: ManifestHeader, records: Vec<ChunkRecord>) -> Self {
        let mut manifest = Self {
            header,
            records: Vec::new(),
        };
        manifest.extend(records);
        manifest
    }

    pub fn records(&self) -> &[ChunkRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Merges records, keeping `(source_id, chunk_index)` order. A record
    /// replaces an existing one with the same key.
    pub fn extend(&mut self, records: impl IntoIterator<Item = ChunkRecord>) {
        let mut merged: BTreeMap<(String, u32), ChunkRecord> = self
            .records
            .drain(..)
            .map(|r| ((r.source_id.clone(), r.chunk_index), r))
            .collect();
        for r in records {
            merged.insert((r.source_id.clone(), r.chunk_index), r);
        }
        self.records = merged.into_values().collect();
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.source_id.as_str()).collect()
    }

    pub fn chunks_of<'a>(&'a self, source_id: &'a str) -> impl Iterator<Item = &'a ChunkRecord> + 'a {
        self.records.iter().filter(move |r| r.source_id == source_id)
    }

    pub fn source_duration(&self, source_id: &str) -> Option<f64> {
        self.chunks_of(source_id).map(|r| r.end_sec).reduce(f64::max)
    }

    /// Checks dense chunk indices and gap-free tiling per source.
    pub fn validate(&self) -> Result<(), String> {
        for source in self.sources() {
            let mut expected_start = 0.0;
            for (i, r) in self.chunks_of(source).enumerate() {
                if r.chunk_index as usize != i {
                    return Err(format!("{source}: chunk index {} is not dense", r.chunk_index));
                }
                if (r.start_sec - expected_start).abs() > 1e-6 {
                    return Err(format!(
                        "{source}: chunk {i} starts at {} instead of {expected_start}",
                        r.start_sec
                    ));
                }
                if r.end_sec <= r.start_sec {
                    return Err(format!("{source}: chunk {i} is empty"));
                }
                expected_start = r.end_sec;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<(), ChunkError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), ChunkError> {
        let mut emit = |line: &Line| -> Result<(), ChunkError> {
            serde_json::to_writer(&mut *out, line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        emit(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            emit(&Line::Chunk(r.clone()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ChunkError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let err = |line: usize, message: String| ChunkError::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line).map_err(|e| err(i + 1, e.to_string()))? {
                Line::Header(h) if header.is_none() && i == 0 => {
                    if h.schema_version != MANIFEST_SCHEMA_VERSION {
                        return Err(err(
                            i + 1,
                            format!(
                                "schema version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                                h.schema_version
                            ),
                        ));
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(err(i + 1, "header must be the first line".into())),
                Line::Chunk(r) => records.push(r),
            }
        }
        let header = header.ok_or_else(|| err(1, "missing header line".into()))?;
        let manifest = Self::new(header, records);
        manifest.validate().map_err(|m| err(0, m))?;
        Ok(manifest)
    }

    /// Chunks covering `[t_start, t_end)` of a source, with times remapped
    /// into each chunk. A span inside one chunk yields exactly that chunk.
    pub fn locate(&self, source_id: &str, t_start: f64, t_end: f64) -> Result<Vec<ChunkSpan>, ChunkError> {
        let duration = self
            .source_duration(source_id)
            .ok_or_else(|| ChunkError::UnknownSource(source_id.to_string()))?;
        if !(t_start >= 0.0 && t_start < t_end && t_end <= duration + 1e-9) {
            return Err(ChunkError::Range {
                source_id: source_id.to_string(),
                start: t_start,
                end: t_end,
                duration,
            });
        }
        Ok(self
            .chunks_of(source_id)
            .filter(|r| r.start_sec < t_end && r.end_sec > t_start)
            .map(|r| ChunkSpan {
                chunk_path: r.chunk_path.clone(),
                chunk_index: r.chunk_index,
                local_start: t_start.max(r.start_sec) - r.start_sec,
                local_end: t_end.min(r.end_sec) - r.start_sec,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MB: f64 = 1e6;

    fn paper_profile() -> HardwareProfile {
        HardwareProfile {
            batch_size: 1024.0,
            avg_bitrate: 1.0 * MB,
            read_speed: 500.0 * MB,
            step_time: 4.0,
        }
    }

    #[test]
    fn worked_example() {
        let t = solve_chunk_length(&paper_profile(), 1.0).unwrap();
        assert_eq!(t, 15.625);
        let advice = ChunkLengthAdvice::from_bound(t);
        assert_eq!(advice.nearest_sec, 16);
        assert_eq!(advice.practical_sec, 15);
        let with_margin = solve_chunk_length(&paper_profile(), 0.96).unwrap();
        assert!((with_margin - 15.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_batch_halves_length() {
        let base = solve_chunk_length(&paper_profile(), 1.0).unwrap();
        let doubled = HardwareProfile {
            batch_size: 2048.0,
            ..paper_profile()
        };
        assert_eq!(solve_chunk_length(&doubled, 1.0).unwrap(), base / 2.0);
    }

    #[test]
    fn rejects_non_positive_inputs() {
        for bad in [
            HardwareProfile { batch_size: 0.0, ..paper_profile() },
            HardwareProfile { avg_bitrate: -1.0, ..paper_profile() },
            HardwareProfile { read_speed: f64::NAN, ..paper_profile() },
            HardwareProfile { step_time: 0.0, ..paper_profile() },
        ] {
            assert!(matches!(solve_chunk_length(&bad, 1.0), Err(ChunkError::Config(_))));
        }
        assert!(solve_chunk_length(&paper_profile(), 0.0).is_err());
        assert!(solve_chunk_length(&paper_profile(), 1.5).is_err());
    }

    #[test]
    fn plan_examples() {
        let plan = plan_chunks("v", 47.0, 15.0).unwrap();
        assert_eq!(
            plan.boundaries,
            vec![(0.0, 15.0), (15.0, 30.0), (30.0, 45.0), (45.0, 47.0)]
        );
        assert_eq!(plan_chunks("v", 15.0, 15.0).unwrap().boundaries, vec![(0.0, 15.0)]);
        let hours = plan_chunks("ego", 3670.0 * 3600.0, 15.0).unwrap();
        assert_eq!(hours.len(), 880_800);
    }

    fn manifest_for(duration: f64, chunk_length: f64) -> ChunkManifest {
        let plan = plan_chunks("src", duration, chunk_length).unwrap();
        let records = plan
            .boundaries
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| ChunkRecord {
                source_id: "src".into(),
                chunk_index: i as u32,
                chunk_path: format!("src_{i:05}.mp4").into(),
                start_sec: s,
                end_sec: e,
                width: 320,
                height: 240,
                avg_bitrate: 1e6,
                keyframe_aligned: true,
                drift_sec: 0.0,
            })
            .collect();
        ChunkManifest::new(
            ManifestHeader {
                schema_version: MANIFEST_SCHEMA_VERSION,
                chunk_length,
                mode: "reencode".into(),
                toolchain: "test".into(),
                args_template: String::new(),
            },
            records,
        )
    }

    #[test]
    fn locate_examples() {
        let m = manifest_for(45.0, 15.0);
        let spans = m.locate("src", 16.2, 17.2).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].chunk_index, 1);
        assert!((spans[0].local_start - 1.2).abs() < 1e-9);
        assert!((spans[0].local_end - 2.2).abs() < 1e-9);

        let straddle = m.locate("src", 14.5, 15.5).unwrap();
        assert_eq!(
            straddle.iter().map(|s| s.chunk_index).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(matches!(m.locate("src", 40.0, 46.0), Err(ChunkError::Range { .. })));
        assert!(matches!(m.locate("other", 0.0, 1.0), Err(ChunkError::UnknownSource(_))));
    }

    // Oracle: draw 1 s clip starts directly and count boundary crossings.
    #[test]
    fn straddle_fraction_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let m = manifest_for(15.0 * 100.0, 15.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mut straddles = 0;
        for _ in 0..n {
            let start: f64 = rng.random_range(0.0..(1500.0 - 1.0));
            if m.locate("src", start, start + 1.0).unwrap().len() > 1 {
                straddles += 1;
            }
        }
        // 99 interior boundaries over 1499 s of start positions.
        let expected = 99.0 / 1499.0;
        let observed = straddles as f64 / n as f64;
        assert!((observed - expected).abs() < 0.006, "{observed} vs {expected}");
        assert!((observed - 1.0 / 15.0).abs() < 0.006);
    }

    #[test]
    fn manifest_round_trip_and_sorting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut m = manifest_for(47.0, 15.0);
        let mut reversed = m.records().to_vec();
        reversed.reverse();
        m = ChunkManifest::new(m.header.clone(), reversed);
        assert_eq!(m.records()[0].chunk_index, 0);
        m.write_to(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"kind\":\"header\""));
        assert_eq!(text.lines().count(), 5);
        assert_eq!(ChunkManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_unknown_keys_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"kind\":\"header\",\"schema_version\":9,\"chunk_length\":15,\"mode\":\"remux\",\"toolchain\":\"\",\"args_template\":\"\"}\n",
        )
        .unwrap();
        assert!(matches!(ChunkManifest::load(&path), Err(ChunkError::Manifest { .. })));
        fs::write(
            &path,
            "{\"kind\":\"header\",\"schema_version\":1,\"chunk_length\":15,\"mode\":\"remux\",\"toolchain\":\"\",\"args_template\":\"\",\"extra\":1}\n",
        )
        .unwrap();
        assert!(ChunkManifest::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn plan_tiles_duration(duration in 0.01f64..1e5, chunk in 0.01f64..1e3) {
            let plan = plan_chunks("p", duration, chunk).unwrap();
            prop_assert_eq!(plan.boundaries.first().unwrap().0, 0.0);
            prop_assert_eq!(plan.boundaries.last().unwrap().1, duration);
            for pair in plan.boundaries.windows(2) {
                prop_assert_eq!(pair[0].1, pair[1].0);
            }
            for &(s, e) in &plan.boundaries[..plan.len() - 1] {
                prop_assert!(((e - s) - chunk).abs() <= 1e-9 * chunk.max(e));
            }
            let (s, e) = *plan.boundaries.last().unwrap();
            prop_assert!(e > s && e - s <= chunk * (1.0 + 1e-9));
        }

        #[test]
        fn solved_length_saturates_budget(
            b in 1.0f64..1e5, rho in 1e3f64..1e9, sr in 1e6f64..1e10, dt in 0.01f64..100.0,
        ) {
            let profile = HardwareProfile { batch_size: b, avg_bitrate: rho, read_speed: sr, step_time: dt };
            let t = solve_chunk_length(&profile, 1.0).unwrap();
            let lhs = b * rho * t;
            let rhs = sr * 8.0 * dt;
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs);
        }

        #[test]
        fn located_spans_cover_without_gaps(start in 0.0f64..440.0, len in 0.01f64..60.0) {
            let m = manifest_for(450.0, 15.0);
            let end = (start + len).min(450.0);
            let spans = m.locate("src", start, end).unwrap();
            let mut cursor = start;
            for s in &spans {
                let rec = &m.records()[s.chunk_index as usize];
                prop_assert!((rec.start_sec + s.local_start - cursor).abs() < 1e-9);
                cursor = rec.start_sec + s.local_end;
            }
            prop_assert!((cursor - end).abs() < 1e-9);
            if len <= 15.0 && (start / 15.0).floor() == ((end - 1e-12) / 15.0).floor() {
                prop_assert_eq!(spans.len(), 1);
            }
        }
    }
}
