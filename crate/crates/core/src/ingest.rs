//! UAH-DriveSet ingestion: session parsing, sliding windows, stratified split
//! and the canonical dataset file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::dataset::{ChannelStats, WindowMeta, WindowedDataset};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Name of the raw inertial file inside every UAH session directory.
pub const RAW_ACCEL_FILE: &str = "RAW_ACCELEROMETERS.txt";

/// Channel names in stored order.
pub const CHANNELS: [&str; 6] = ["AccX", "AccY", "AccZ", "Roll", "Pitch", "Yaw"];

const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Behavior {
    Normal,
    Aggressive,
    Drowsy,
}

impl Behavior {
    pub const ALL: [Behavior; 3] = [Behavior::Normal, Behavior::Aggressive, Behavior::Drowsy];

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn class_names() -> Vec<String> {
        Self::ALL.iter().map(|b| b.to_string()).collect()
    }

    /// Matches a directory-name token such as `NORMAL`, `NORMAL2` or `DROWSY`.
    fn from_token(token: &str) -> Option<Behavior> {
        let stem = token.trim_end_matches(|c: char| c.is_ascii_digit());
        match stem {
            "NORMAL" => Some(Behavior::Normal),
            "AGGRESSIVE" => Some(Behavior::Aggressive),
            "DROWSY" => Some(Behavior::Drowsy),
            _ => None,
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Behavior::Normal => "NORMAL",
            Behavior::Aggressive => "AGGRESSIVE",
            Behavior::Drowsy => "DROWSY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Road {
    Motorway,
    Secondary,
}

impl fmt::Display for Road {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Road::Motorway => "MOTORWAY",
            Road::Secondary => "SECONDARY",
        })
    }
}

impl FromStr for Road {
    type Err = Error;

    fn from_str(s: &str) -> Result<Road> {
        match s {
            "MOTORWAY" => Ok(Road::Motorway),
            "SECONDARY" => Ok(Road::Secondary),
            other => Err(Error::Config(format!("unknown road '{other}'"))),
        }
    }
}

/// Column positions (0-based) of the kept channels in the raw accelerometer
/// file. Defaults follow the published UAH-DriveSet layout: timestamp, system
/// flag, raw XYZ, Kalman-filtered XYZ, roll, pitch, yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub timestamp: usize,
    pub acc_filtered: [usize; 3],
    pub roll: usize,
    pub pitch: usize,
    pub yaw: usize,
    /// Multiplier applied to the acceleration columns (file units are g).
    pub acc_scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: 0,
            acc_filtered: [5, 6, 7],
            roll: 8,
            pitch: 9,
            yaw: 10,
            acc_scale: STANDARD_GRAVITY,
        }
    }
}

impl ColumnMap {
    fn max_column(&self) -> usize {
        [self.timestamp, self.roll, self.pitch, self.yaw]
            .into_iter()
            .chain(self.acc_filtered)
            .max()
            .unwrap_or(0)
    }
}

/// One recorded driving session.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    pub session_id: String,
    pub driver_id: String,
    pub behavior: Behavior,
    pub road: Road,
    pub timestamps: Vec<f64>,
    /// Rows of `[acc_x, acc_y, acc_z, roll, pitch, yaw]`.
    pub samples: Vec<[f64; 6]>,
    pub rejected_rows: usize,
}

impl RawSession {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Driver, behavior and road encoded in a session directory name such as
/// `20151111123124-25km-D1-NORMAL-MOTORWAY`.
pub fn parse_session_name(name: &str) -> Result<(String, Behavior, Road)> {
    let bad = |msg: &str| Error::Parse { path: PathBuf::from(name), msg: msg.to_string() };
    let tokens: Vec<&str> = name.split(['-', '_']).collect();
    let driver = tokens
        .iter()
        .find(|t| t.len() > 1 && t.starts_with('D') && t[1..].bytes().all(|b| b.is_ascii_digit()))
        .ok_or_else(|| bad("no driver token (D<n>) in session name"))?;
    let behavior = tokens
        .iter()
        .find_map(|t| Behavior::from_token(t))
        .ok_or_else(|| bad("unrecognized behavior in session name"))?;
    let road = tokens
        .iter()
        .find_map(|t| t.parse::<Road>().ok())
        .ok_or_else(|| bad("no road token in session name"))?;
    Ok((driver.to_string(), behavior, road))
}

/// Parses one session directory.
pub fn parse_uah_session(dir: &Path, columns: &ColumnMap) -> Result<RawSession> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parse { path: dir.to_path_buf(), msg: "unnamed session directory".into() })?;
    let (driver_id, behavior, road) = parse_session_name(name).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse { path: dir.to_path_buf(), msg },
        other => other,
    })?;
    let path = dir.join(RAW_ACCEL_FILE);
    let text = std::fs::read_to_string(&path).map_err(Error::at_path(&path))?;

    let width = columns.max_column() + 1;
    let mut timestamps = Vec::new();
    let mut samples = Vec::new();
    let mut rejected_rows = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Option<Vec<f64>> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let row = match fields {
            Some(row) if row.len() >= width => row,
            _ => {
                rejected_rows += 1;
                continue;
            }
        };
        let ts = row[columns.timestamp];
        if timestamps.last().is_some_and(|&prev| ts <= prev) {
            rejected_rows += 1;
            continue;
        }
        let [ax, ay, az] = columns.acc_filtered.map(|c| row[c] * columns.acc_scale);
        timestamps.push(ts);
        samples.push([ax, ay, az, row[columns.roll], row[columns.pitch], row[columns.yaw]]);
    }
    if samples.is_empty() {
        return Err(Error::Parse { path, msg: "no valid rows".into() });
    }
    Ok(RawSession {
        session_id: name.to_string(),
        driver_id,
        behavior,
        road,
        timestamps,
        samples,
        rejected_rows,
    })
}

/// Summary of a corpus scan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub sessions: Vec<SessionSummary>,
    pub skipped_by_road: usize,
    pub total_rejected_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub driver_id: String,
    pub behavior: Behavior,
    pub road: Road,
    pub samples: usize,
    pub rejected_rows: usize,
}

/// Finds every session directory under `root` (any directory holding the raw
/// accelerometer file), keeps those on an allowed road and parses them in
/// parallel. Sessions come back sorted by session id.
pub fn load_corpus(root: &Path, roads: &[Road], columns: &ColumnMap) -> Result<(Vec<RawSession>, ParseReport)> {
    if !root.is_dir() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        });
    }
    let mut dirs = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Parse { path: root.to_path_buf(), msg: e.to_string() })?;
        if entry.file_type().is_file() && entry.file_name() == RAW_ACCEL_FILE {
            if let Some(parent) = entry.path().parent() {
                dirs.push(parent.to_path_buf());
            }
        }
    }
    let mut report = ParseReport::default();
    let mut keep = Vec::new();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (_, _, road) = parse_session_name(name).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse { path: dir.clone(), msg },
            other => other,
        })?;
        if roads.contains(&road) {
            keep.push(dir);
        } else {
            report.skipped_by_road += 1;
        }
    }
    let mut sessions = keep
        .par_iter()
        .map(|d| parse_uah_session(d, columns))
        .collect::<Result<Vec<_>>>()?;
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    if sessions.is_empty() {
        return Err(Error::Parse { path: root.to_path_buf(), msg: "no sessions found".into() });
    }
    for s in &sessions {
        report.total_rejected_rows += s.rejected_rows;
        report.sessions.push(SessionSummary {
            session_id: s.session_id.clone(),
            driver_id: s.driver_id.clone(),
            behavior: s.behavior,
            road: s.road,
            samples: s.len(),
            rejected_rows: s.rejected_rows,
        });
    }
    Ok((sessions, report))
}

/// Step between consecutive window starts.
pub fn window_stride(window_len: usize, overlap_fraction: f64) -> usize {
    ((window_len as f64 * (1.0 - overlap_fraction)).round() as usize).max(1)
}

/// Cuts every session into fixed-length windows that never cross a session
/// boundary; trailing partial windows are dropped.
pub fn window_sessions(sessions: &[RawSession], window_len: usize, overlap_fraction: f64) -> Result<WindowedDataset> {
    if window_len < 2 {
        return Err(Error::InvalidArgument(format!("window length {window_len} < 2")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidArgument(format!("overlap {overlap_fraction} outside [0, 1)")));
    }
    let stride = window_stride(window_len, overlap_fraction);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut meta = Vec::new();
    for s in sessions {
        if s.len() < window_len {
            log::warn!(
                "session {} has {} samples, shorter than one window of {window_len}; skipped",
                s.session_id,
                s.len()
            );
            continue;
        }
        let record = WindowMeta {
            driver_id: s.driver_id.clone(),
            behavior: s.behavior.to_string(),
            road: s.road.to_string(),
            session_id: s.session_id.clone(),
        };
        for start in (0..=s.len() - window_len).step_by(stride) {
            for row in &s.samples[start..start + window_len] {
                values.extend_from_slice(row);
            }
            labels.push(s.behavior.class_id());
            meta.push(record.clone());
        }
    }
    WindowedDataset::new(window_len, CHANNELS.len(), values, labels, meta, Behavior::class_names())
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified random split on (driver, behavior).
///
/// Every stratum is shuffled with the seeded stream and `round(n * fraction)`
/// of it (clamped so both sides get at least one window) goes to train.
/// Strata with fewer than two windows go entirely to train. Index lists are
/// sorted, so both halves keep the input order.
pub fn stratified_split(ds: &WindowedDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut strata: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, m) in ds.meta().iter().enumerate() {
        strata.entry((&m.driver_id, &m.behavior)).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for (_, mut members) in strata {
        let n = members.len();
        if n < 2 {
            train_indices.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        train_indices.extend_from_slice(&members[..n_train]);
        test_indices.extend_from_slice(&members[n_train..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    if test_indices.is_empty() {
        return Err(Error::InvalidArgument("split left the test set empty".into()));
    }
    Ok(Split {
        train: ds.subset(&train_indices)?,
        test: ds.subset(&test_indices)?,
        train_indices,
        test_indices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    #[serde(rename = "M")]
    m: usize,
    t: usize,
    d: usize,
    #[serde(rename = "C")]
    c: usize,
    class_names: Vec<String>,
    labels: Vec<usize>,
    normalization: Option<ChannelStats>,
    meta: Vec<WindowMeta>,
}

const DATASET_KIND: &str = "dataset";

/// Canonical dataset file bytes. `normalization` records the statistics the
/// stored values were normalized with, if any.
pub fn encode_dataset(ds: &WindowedDataset, normalization: Option<&ChannelStats>) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        m: ds.len(),
        t: ds.timesteps(),
        d: ds.channels(),
        c: ds.num_classes(),
        class_names: ds.class_names().to_vec(),
        labels: ds.labels().to_vec(),
        normalization: normalization.cloned(),
        meta: ds.meta().to_vec(),
    };
    archive::encode(DATASET_KIND, &header, ds.values())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(WindowedDataset, Option<ChannelStats>)> {
    let (h, values): (DatasetHeader, Vec<f64>) = archive::decode(DATASET_KIND, bytes)?;
    if h.labels.len() != h.m || h.class_names.len() != h.c {
        return Err(Error::Artifact("dataset header counts disagree".into()));
    }
    let ds = WindowedDataset::new(h.t, h.d, values, h.labels, h.meta, h.class_names)?;
    Ok((ds, h.normalization))
}

pub fn save_dataset(path: &Path, ds: &WindowedDataset, normalization: Option<&ChannelStats>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds, normalization)?).map_err(Error::at_path(path))
}

pub fn load_dataset(path: &Path) -> Result<(WindowedDataset, Option<ChannelStats>)> {
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn session(id: &str, driver: &str, behavior: Behavior, n: usize, offset: f64) -> RawSession {
        RawSession {
            session_id: id.into(),
            driver_id: driver.into(),
            behavior,
            road: Road::Motorway,
            timestamps: (0..n).map(|i| i as f64 * 0.1).collect(),
            samples: (0..n)
                .map(|i| {
                    let v = offset + i as f64;
                    [v, v + 0.1, v + 0.2, v + 0.3, v + 0.4, v + 0.5]
                })
                .collect(),
            rejected_rows: 0,
        }
    }

    fn write_session(dir: &Path, name: &str, rows: &[String]) -> PathBuf {
        let sdir = dir.join(name);
        std::fs::create_dir_all(&sdir).unwrap();
        let mut f = std::fs::File::create(sdir.join(RAW_ACCEL_FILE)).unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        sdir
    }

    fn row(ts: f64, k: f64) -> String {
        format!(
            "{ts:.2} 1 {a} {a} {a} {:.3} {:.3} {:.3} {:.2} {:.2} {:.2}",
            0.01 * k,
            0.02 * k,
            0.03 * k,
            1.0 + k,
            2.0 + k,
            3.0 + k,
            a = 0.5
        )
    }

    #[test]
    fn parses_well_formed_file() {
        let tmp = tempfile::tempdir().unwrap();
        let rows: Vec<String> = (0..3).map(|i| row(i as f64 * 0.1, i as f64)).collect();
        let dir = write_session(tmp.path(), "20151111123124-25km-D1-NORMAL-MOTORWAY", &rows);
        let s = parse_uah_session(&dir, &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.driver_id, "D1");
        assert_eq!(s.behavior, Behavior::Normal);
        assert_eq!(s.road, Road::Motorway);
        assert_eq!(s.rejected_rows, 0);
        let g = STANDARD_GRAVITY;
        assert_eq!(s.samples[2], [0.02 * g, 0.04 * g, 0.06 * g, 3.0, 4.0, 5.0]);
        assert_eq!(s.timestamps, vec![0.0, 0.1, 0.2]);
    }

    #[test]
    fn counts_corrupt_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rows: Vec<String> = (0..100).map(|i| row(i as f64 * 0.1, i as f64)).collect();
        rows[40] = rows[40].replacen("1 ", "x ", 1);
        let dir = write_session(tmp.path(), "20151111125233-24km-D2-AGGRESSIVE-MOTORWAY", &rows);
        let s = parse_uah_session(&dir, &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 99);
        assert_eq!(s.rejected_rows, 1);
        assert_eq!(s.behavior, Behavior::Aggressive);
    }

    #[test]
    fn session_name_tokens() {
        let (d, b, r) = parse_session_name("20151110175712-16km-D1-NORMAL1-SECONDARY").unwrap();
        assert_eq!((d.as_str(), b, r), ("D1", Behavior::Normal, Road::Secondary));
        let (_, b, r) = parse_session_name("20151111132348-25km-D6-DROWSY-MOTORWAY").unwrap();
        assert_eq!((b, r), (Behavior::Drowsy, Road::Motorway));
        assert!(parse_session_name("20151111132348-25km-D6-SLEEPY-MOTORWAY").is_err());
    }

    #[test]
    fn missing_file_and_empty_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("x-D1-NORMAL-MOTORWAY");
        std::fs::create_dir_all(&dir).unwrap();
        assert!(matches!(parse_uah_session(&dir, &ColumnMap::default()), Err(Error::Path { .. })));
        let dir = write_session(tmp.path(), "y-D1-NORMAL-MOTORWAY", &["garbage".into()]);
        assert!(matches!(parse_uah_session(&dir, &ColumnMap::default()), Err(Error::Parse { .. })));
    }

    #[test]
    fn corpus_filters_roads() {
        let tmp = tempfile::tempdir().unwrap();
        let rows: Vec<String> = (0..70).map(|i| row(i as f64 * 0.1, i as f64)).collect();
        write_session(&tmp.path().join("D1"), "a-D1-NORMAL-MOTORWAY", &rows);
        write_session(&tmp.path().join("D1"), "b-D1-DROWSY-SECONDARY", &rows);
        let (sessions, report) = load_corpus(tmp.path(), &[Road::Motorway], &ColumnMap::default()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(report.skipped_by_road, 1);
        assert!(load_corpus(&tmp.path().join("nope"), &[Road::Motorway], &ColumnMap::default()).is_err());
    }

    #[test]
    fn windows_of_one_session() {
        let ds = window_sessions(&[session("s", "D1", Behavior::Drowsy, 160, 0.0)], 64, 0.5).unwrap();
        assert_eq!(ds.len(), 4);
        for (w, start) in [0usize, 32, 64, 96].into_iter().enumerate() {
            assert_eq!(ds.window(w)[0], start as f64);
        }
        assert!(ds.labels().iter().all(|&l| l == Behavior::Drowsy.class_id()));
    }

    #[test]
    fn exact_length_session_gives_one_window() {
        let ds = window_sessions(&[session("s", "D1", Behavior::Normal, 64, 0.0)], 64, 0.5).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn windows_never_cross_sessions() {
        let a = session("a", "D1", Behavior::Normal, 96, 0.0);
        let b = session("b", "D1", Behavior::Normal, 96, 1000.0);
        let ds = window_sessions(&[a.clone(), b.clone()], 64, 0.5).unwrap();
        assert_eq!(ds.len(), 4);
        let starts: Vec<f64> = (0..4).map(|w| ds.window(w)[0]).collect();
        assert_eq!(starts, vec![0.0, 32.0, 1000.0, 1032.0]);
        // Values are copied bit-exactly.
        assert_eq!(&ds.window(3)[..6], &b.samples[32]);
        assert_eq!(ds.meta()[2].session_id, "b");
    }

    #[test]
    fn window_count_formula() {
        let lens = [10usize, 63, 64, 65, 100, 129, 200];
        let sessions: Vec<RawSession> =
            lens.iter().enumerate().map(|(i, &n)| session(&i.to_string(), "D1", Behavior::Normal, n, 0.0)).collect();
        for overlap in [0.0, 0.25, 0.5, 0.75] {
            let stride = window_stride(64, overlap);
            let expected: usize =
                lens.iter().map(|&n| if n < 64 { 0 } else { (n - 64) / stride + 1 }).sum();
            assert_eq!(window_sessions(&sessions, 64, overlap).unwrap().len(), expected);
        }
        assert!(window_sessions(&sessions, 1, 0.5).is_err());
        assert!(window_sessions(&sessions, 64, 1.0).is_err());
    }

    fn stratified_corpus(per_stratum: &[usize]) -> WindowedDataset {
        let mut sessions = Vec::new();
        for (k, &n) in per_stratum.iter().enumerate() {
            let driver = format!("D{}", k / 3 + 1);
            let behavior = Behavior::ALL[k % 3];
            // Windows of length 2 with no overlap: n windows need 2n samples.
            sessions.push(session(&format!("s{k}"), &driver, behavior, 2 * n, 10_000.0 * k as f64));
        }
        window_sessions(&sessions, 2, 0.0).unwrap()
    }

    #[test]
    fn eighty_twenty_per_stratum() {
        let ds = stratified_corpus(&[100; 18]);
        let split = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!(split.train.len(), 1440);
        assert_eq!(split.test.len(), 360);
        let mut per: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        for m in split.train.meta() {
            per.entry((m.driver_id.clone(), m.behavior.clone())).or_default().0 += 1;
        }
        for m in split.test.meta() {
            per.entry((m.driver_id.clone(), m.behavior.clone())).or_default().1 += 1;
        }
        assert_eq!(per.len(), 18);
        assert!(per.values().all(|&c| c == (80, 20)));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let sizes: Vec<usize> = (0..18).map(|k| 250 + 17 * k).collect();
        let ds = stratified_corpus(&sizes);
        let a = stratified_split(&ds, 0.8, 7).unwrap();
        let b = stratified_split(&ds, 0.8, 7).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        let mut all: Vec<usize> = a.train_indices.iter().chain(&a.test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let frac = a.train.len() as f64 / ds.len() as f64;
        assert!((frac - 0.8).abs() * ds.len() as f64 <= 18.0);
    }

    #[test]
    fn tiny_strata_go_to_train() {
        let ds = stratified_corpus(&[1, 10]);
        let split = stratified_split(&ds, 0.8, 3).unwrap();
        assert!(split.train_indices.contains(&0));
        assert_eq!(split.test.len(), 2);
        assert!(stratified_split(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn dataset_file_roundtrip() {
        let ds = window_sessions(&[session("s", "D3", Behavior::Drowsy, 160, 0.25)], 64, 0.5).unwrap();
        let stats = ChannelStats::fit(&ds);
        let bytes = encode_dataset(&ds, Some(&stats)).unwrap();
        let (back, norm) = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(norm, Some(stats));
        assert_eq!(encode_dataset(&back, norm.as_ref()).unwrap(), bytes);
    }
}
