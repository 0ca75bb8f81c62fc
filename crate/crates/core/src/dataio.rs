//! Trajectory ingestion, ego-to-global transform, windowing and displacements.
//!
//! Positions are snapped to a 2^-20 m grid on ingestion and bounded by
//! 2^31 m in magnitude. On that grid every difference of two positions and
//! every partial sum of such differences is exactly representable, so the
//! displacement transform inverts bit-for-bit.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::ndnum::Tensor;

/// Grid spacing for stored positions (about one micrometre).
pub const POSITION_QUANTUM: f64 = 1.0 / 1_048_576.0;
/// Largest accepted |x| or |y| in metres.
pub const MAX_ABS_POSITION: f64 = 2_147_483_648.0;
/// Frame rate the model is trained at.
pub const DEFAULT_FRAME_RATE: f64 = 2.5;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate record for frame {frame}, track {track}")]
    Duplicate { frame: i64, track: i64 },
    #[error("no ego pose for frame {0}")]
    MissingPose(i64),
    #[error("{0}")]
    Domain(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Snap a coordinate onto the storage grid.
pub fn quantize(v: f64) -> f64 {
    (v / POSITION_QUANTUM).round() * POSITION_QUANTUM
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub frame: i64,
    pub track: i64,
    pub x: f64,
    pub y: f64,
}

/// Per-frame pedestrian observations, sorted by `(frame, track)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    records: Vec<Record>,
    frame_rate: f64,
    /// Scene label carried into windows (file stem for loaded data).
    pub scene: String,
}

impl TrajectoryDataset {
    pub fn new(mut records: Vec<Record>, frame_rate: f64) -> Result<Self, DataError> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(DataError::Domain(format!("frame rate must be > 0, got {frame_rate}")));
        }
        for r in &mut records {
            for v in [r.x, r.y] {
                if !v.is_finite() || v.abs() >= MAX_ABS_POSITION {
                    return Err(DataError::Domain(format!(
                        "frame {} track {}: coordinate {v} outside ±{MAX_ABS_POSITION} m",
                        r.frame, r.track
                    )));
                }
            }
            r.x = quantize(r.x);
            r.y = quantize(r.y);
        }
        records.sort_by_key(|r| (r.frame, r.track));
        if let Some(w) = records.windows(2).find(|w| (w[0].frame, w[0].track) == (w[1].frame, w[1].track)) {
            return Err(DataError::Duplicate { frame: w[0].frame, track: w[0].track });
        }
        Ok(Self { records, frame_rate, scene: String::new() })
    }

    pub fn with_scene(mut self, scene: impl Into<String>) -> Self {
        self.scene = scene.into();
        self
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct frame ids, ascending.
    pub fn frames(&self) -> Vec<i64> {
        let mut f: Vec<i64> = self.records.iter().map(|r| r.frame).collect();
        f.dedup();
        f
    }

    /// Distinct track ids, ascending.
    pub fn tracks(&self) -> Vec<i64> {
        let mut t: Vec<i64> = self.records.iter().map(|r| r.track).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Average number of pedestrians per frame.
    pub fn avg_peds_per_frame(&self) -> f64 {
        let frames = self.frames().len();
        if frames == 0 {
            0.0
        } else {
            self.records.len() as f64 / frames as f64
        }
    }

    /// Keep every `k`-th distinct frame, starting with the first.
    pub fn downsample(&self, k: usize) -> Result<Self, DataError> {
        if k == 0 {
            return Err(DataError::Domain("downsample factor must be >= 1".into()));
        }
        let keep: std::collections::HashSet<i64> = self.frames().into_iter().step_by(k).collect();
        Ok(Self {
            records: self.records.iter().copied().filter(|r| keep.contains(&r.frame)).collect(),
            frame_rate: self.frame_rate / k as f64,
            scene: self.scene.clone(),
        })
    }

    /// Four tab-separated columns per line; floats use round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.frame, r.track, r.x, r.y));
        }
        out
    }
}

fn parse_id(tok: &str, line: usize, what: &str) -> Result<i64, DataError> {
    if let Ok(v) = tok.parse::<i64>() {
        return Ok(v);
    }
    // Some exports write ids as floats ("12.0").
    match tok.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(DataError::Parse { line, msg: format!("invalid {what} {tok:?}") }),
    }
}

fn parse_coord(tok: &str, line: usize) -> Result<f64, DataError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Parse { line, msg: format!("invalid coordinate {tok:?}") }),
    }
}

/// Non-empty, non-comment lines as `(line number, fields)`.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

/// Parse `frame_id track_id x y` rows.
pub fn parse_trajectories(text: &str, frame_rate: f64) -> Result<TrajectoryDataset, DataError> {
    let mut records = Vec::new();
    for (line, fields) in data_lines(text) {
        if fields.len() != 4 {
            return Err(DataError::Parse { line, msg: format!("expected 4 fields, found {}", fields.len()) });
        }
        records.push(Record {
            frame: parse_id(fields[0], line, "frame id")?,
            track: parse_id(fields[1], line, "track id")?,
            x: parse_coord(fields[2], line)?,
            y: parse_coord(fields[3], line)?,
        });
    }
    TrajectoryDataset::new(records, frame_rate)
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// Load a trajectory file at the default 2.5 Hz; the scene label is the file stem.
pub fn load_trajectories(path: &Path) -> Result<TrajectoryDataset, DataError> {
    let scene = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(parse_trajectories(&read(path)?, DEFAULT_FRAME_RATE)?.with_scene(scene))
}

pub fn save_trajectories(dataset: &TrajectoryDataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, dataset.to_text()).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoPose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

/// Ego-vehicle pose per frame, expressed in the record-start frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EgoPoseTrack {
    poses: BTreeMap<i64, EgoPose>,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

impl EgoPoseTrack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, frame: i64, x: f64, y: f64, heading: f64) -> Result<(), DataError> {
        if ![x, y, heading].iter().all(|v| v.is_finite()) {
            return Err(DataError::Domain(format!("frame {frame}: non-finite ego pose")));
        }
        if self.poses.contains_key(&frame) {
            return Err(DataError::Duplicate { frame, track: -1 });
        }
        self.poses.insert(frame, EgoPose { x, y, heading: wrap_angle(heading) });
        Ok(())
    }

    pub fn get(&self, frame: i64) -> Option<&EgoPose> {
        self.poses.get(&frame)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Identity pose for each of `frames`.
    pub fn identity(frames: &[i64]) -> Self {
        let poses = frames.iter().map(|&f| (f, EgoPose { x: 0.0, y: 0.0, heading: 0.0 })).collect();
        Self { poses }
    }
}

/// Parse `frame_id x y heading` rows.
pub fn parse_ego_poses(text: &str) -> Result<EgoPoseTrack, DataError> {
    let mut track = EgoPoseTrack::new();
    for (line, fields) in data_lines(text) {
        if fields.len() != 4 {
            return Err(DataError::Parse { line, msg: format!("expected 4 fields, found {}", fields.len()) });
        }
        let frame = parse_id(fields[0], line, "frame id")?;
        let x = parse_coord(fields[1], line)?;
        let y = parse_coord(fields[2], line)?;
        let heading = parse_coord(fields[3], line)?;
        track.insert(frame, x, y, heading).map_err(|e| DataError::Parse { line, msg: e.to_string() })?;
    }
    Ok(track)
}

pub fn load_ego_poses(path: &Path) -> Result<EgoPoseTrack, DataError> {
    parse_ego_poses(&read(path)?)
}

/// Rotate each position by its frame's ego heading and translate by the ego position.
pub fn to_global(dataset: &TrajectoryDataset, ego: &EgoPoseTrack) -> Result<TrajectoryDataset, DataError> {
    let mut records = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let pose = ego.get(r.frame).ok_or(DataError::MissingPose(r.frame))?;
        let (s, c) = pose.heading.sin_cos();
        records.push(Record { x: c * r.x - s * r.y + pose.x, y: s * r.x + c * r.y + pose.y, ..*r });
    }
    Ok(TrajectoryDataset::new(records, dataset.frame_rate)?.with_scene(dataset.scene.clone()))
}

/// Fixed-length slice of co-present pedestrians.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneWindow {
    /// `[n][t][xy]`, flattened.
    positions: Vec<f64>,
    /// `[n][t]`, flattened. Always true under the full-presence rule.
    mask: Vec<bool>,
    pub track_ids: Vec<i64>,
    pub t_obs: usize,
    pub t_pred: usize,
    pub start_frame: i64,
    pub scene: String,
    /// Average pedestrians per frame of the source scene.
    pub scene_density: f64,
}

impl SceneWindow {
    pub fn new(track_ids: Vec<i64>, positions: Vec<f64>, t_obs: usize, t_pred: usize) -> Result<Self, DataError> {
        if t_obs < 2 || t_pred < 1 {
            return Err(DataError::Domain(format!("need t_obs >= 2 and t_pred >= 1, got {t_obs}+{t_pred}")));
        }
        let n = track_ids.len();
        if n == 0 || positions.len() != n * (t_obs + t_pred) * 2 {
            return Err(DataError::Domain(format!(
                "{} position values for {} pedestrians over {} steps",
                positions.len(),
                n,
                t_obs + t_pred
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Domain("non-finite position".into()));
        }
        let mask = vec![true; n * (t_obs + t_pred)];
        Ok(Self { positions, mask, track_ids, t_obs, t_pred, start_frame: 0, scene: String::new(), scene_density: n as f64 })
    }

    pub fn n_peds(&self) -> usize {
        self.track_ids.len()
    }

    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.track_ids.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn position(&self, ped: usize, t: usize) -> [f64; 2] {
        let i = (ped * self.len() + t) * 2;
        [self.positions[i], self.positions[i + 1]]
    }

    /// Ground-truth future positions, `[t_pred, n, 2]`.
    pub fn future(&self) -> Tensor {
        self.time_major(self.t_obs, self.len())
    }

    /// Observed positions, `[t_obs, n, 2]`.
    pub fn observed(&self) -> Tensor {
        self.time_major(0, self.t_obs)
    }

    fn time_major(&self, from: usize, to: usize) -> Tensor {
        let n = self.n_peds();
        let mut data = Vec::with_capacity((to - from) * n * 2);
        for t in from..to {
            for p in 0..n {
                data.extend_from_slice(&self.position(p, t));
            }
        }
        Tensor::new(vec![to - from, n, 2], data).expect("consistent window shape")
    }

    /// Same window with pedestrians reordered: output slot `k` holds input pedestrian `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SceneWindow {
        let steps = self.len();
        let mut positions = Vec::with_capacity(self.positions.len());
        for &p in perm {
            positions.extend_from_slice(&self.positions[p * steps * 2..(p + 1) * steps * 2]);
        }
        SceneWindow {
            positions,
            mask: self.mask.clone(),
            track_ids: perm.iter().map(|&p| self.track_ids[p]).collect(),
            ..self.clone()
        }
    }
}

/// Distinct-frame positions where `len` consecutive frames start, stepping by `stride`.
fn frame_table(dataset: &TrajectoryDataset) -> (Vec<i64>, Vec<HashMap<i64, (f64, f64)>>) {
    let frames = dataset.frames();
    let mut table = vec![HashMap::new(); frames.len()];
    let mut fi = 0;
    for r in dataset.records() {
        while frames[fi] != r.frame {
            fi += 1;
        }
        table[fi].insert(r.track, (r.x, r.y));
    }
    (frames, table)
}

/// Tracks present in every frame of `table[start..start + len]`, ascending, with their positions.
fn full_presence(table: &[HashMap<i64, (f64, f64)>], start: usize, len: usize) -> (Vec<i64>, Vec<f64>) {
    let mut ids: Vec<i64> = table[start]
        .keys()
        .copied()
        .filter(|id| table[start..start + len].iter().all(|f| f.contains_key(id)))
        .collect();
    ids.sort_unstable();
    let mut positions = Vec::with_capacity(ids.len() * len * 2);
    for id in &ids {
        for frame in &table[start..start + len] {
            let (x, y) = frame[id];
            positions.push(x);
            positions.push(y);
        }
    }
    (ids, positions)
}

/// Cut windows of `t_obs + t_pred` consecutive frames.
///
/// Frames are consecutive entries of the sorted distinct frame list. A
/// window is emitted for a start offset only if at least one pedestrian is
/// present in every one of its frames; partially present pedestrians are
/// left out of that window.
pub fn make_windows(dataset: &TrajectoryDataset, t_obs: usize, t_pred: usize, stride: usize) -> Result<Vec<SceneWindow>, DataError> {
    if t_obs < 2 || t_pred < 1 || stride < 1 {
        return Err(DataError::Domain(format!(
            "need t_obs >= 2, t_pred >= 1, stride >= 1; got {t_obs}, {t_pred}, {stride}"
        )));
    }
    let len = t_obs + t_pred;
    let (frames, table) = frame_table(dataset);
    let density = dataset.avg_peds_per_frame();
    let mut windows = Vec::new();
    if frames.len() < len {
        return Ok(windows);
    }
    for start in (0..=frames.len() - len).step_by(stride) {
        let (ids, positions) = full_presence(&table, start, len);
        if ids.is_empty() {
            continue;
        }
        let mut w = SceneWindow::new(ids, positions, t_obs, t_pred)?;
        w.start_frame = frames[start];
        w.scene = dataset.scene.clone();
        w.scene_density = density;
        windows.push(w);
    }
    Ok(windows)
}

/// Model input: observed absolute positions and per-step displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[t_obs, n, 2]`
    pub positions: Tensor,
    /// `[t_obs, n, 2]`, first step zero.
    pub displacements: Tensor,
    /// Last observed position per pedestrian.
    pub origin: Vec<[f64; 2]>,
}

impl Observation {
    /// Build from time-major positions `[t_obs, n, 2]`.
    pub fn from_positions(positions: Tensor) -> Result<Self, DataError> {
        let s = positions.shape();
        if s.len() != 3 || s[2] != 2 || s[0] < 2 || s[1] == 0 {
            return Err(DataError::Domain(format!("observation needs shape [t_obs >= 2, n >= 1, 2], got {:?}", s)));
        }
        let (t_obs, n) = (s[0], s[1]);
        let p = positions.data();
        let mut d = vec![0.0; p.len()];
        for i in 2 * n..p.len() {
            d[i] = p[i] - p[i - 2 * n];
        }
        let origin = (0..n).map(|i| [p[((t_obs - 1) * n + i) * 2], p[((t_obs - 1) * n + i) * 2 + 1]]).collect();
        let displacements = Tensor::new(s.to_vec(), d).expect("same shape");
        Ok(Self { positions, displacements, origin })
    }

    pub fn t_obs(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn n_peds(&self) -> usize {
        self.positions.shape()[1]
    }
}

/// A window in displacement space.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementWindow {
    pub window: SceneWindow,
    /// `[n][t][xy]`, first step zero.
    pub displacements: Vec<f64>,
    /// Position at step `t_obs - 1` per pedestrian.
    pub origin: Vec<[f64; 2]>,
}

impl DisplacementWindow {
    pub fn n_peds(&self) -> usize {
        self.window.n_peds()
    }

    pub fn displacement(&self, ped: usize, t: usize) -> [f64; 2] {
        let i = (ped * self.window.len() + t) * 2;
        [self.displacements[i], self.displacements[i + 1]]
    }

    /// Model input covering the observed steps only.
    pub fn observation(&self) -> Observation {
        Observation::from_positions(self.window.observed()).expect("validated window")
    }

    /// Ground-truth future displacements, `[t_pred, n, 2]`.
    pub fn target(&self) -> Tensor {
        let w = &self.window;
        let n = w.n_peds();
        let mut data = Vec::with_capacity(w.t_pred * n * 2);
        for t in w.t_obs..w.len() {
            for p in 0..n {
                data.extend_from_slice(&self.displacement(p, t));
            }
        }
        Tensor::new(vec![w.t_pred, n, 2], data).expect("consistent window shape")
    }

    /// Positions rebuilt as the initial position plus running sums of displacements.
    pub fn reconstruct(&self) -> Vec<f64> {
        let steps = self.window.len();
        let mut out = Vec::with_capacity(self.displacements.len());
        for p in 0..self.n_peds() {
            let start = self.window.position(p, 0);
            let mut acc = [0.0, 0.0];
            for t in 0..steps {
                let d = self.displacement(p, t);
                acc[0] += d[0];
                acc[1] += d[1];
                out.push(start[0] + acc[0]);
                out.push(start[1] + acc[1]);
            }
        }
        out
    }
}

pub fn to_displacements(window: &SceneWindow) -> DisplacementWindow {
    let steps = window.len();
    let mut displacements = vec![0.0; window.positions.len()];
    for p in 0..window.n_peds() {
        for t in 1..steps {
            let (cur, prev) = (window.position(p, t), window.position(p, t - 1));
            let i = (p * steps + t) * 2;
            displacements[i] = cur[0] - prev[0];
            displacements[i + 1] = cur[1] - prev[1];
        }
    }
    let origin = (0..window.n_peds()).map(|p| window.position(p, window.t_obs - 1)).collect();
    DisplacementWindow { window: window.clone(), displacements, origin }
}

/// Observation-only windows of `t_obs` frames for inference on raw input.
#[derive(Clone, Debug)]
pub struct ObservedScene {
    pub start_frame: i64,
    pub track_ids: Vec<i64>,
    pub observation: Observation,
}

pub fn observation_windows(dataset: &TrajectoryDataset, t_obs: usize, stride: usize) -> Result<Vec<ObservedScene>, DataError> {
    if t_obs < 2 || stride < 1 {
        return Err(DataError::Domain(format!("need t_obs >= 2 and stride >= 1, got {t_obs}, {stride}")));
    }
    let (frames, table) = frame_table(dataset);
    let mut out = Vec::new();
    if frames.len() < t_obs {
        return Ok(out);
    }
    for start in (0..=frames.len() - t_obs).step_by(stride) {
        let (ids, positions) = full_presence(&table, start, t_obs);
        if ids.is_empty() {
            continue;
        }
        let n = ids.len();
        let mut time_major = vec![0.0; positions.len()];
        for p in 0..n {
            for t in 0..t_obs {
                let src = (p * t_obs + t) * 2;
                let dst = (t * n + p) * 2;
                time_major[dst] = positions[src];
                time_major[dst + 1] = positions[src + 1];
            }
        }
        let positions = Tensor::new(vec![t_obs, n, 2], time_major).expect("consistent shape");
        out.push(ObservedScene { start_frame: frames[start], track_ids: ids, observation: Observation::from_positions(positions)? });
    }
    Ok(out)
}

/// Crowd-density label by average pedestrians per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DensityGroup {
    Group1,
    Group2,
    Group3,
    /// Falls in one of the unassigned ranges between the groups.
    Ungrouped,
}

impl DensityGroup {
    pub const ALL: [DensityGroup; 4] = [DensityGroup::Group1, DensityGroup::Group2, DensityGroup::Group3, DensityGroup::Ungrouped];
}

impl fmt::Display for DensityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DensityGroup::Group1 => "group1",
            DensityGroup::Group2 => "group2",
            DensityGroup::Group3 => "group3",
            DensityGroup::Ungrouped => "ungrouped",
        })
    }
}

/// `n < 15` is group 1, `18 < n < 62` group 2, `n > 71` group 3; anything else is ungrouped.
pub fn density_group(avg_peds_per_frame: f64) -> Result<DensityGroup, DataError> {
    let n = avg_peds_per_frame;
    if n.is_nan() || n < 0.0 {
        return Err(DataError::Domain(format!("average pedestrian count must be >= 0, got {n}")));
    }
    Ok(if n < 15.0 {
        DensityGroup::Group1
    } else if n > 18.0 && n < 62.0 {
        DensityGroup::Group2
    } else if n > 71.0 {
        DensityGroup::Group3
    } else {
        DensityGroup::Ungrouped
    })
}
