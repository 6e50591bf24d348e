//! Timestamped camera trajectories, the whitespace-separated text format
//! `t tx ty tz qx qy qz qw` used by most SLAM evaluation tools, and temporal
//! association between two trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Association window used when callers do not supply one: half a 25 Hz frame.
pub const DEFAULT_MAX_TIME_OFFSET: f64 = 0.02;

/// Slack added to the association window so that offsets which are equal to
/// the bound in decimal (e.g. `0.22 - 0.20` vs `0.02`) still match after
/// binary rounding.
pub const TIME_EPSILON: f64 = 1e-9;

/// Quaternions further than this from unit norm are rejected on ingest.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

/// Quaternions within this distance of unit norm are kept exactly as read,
/// so that re-reading a serialised trajectory reproduces the same digits.
const QUATERNION_PRINT_SLACK: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: timestamp {timestamp} does not increase over the previous pose")]
    NonMonotonicTimestamps { line: usize, timestamp: f64 },
    #[error("line {line}: quaternion norm {norm} deviates from 1 by more than {QUATERNION_NORM_TOLERANCE}")]
    NonUnitQuaternion { line: usize, norm: f64 },
    #[error("trajectory contains no poses")]
    EmptyTrajectory,
    #[error("pose index {index} out of range for trajectory of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// A single timestamped camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(timestamp: f64, translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            timestamp,
            translation,
            rotation,
        }
    }

    /// Pose at `timestamp` with identity rotation.
    pub fn from_translation(timestamp: f64, translation: Vector3<f64>) -> Self {
        Self::new(timestamp, translation, UnitQuaternion::identity())
    }
}

/// An ordered, non-empty sequence of poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<Pose>,
    pub label: String,
}

impl Trajectory {
    /// Validates ordering and finiteness and builds the trajectory.
    pub fn new(poses: Vec<Pose>, label: impl Into<String>) -> Result<Self, TrajectoryError> {
        if poses.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        for (idx, pose) in poses.iter().enumerate() {
            if !pose.timestamp.is_finite() {
                return Err(TrajectoryError::MalformedLine {
                    line: idx + 1,
                    reason: "non-finite timestamp".into(),
                });
            }
            if idx > 0 && pose.timestamp <= poses[idx - 1].timestamp {
                return Err(TrajectoryError::NonMonotonicTimestamps {
                    line: idx + 1,
                    timestamp: pose.timestamp,
                });
            }
        }
        Ok(Self {
            poses,
            label: label.into(),
        })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    /// Always false for a constructed trajectory; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.poses.iter().map(|p| p.timestamp)
    }

    /// Translations of the poses at `selection`, in selection order.
    pub fn translations(&self, selection: &[usize]) -> Result<Vec<Vector3<f64>>, TrajectoryError> {
        selection
            .iter()
            .map(|&index| {
                self.poses
                    .get(index)
                    .map(|p| p.translation)
                    .ok_or(TrajectoryError::IndexOutOfRange {
                        index,
                        len: self.poses.len(),
                    })
            })
            .collect()
    }

    /// Applies `f` to every pose, keeping timestamps.
    pub fn map_poses(&self, mut f: impl FnMut(&Pose) -> Pose) -> Self {
        Self {
            poses: self.poses.iter().map(&mut f).collect(),
            label: self.label.clone(),
        }
    }

    /// Renders the trajectory in the text format with 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.poses.len() * 96);
        for pose in &self.poses {
            let q = pose.rotation.quaternion();
            let fields = [
                pose.timestamp,
                pose.translation.x,
                pose.translation.y,
                pose.translation.z,
                q.i,
                q.j,
                q.k,
                q.w,
            ];
            for (idx, value) in fields.iter().enumerate() {
                if idx > 0 {
                    out.push(' ');
                }
                out.push_str(&format_significant(*value, 9));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), TrajectoryError> {
        fs::write(path, self.to_text()).map_err(|e| TrajectoryError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Reads and parses a trajectory file; the label is the file stem.
    pub fn read(path: &Path) -> Result<Self, TrajectoryError> {
        let text = fs::read_to_string(path).map_err(|e| TrajectoryError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut trajectory = parse_trajectory(&text)?;
        trajectory.label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(trajectory)
    }
}

/// Formats `value` as a plain decimal carrying `digits` significant digits,
/// with trailing zeros removed.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 || !value.is_finite() {
        return if value == 0.0 { "0".into() } else { value.to_string() };
    }
    let magnitude = value.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let mut s = String::new();
    let _ = write!(s, "{value:.decimals$}");
    // Rounding can carry into a new leading digit (9.9999999996 -> 10.00000000).
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        s.truncate(trimmed.len());
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Parses the text trajectory format. Lines starting with `#` and blank lines
/// are skipped; LF and CRLF line endings are both accepted.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, TrajectoryError> {
    let mut poses: Vec<Pose> = Vec::new();
    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(TrajectoryError::MalformedLine {
                line: line_no,
                reason: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 8];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TrajectoryError::MalformedLine {
                    line: line_no,
                    reason: format!("invalid number '{field}'"),
                })?;
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = values;
        let quaternion = Quaternion::new(qw, qx, qy, qz);
        let norm = quaternion.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(TrajectoryError::NonUnitQuaternion { line: line_no, norm });
        }
        if let Some(prev) = poses.last() {
            if t <= prev.timestamp {
                return Err(TrajectoryError::NonMonotonicTimestamps {
                    line: line_no,
                    timestamp: t,
                });
            }
        }
        poses.push(Pose::new(
            t,
            Vector3::new(tx, ty, tz),
            if (norm - 1.0).abs() <= QUATERNION_PRINT_SLACK {
                UnitQuaternion::new_unchecked(quaternion)
            } else {
                UnitQuaternion::from_quaternion(quaternion)
            },
        ));
    }
    Trajectory::new(poses, "")
}

/// Index pairs `(index in a, index in b)` of temporally matched poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub max_time_offset: f64,
}

impl Association {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn first_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn second_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Greedy ascending-time association of `a` with `b`.
///
/// Both sequences are swept in time order. The earliest unmatched pose on each
/// side is paired whenever the two lie within `max_time_offset`, except when
/// one of them can only ever pair with the other side's current pose and its
/// successor can too and is strictly nearer: then the nearer successor takes
/// the slot. Ties go to the earlier pose. This yields a maximum-cardinality
/// matching, and the rule treats `a` and `b` symmetrically, so
/// `associate(a, b)` is the mirror of `associate(b, a)`.
pub fn associate(a: &Trajectory, b: &Trajectory, max_time_offset: f64) -> Association {
    let ta: Vec<f64> = a.timestamps().collect();
    let tb: Vec<f64> = b.timestamps().collect();
    let bound = max_time_offset + TIME_EPSILON;
    let within = |x: Option<&f64>, y: Option<&f64>| match (x, y) {
        (Some(x), Some(y)) => (x - y).abs() <= bound,
        _ => false,
    };

    let mut pairs = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < ta.len() && j < tb.len() {
        let d = ta[i] - tb[j];
        if d < -bound {
            i += 1;
            continue;
        }
        if d > bound {
            j += 1;
            continue;
        }
        let (a_cur, a_next) = (ta.get(i), ta.get(i + 1));
        let (b_cur, b_next) = (tb.get(j), tb.get(j + 1));

        let a_successor_nearer = within(a_next, b_cur)
            && !within(a_cur, b_next)
            && !within(a_next, b_next)
            && (ta[i + 1] - tb[j]).abs() < d.abs();
        if a_successor_nearer {
            i += 1;
            continue;
        }
        let b_successor_nearer = within(b_next, a_cur)
            && !within(b_cur, a_next)
            && !within(b_next, a_next)
            && (tb[j + 1] - ta[i]).abs() < d.abs();
        if b_successor_nearer {
            j += 1;
            continue;
        }
        pairs.push((i, j));
        i += 1;
        j += 1;
    }
    Association {
        pairs,
        max_time_offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(ts: &[f64]) -> Trajectory {
        Trajectory::new(
            ts.iter()
                .map(|&t| Pose::from_translation(t, Vector3::new(t, 0.0, 0.0)))
                .collect(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn parses_single_identity_line() {
        let t = parse_trajectory("0.0 1.0 2.0 3.0 0 0 0 1").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0].translation, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.poses()[0].rotation, UnitQuaternion::identity());
    }

    #[test]
    fn rejects_short_line() {
        let err = parse_trajectory("0.0 1.0 2.0").unwrap_err();
        assert!(matches!(err, TrajectoryError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn rejects_non_numeric_and_nan() {
        assert!(matches!(
            parse_trajectory("0 1 2 x 0 0 0 1"),
            Err(TrajectoryError::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_trajectory("NaN 1 2 3 0 0 0 1"),
            Err(TrajectoryError::MalformedLine { .. })
        ));
    }

    #[test]
    fn comments_blank_lines_and_crlf() {
        let text = "# timestamp tx ty tz qx qy qz qw\r\n\r\n0 0 0 0 0 0 0 1\r\n1 1 0 0 0 0 0 1\r\n";
        let t = parse_trajectory(text).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn empty_and_non_monotonic() {
        assert_eq!(
            parse_trajectory("# nothing\n").unwrap_err(),
            TrajectoryError::EmptyTrajectory
        );
        assert!(matches!(
            parse_trajectory("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n"),
            Err(TrajectoryError::NonMonotonicTimestamps { line: 2, .. })
        ));
    }

    #[test]
    fn quaternion_norm_policy() {
        let t = parse_trajectory("0 0 0 0 0 0 0 1.0005").unwrap();
        assert!((t.poses()[0].rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        assert!(matches!(
            parse_trajectory("0 0 0 0 0 0 0 1.01"),
            Err(TrajectoryError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.0, 9), "0");
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(-2.5, 9), "-2.5");
        assert_eq!(format_significant(1234.567891234, 9), "1234.56789");
        assert_eq!(format_significant(1.23456789123e-5, 9), "0.0000123456789");
        assert_eq!(format_significant(9.9999999996, 9), "10");
    }

    #[test]
    fn translations_by_selection() {
        let t = traj(&[0.0, 1.0, 2.0]);
        assert_eq!(
            t.translations(&[2, 0]).unwrap(),
            vec![Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.0)]
        );
        assert!(t.translations(&[]).unwrap().is_empty());
        assert_eq!(
            t.translations(&[3]).unwrap_err(),
            TrajectoryError::IndexOutOfRange { index: 3, len: 3 }
        );
        let single = traj(&[5.0]);
        assert_eq!(single.translations(&[0]).unwrap().len(), 1);
    }

    #[test]
    fn associate_exact_and_disjoint() {
        let a = traj(&[0.0, 0.1, 0.2, 0.3]);
        let assoc = associate(&a, &a, DEFAULT_MAX_TIME_OFFSET);
        assert_eq!(assoc.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);

        let shifted = traj(&[10.0, 10.1, 10.2, 10.3]);
        assert!(associate(&a, &shifted, DEFAULT_MAX_TIME_OFFSET).is_empty());
    }

    #[test]
    fn associate_skips_unmatched_middle() {
        let a = traj(&[0.00, 0.10, 0.20]);
        let b = traj(&[0.01, 0.22]);
        assert_eq!(associate(&a, &b, 0.02).pairs, vec![(0, 0), (2, 1)]);
    }

    #[test]
    fn associate_prefers_nearer_successor() {
        let a = traj(&[0.000, 0.015]);
        let b = traj(&[0.014]);
        assert_eq!(associate(&a, &b, 0.02).pairs, vec![(1, 0)]);
        assert_eq!(associate(&b, &a, 0.02).pairs, vec![(0, 1)]);
    }

    #[test]
    fn associate_keeps_cardinality_over_nearness() {
        // a0 can only reach b0; a1 is nearer b0 but also reaches b1.
        let a = traj(&[0.000, 0.015]);
        let b = traj(&[0.014, 0.030]);
        assert_eq!(associate(&a, &b, 0.02).pairs, vec![(0, 0), (1, 1)]);
    }
}
