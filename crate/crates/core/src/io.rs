//! Text match files, ground-truth sidecars and JSON run reports.
//!
//! Match file layout:
//!
//! ```text
//! # problem: homography
//! # canvas: 640 480
//! x_p y_p x_q y_q
//! ```
//!
//! Rigid files use `# problem: rigid3d` and six columns
//! `p_x p_y p_z q_x q_y q_z`. Any other `#` line is a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{EstimateResult, EstimatorConfig};
use crate::error::{Error, Result};
use crate::geometry::{Match2D, Match3D, MatchSet, Model, Point2, Point3, ProblemKind};
use crate::synth::{GroundTruth, InstanceSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchFile {
    pub matches: MatchSet,
    pub canvas: Option<(f64, f64)>,
}

pub fn format_matches(set: &MatchSet, canvas: Option<(f64, f64)>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# problem: {}", set.kind());
    if let Some((w, h)) = canvas {
        let _ = writeln!(out, "# canvas: {w} {h}");
    }
    match set {
        MatchSet::Homography(ms) => {
            for m in ms {
                let _ = writeln!(out, "{} {} {} {}", m.p.x, m.p.y, m.q.x, m.q.y);
            }
        }
        MatchSet::Rigid3d(ms) => {
            for m in ms {
                let _ = writeln!(out, "{} {} {} {} {} {}", m.p.x, m.p.y, m.p.z, m.q.x, m.q.y, m.q.z);
            }
        }
    }
    out
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_reals(line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(parse_error(line_no, format!("non-finite value '{f}'"))),
            Err(_) => Err(parse_error(line_no, format!("cannot parse '{f}' as a number"))),
        })
        .collect()
}

pub fn parse_matches(text: &str) -> Result<MatchFile> {
    let mut kind: Option<ProblemKind> = None;
    let mut canvas = None;
    let mut m2 = Vec::new();
    let mut m3 = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(value) = comment.strip_prefix("problem:") {
                if kind.is_some() {
                    return Err(parse_error(line_no, "duplicate problem header"));
                }
                kind = Some(value.trim().parse().map_err(|_| {
                    parse_error(line_no, format!("unknown problem '{}'", value.trim()))
                })?);
            } else if let Some(value) = comment.strip_prefix("canvas:") {
                let fields: Vec<&str> = value.split_whitespace().collect();
                let v = parse_reals(line_no, &fields)?;
                if v.len() != 2 || v[0] <= 0.0 || v[1] <= 0.0 {
                    return Err(parse_error(line_no, "canvas needs two positive numbers"));
                }
                canvas = Some((v[0], v[1]));
            }
            continue;
        }
        let Some(k) = kind else {
            return Err(parse_error(line_no, "data before '# problem:' header"));
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let want = match k {
            ProblemKind::Homography => 4,
            ProblemKind::Rigid3d => 6,
        };
        if fields.len() != want {
            return Err(parse_error(
                line_no,
                format!("expected {want} columns for {k}, found {}", fields.len()),
            ));
        }
        let v = parse_reals(line_no, &fields)?;
        match k {
            ProblemKind::Homography => {
                m2.push(Match2D::new(Point2::new(v[0], v[1]), Point2::new(v[2], v[3])))
            }
            ProblemKind::Rigid3d => m3.push(Match3D::new(
                Point3::new(v[0], v[1], v[2]),
                Point3::new(v[3], v[4], v[5]),
            )),
        }
    }
    let matches = match kind {
        None => return Err(parse_error(1, "missing '# problem: homography|rigid3d' header")),
        Some(ProblemKind::Homography) => MatchSet::Homography(m2),
        Some(ProblemKind::Rigid3d) => MatchSet::Rigid3d(m3),
    };
    Ok(MatchFile { matches, canvas })
}

pub fn read_matches(path: &Path) -> Result<MatchFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matches(&text)
}

pub fn write_matches(path: &Path, set: &MatchSet, canvas: Option<(f64, f64)>) -> Result<()> {
    fs::write(path, format_matches(set, canvas)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// `dir/name.txt` -> `dir/name.truth.json`.
pub fn truth_path(match_path: &Path) -> PathBuf {
    let stem = match_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match_path.with_file_name(format!("{stem}.truth.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format_version: u32,
    pub problem: ProblemKind,
    pub model: Model,
    pub inlier_count: usize,
    pub inlier_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<InstanceSpec>,
}

impl TruthFile {
    pub fn new(truth: &GroundTruth, spec: Option<InstanceSpec>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            problem: truth.model.kind(),
            model: truth.model,
            inlier_count: truth.inlier_mask.iter().filter(|&&b| b).count(),
            inlier_mask: truth.inlier_mask.clone(),
            spec,
        }
    }
}

pub fn write_truth(path: &Path, truth: &TruthFile) -> Result<()> {
    let json = serde_json::to_string_pretty(truth).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let truth: TruthFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if truth.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported format_version {}", truth.format_version),
        });
    }
    Ok(truth)
}

/// Single JSON object written by `run`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    pub format_version: u32,
    pub input: Option<String>,
    pub config: &'a EstimatorConfig,
    #[serde(flatten)]
    pub result: &'a EstimateResult,
    /// Fraction of ground-truth inliers recovered, when a truth file exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_recall: Option<f64>,
}

pub fn report_json(report: &RunReport<'_>) -> String {
    serde_json::to_string_pretty(report).expect("report is serializable")
}

/// Fraction of planted inliers that the estimated mask also marks as inliers.
pub fn recall(estimated: &[bool], planted: &[bool]) -> f64 {
    let planted_count = planted.iter().filter(|&&b| b).count();
    if planted_count == 0 {
        return 1.0;
    }
    let hit = estimated.iter().zip(planted).filter(|(&a, &b)| a && b).count();
    hit as f64 / planted_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth;

    #[test]
    fn round_trip_is_bit_exact() {
        for spec in [InstanceSpec::homography(300, 0.3, 1.0, 5), InstanceSpec::rigid(300, 0.3, 0.5, 5)] {
            let inst = synth(&spec).unwrap();
            let text = format_matches(&inst.matches, Some((640.0, 480.0)));
            let back = parse_matches(&text).unwrap();
            assert_eq!(back.matches, inst.matches);
            assert_eq!(back.canvas, Some((640.0, 480.0)));
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "# a comment\n# problem: homography\n\n1 2 3 4\n  # another\n5 6 7 8\n";
        let f = parse_matches(text).unwrap();
        assert_eq!(f.matches.len(), 2);
        assert_eq!(f.canvas, None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("1 2 3 4\n", 1),
            ("# problem: homography\n1 2 3\n", 2),
            ("# problem: rigid3d\n1 2 3 4 5 6\n1 2 3 4 5 x\n", 3),
            ("# problem: plane\n", 1),
            ("# problem: homography\n1 2 3 inf\n", 2),
            ("# problem: homography\n# canvas: 640\n", 2),
            ("", 1),
        ];
        for (text, line) in cases {
            match parse_matches(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn truth_sidecar_name() {
        assert_eq!(truth_path(Path::new("/tmp/a/inst.txt")), PathBuf::from("/tmp/a/inst.truth.json"));
        assert_eq!(truth_path(Path::new("inst")), PathBuf::from("inst.truth.json"));
    }

    #[test]
    fn truth_json_round_trip() {
        let inst = synth(&InstanceSpec::rigid(20, 0.5, 0.5, 2)).unwrap();
        let t = TruthFile::new(&inst.truth, Some(inst.spec));
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("{\"format_version\":1,"));
        assert!(json.contains("\"type\":\"rigid3d\""));
        let back: TruthFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.inlier_count, 10);
    }

    #[test]
    fn recall_counts_planted_hits() {
        assert_eq!(recall(&[true, true, false, false], &[true, false, true, false]), 0.5);
        assert_eq!(recall(&[false], &[false]), 1.0);
    }
}
