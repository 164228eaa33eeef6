//! The landmark template: canonical 2-d points in the unit square, semantic
//! polylines over them, and spring edges with rest lengths.
//!
//! Coordinates are normalized to `[0, 1]` relative to image width/height
//! (origin top-left, y downward) so templates are resolution independent;
//! conversion to pixels happens in the renderer and exporters only.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Named polyline over landmark indices, drawn in `color` (rgb in `[0,1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticLine {
    pub name: String,
    pub indices: Vec<usize>,
    pub color: [f64; 3],
}

/// Undirected spring between two landmarks; `rest_length` is the canonical
/// distance between its endpoints, fixed at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringEdge {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub n_landmarks: usize,
    pub points: Vec<[f64; 2]>,
    pub lines: Vec<SemanticLine>,
    pub springs: Vec<SpringEdge>,
    pub spring_constant: f64,
}

/// On-disk form. `springs` is optional; when absent, springs are derived
/// from consecutive indices of every line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    version: u32,
    n_landmarks: usize,
    points: Vec<[f64; 2]>,
    lines: Vec<SemanticLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    springs: Option<Vec<[usize; 2]>>,
    #[serde(default = "default_spring_constant")]
    spring_constant: f64,
}

fn default_spring_constant() -> f64 {
    1.0
}

/// Machine-readable invariant violation reported by [`validate_template`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A line or spring references a landmark index `>= n_landmarks`.
    IndexOutOfRange { index: usize },
    /// A spring edge connects a landmark to itself.
    SelfEdge { i: usize },
    /// The same undirected spring edge appears more than once.
    DupEdge { i: usize, j: usize },
    /// A template point lies outside the unit square.
    PointOutOfRange { index: usize },
    /// Fewer than 2 landmarks.
    TooFewLandmarks { n: usize },
    /// `points.len() != n_landmarks`.
    PointCountMismatch { expected: usize, actual: usize },
    /// A line has fewer than 2 indices.
    LineTooShort { name: String },
    /// A line repeats the same index consecutively.
    ImmediateRepeat { name: String, position: usize },
    /// Stored rest length disagrees with the point distance.
    RestLengthMismatch { i: usize, j: usize },
    /// A line color channel is outside `[0, 1]`.
    ColorOutOfRange { name: String },
    /// Negative spring constant.
    NegativeSpringConstant,
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::IndexOutOfRange { .. } => "E_INDEX",
            Violation::SelfEdge { .. } => "E_SELF_EDGE",
            Violation::DupEdge { .. } => "E_DUP_EDGE",
            Violation::PointOutOfRange { .. } => "E_RANGE",
            Violation::TooFewLandmarks { .. } => "E_EMPTY",
            Violation::PointCountMismatch { .. } => "E_COUNT",
            Violation::LineTooShort { .. } => "E_LINE_SHORT",
            Violation::ImmediateRepeat { .. } => "E_LINE_REPEAT",
            Violation::RestLengthMismatch { .. } => "E_REST_LENGTH",
            Violation::ColorOutOfRange { .. } => "E_COLOR",
            Violation::NegativeSpringConstant => "E_SPRING_CONST",
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Template {
    /// Builds a validated template from raw parts, deriving springs from
    /// consecutive line indices when `explicit_springs` is `None`.
    pub fn from_parts(
        n_landmarks: usize,
        points: Vec<[f64; 2]>,
        lines: Vec<SemanticLine>,
        explicit_springs: Option<Vec<[usize; 2]>>,
        spring_constant: f64,
    ) -> Result<Template> {
        if n_landmarks < 2 {
            return Err(Error::Empty(n_landmarks));
        }
        if points.len() != n_landmarks {
            return Err(Error::Parse(format!(
                "n_landmarks is {} but {} points given",
                n_landmarks,
                points.len()
            )));
        }
        for p in &points {
            if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[0] > 1.0 || p[1] < 0.0 || p[1] > 1.0 {
                return Err(Error::Range(*p));
            }
        }
        if !spring_constant.is_finite() || spring_constant < 0.0 {
            return Err(Error::Parse(format!(
                "spring_constant must be a non-negative real, got {spring_constant}"
            )));
        }
        for line in &lines {
            if line.indices.len() < 2 {
                return Err(Error::Parse(format!("line '{}' has fewer than 2 indices", line.name)));
            }
            for &idx in &line.indices {
                if idx >= n_landmarks {
                    return Err(Error::Index { index: idx, n_landmarks });
                }
            }
            for pair in line.indices.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::Parse(format!(
                        "line '{}' repeats index {} consecutively",
                        line.name, pair[0]
                    )));
                }
            }
            if line.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Parse(format!("line '{}' color outside [0,1]", line.name)));
            }
        }
        let raw_edges: Vec<[usize; 2]> = match explicit_springs {
            Some(edges) => edges,
            None => lines
                .iter()
                .flat_map(|l| l.indices.windows(2).map(|w| [w[0], w[1]]))
                .collect(),
        };
        let mut seen = HashSet::new();
        let mut springs = Vec::new();
        for [i, j] in raw_edges {
            if i >= n_landmarks {
                return Err(Error::Index { index: i, n_landmarks });
            }
            if j >= n_landmarks {
                return Err(Error::Index { index: j, n_landmarks });
            }
            if i == j {
                return Err(Error::Parse(format!("spring edge ({i}, {j}) connects a landmark to itself")));
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                springs.push(SpringEdge {
                    i: key.0,
                    j: key.1,
                    rest_length: dist(points[key.0], points[key.1]),
                });
            }
        }
        Ok(Template {
            n_landmarks,
            points,
            lines,
            springs,
            spring_constant,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Template> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Template::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Template> {
        let file: TemplateFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.version != 1 {
            return Err(Error::Parse(format!("unsupported template version {}", file.version)));
        }
        Template::from_parts(
            file.n_landmarks,
            file.points,
            file.lines,
            file.springs,
            file.spring_constant,
        )
    }

    pub fn to_json(&self) -> String {
        let file = TemplateFile {
            version: 1,
            n_landmarks: self.n_landmarks,
            points: self.points.clone(),
            lines: self.lines.clone(),
            springs: Some(self.springs.iter().map(|s| [s.i, s.j]).collect()),
            spring_constant: self.spring_constant,
        };
        serde_json::to_string_pretty(&file).expect("template serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Canonical points as an `N x 2` array in the requested scalar type.
    pub fn points_array<F: Scalar>(&self) -> Array2<F> {
        let mut arr = Array2::zeros((self.n_landmarks, 2));
        for (i, p) in self.points.iter().enumerate() {
            arr[[i, 0]] = F::from_f64(p[0]);
            arr[[i, 1]] = F::from_f64(p[1]);
        }
        arr
    }

    /// Every invariant violation in this template; empty when valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n_landmarks < 2 {
            out.push(Violation::TooFewLandmarks { n: self.n_landmarks });
        }
        if self.points.len() != self.n_landmarks {
            out.push(Violation::PointCountMismatch {
                expected: self.n_landmarks,
                actual: self.points.len(),
            });
        }
        for (idx, p) in self.points.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite())
                || p[0] < 0.0
                || p[0] > 1.0
                || p[1] < 0.0
                || p[1] > 1.0
            {
                out.push(Violation::PointOutOfRange { index: idx });
            }
        }
        if !(self.spring_constant.is_finite() && self.spring_constant >= 0.0) {
            out.push(Violation::NegativeSpringConstant);
        }
        for line in &self.lines {
            if line.indices.len() < 2 {
                out.push(Violation::LineTooShort { name: line.name.clone() });
            }
            for &idx in &line.indices {
                if idx >= self.n_landmarks {
                    out.push(Violation::IndexOutOfRange { index: idx });
                }
            }
            for (pos, pair) in line.indices.windows(2).enumerate() {
                if pair[0] == pair[1] {
                    out.push(Violation::ImmediateRepeat {
                        name: line.name.clone(),
                        position: pos,
                    });
                }
            }
            if line.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                out.push(Violation::ColorOutOfRange { name: line.name.clone() });
            }
        }
        let mut seen = HashSet::new();
        for s in &self.springs {
            if s.i >= self.n_landmarks {
                out.push(Violation::IndexOutOfRange { index: s.i });
            }
            if s.j >= self.n_landmarks {
                out.push(Violation::IndexOutOfRange { index: s.j });
            }
            if s.i == s.j {
                out.push(Violation::SelfEdge { i: s.i });
            }
            let key = (s.i.min(s.j), s.i.max(s.j));
            if !seen.insert(key) {
                out.push(Violation::DupEdge { i: s.i, j: s.j });
            }
            if s.i < self.points.len() && s.j < self.points.len() {
                let d = dist(self.points[s.i], self.points[s.j]);
                if (d - s.rest_length).abs() > 1e-12 {
                    out.push(Violation::RestLengthMismatch { i: s.i, j: s.j });
                }
            }
        }
        out
    }
}

/// Adds per-landmark offsets to the canonical points. Positions are not
/// clamped; off-image strokes are the renderer's concern.
pub fn apply_deformation<F: Scalar>(t: &Template, delta: &ArrayView2<'_, F>) -> Result<Array2<F>> {
    if delta.dim() != (t.n_landmarks, 2) {
        return Err(Error::Shape(format!(
            "delta must be {}x2, got {}x{}",
            t.n_landmarks,
            delta.dim().0,
            delta.dim().1
        )));
    }
    Ok(&t.points_array::<F>() + delta)
}
