//! Evaluation: landmark error against ground truth, temporal jitter (raw and
//! detrended), and the composed report over a checkpoint and a dataset.

use crate::data::{load_gt, GtRecord};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Ordered per-frame landmark positions in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    pub frame_ids: Vec<u64>,
    /// One `N x 2` array per frame.
    pub points: Vec<Array2<f64>>,
}

impl LandmarkTrack {
    pub fn new(frame_ids: Vec<u64>, points: Vec<Array2<f64>>) -> Result<Self> {
        if frame_ids.len() != points.len() {
            return Err(Error::Shape("frame id / points length mismatch".into()));
        }
        if frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("frame ids must be strictly increasing".into()));
        }
        if let Some(first) = points.first() {
            let n = first.nrows();
            if points.iter().any(|p| p.dim() != (n, 2)) {
                return Err(Error::Shape("landmark count varies across frames".into()));
            }
        }
        Ok(LandmarkTrack { frame_ids, points })
    }

    pub fn from_gt(records: &[GtRecord]) -> Result<Self> {
        let frame_ids = records.iter().map(|r| r.frame as u64).collect();
        let points = records
            .iter()
            .map(|r| {
                let mut arr = Array2::zeros((r.points_px.len(), 2));
                for (i, p) in r.points_px.iter().enumerate() {
                    arr[[i, 0]] = p[0];
                    arr[[i, 1]] = p[1];
                }
                arr
            })
            .collect();
        LandmarkTrack::new(frame_ids, points)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        LandmarkTrack::from_gt(&load_gt(path)?)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (id, pts) in self.frame_ids.iter().zip(&self.points) {
            let rec = GtRecord {
                frame: *id as usize,
                points_px: pts.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
            };
            writeln!(f, "{}", serde_json::to_string(&rec).unwrap())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.points.first().map(|p| p.nrows()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub per_frame_px: Vec<f64>,
    pub mean_px: f64,
    pub median_px: f64,
    pub mean_frac_width: f64,
    pub median_frac_width: f64,
    pub per_landmark_px: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-frame mean Euclidean landmark distance between two aligned tracks.
pub fn landmark_error(
    pred: &LandmarkTrack,
    gt: &LandmarkTrack,
    image_width: usize,
) -> Result<ErrorStats> {
    if pred.n_landmarks() != gt.n_landmarks() {
        return Err(Error::Shape(format!(
            "landmark counts differ: {} vs {}",
            pred.n_landmarks(),
            gt.n_landmarks()
        )));
    }
    if pred.frame_ids != gt.frame_ids {
        return Err(Error::Align(format!(
            "{} vs {} frames or differing ids",
            pred.n_frames(),
            gt.n_frames()
        )));
    }
    let n = pred.n_landmarks();
    let mut per_frame = Vec::with_capacity(pred.n_frames());
    let mut per_landmark = vec![0.0; n];
    for (p, g) in pred.points.iter().zip(&gt.points) {
        let mut acc = 0.0;
        for k in 0..n {
            let d = ((p[[k, 0]] - g[[k, 0]]).powi(2) + (p[[k, 1]] - g[[k, 1]]).powi(2)).sqrt();
            acc += d;
            per_landmark[k] += d;
        }
        per_frame.push(acc / n as f64);
    }
    for v in &mut per_landmark {
        *v /= pred.n_frames() as f64;
    }
    let mean_px = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    let median_px = median(&per_frame);
    let w = image_width as f64;
    Ok(ErrorStats {
        mean_px,
        median_px,
        mean_frac_width: mean_px / w,
        median_frac_width: median_px / w,
        per_frame_px: per_frame,
        per_landmark_px: per_landmark,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JitterStats {
    /// Mean over landmarks of the mean consecutive-frame displacement.
    pub raw_px: f64,
    /// Same statistic after subtracting each landmark's 5-frame centered
    /// moving average; separates motion from noise. Falls back to the raw
    /// value when the track is too short for full windows.
    pub detrended_px: f64,
    pub per_landmark_raw_px: Vec<f64>,
}

const DETREND_WINDOW: usize = 5;

/// Frame-to-frame landmark displacement statistics; needs >= 2 frames.
pub fn temporal_jitter(track: &LandmarkTrack) -> Result<JitterStats> {
    let frames = track.n_frames();
    if frames < 2 {
        return Err(Error::Short(frames));
    }
    let n = track.n_landmarks();
    let mut per_landmark = vec![0.0; n];
    for w in track.points.windows(2) {
        for k in 0..n {
            per_landmark[k] += ((w[1][[k, 0]] - w[0][[k, 0]]).powi(2)
                + (w[1][[k, 1]] - w[0][[k, 1]]).powi(2))
            .sqrt();
        }
    }
    for v in &mut per_landmark {
        *v /= (frames - 1) as f64;
    }
    let raw = per_landmark.iter().sum::<f64>() / n as f64;

    // Residuals against the centered moving average, interior frames only
    // (full windows), so smooth motion cancels exactly.
    let half = DETREND_WINDOW / 2;
    let detrended = if frames >= DETREND_WINDOW + 1 {
        let mut residuals: Vec<Array2<f64>> = Vec::new();
        for ti in half..frames - half {
            let mut ma = Array2::<f64>::zeros((n, 2));
            for w in 0..DETREND_WINDOW {
                ma = ma + &track.points[ti - half + w];
            }
            ma.mapv_inplace(|v| v / DETREND_WINDOW as f64);
            residuals.push(&track.points[ti] - &ma);
        }
        let mut acc = 0.0;
        let mut count = 0usize;
        for w in residuals.windows(2) {
            for k in 0..n {
                acc += ((w[1][[k, 0]] - w[0][[k, 0]]).powi(2)
                    + (w[1][[k, 1]] - w[0][[k, 1]]).powi(2))
                .sqrt();
                count += 1;
            }
        }
        if count > 0 {
            acc / count as f64
        } else {
            raw
        }
    } else {
        raw
    };
    Ok(JitterStats {
        raw_px: raw,
        detrended_px: detrended,
        per_landmark_raw_px: per_landmark,
    })
}

/// Full evaluation output; serialized as JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_frames: usize,
    pub n_landmarks: usize,
    pub image_width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter: Option<JitterStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_jitter: Option<JitterStats>,
    /// Echo of the inputs that produced this report.
    pub checkpoint: String,
    pub data: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_of(frames: usize, f: impl Fn(usize, usize) -> [f64; 2]) -> LandmarkTrack {
        let points = (0..frames)
            .map(|t| {
                let mut arr = Array2::zeros((3, 2));
                for k in 0..3 {
                    let p = f(t, k);
                    arr[[k, 0]] = p[0];
                    arr[[k, 1]] = p[1];
                }
                arr
            })
            .collect();
        LandmarkTrack::new((0..frames as u64).collect(), points).unwrap()
    }

    #[test]
    fn identical_tracks_have_zero_error() {
        let t = track_of(4, |ti, k| [ti as f64 + k as f64, 2.0 * k as f64]);
        let e = landmark_error(&t, &t, 64).unwrap();
        assert_eq!(e.mean_px, 0.0);
        assert_eq!(e.median_px, 0.0);
    }

    #[test]
    fn constant_offset_is_pythagorean() {
        let gt = track_of(3, |ti, k| [ti as f64, k as f64]);
        let pred = track_of(3, |ti, k| [ti as f64 + 3.0, k as f64 + 4.0]);
        let e = landmark_error(&pred, &gt, 100).unwrap();
        assert!((e.mean_px - 5.0).abs() < 1e-12);
        assert!((e.mean_frac_width - 0.05).abs() < 1e-12);
    }

    #[test]
    fn landmark_count_mismatch_is_shape_error() {
        let a = track_of(2, |_, _| [0.0, 0.0]);
        let mut b = a.clone();
        b.points = b.points.iter().map(|_| Array2::zeros((4, 2))).collect();
        assert!(matches!(landmark_error(&a, &b, 64), Err(Error::Shape(_))));
    }

    #[test]
    fn frame_id_mismatch_is_align_error() {
        let a = track_of(2, |_, _| [0.0, 0.0]);
        let mut b = a.clone();
        b.frame_ids = vec![0, 5];
        assert!(matches!(landmark_error(&a, &b, 64), Err(Error::Align(_))));
    }

    #[test]
    fn error_is_symmetric_and_triangle() {
        let a = track_of(3, |t, k| [t as f64 * 0.3, k as f64 * 1.7]);
        let b = track_of(3, |t, k| [t as f64 * 0.3 + 2.0, k as f64 * 1.7 - 1.0]);
        let c = track_of(3, |t, k| [t as f64 * 0.3 - 1.0, k as f64 * 1.7 + 4.0]);
        let ab = landmark_error(&a, &b, 64).unwrap().mean_px;
        let ba = landmark_error(&b, &a, 64).unwrap().mean_px;
        assert_eq!(ab, ba);
        let ac = landmark_error(&a, &c, 64).unwrap().mean_px;
        let cb = landmark_error(&c, &b, 64).unwrap().mean_px;
        assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn static_track_has_zero_jitter() {
        let t = track_of(8, |_, k| [k as f64, 1.0]);
        let j = temporal_jitter(&t).unwrap();
        assert_eq!(j.raw_px, 0.0);
        assert_eq!(j.detrended_px, 0.0);
    }

    #[test]
    fn constant_velocity_has_unit_raw_and_zero_detrended() {
        let t = track_of(20, |ti, k| [ti as f64, k as f64]);
        let j = temporal_jitter(&t).unwrap();
        assert!((j.raw_px - 1.0).abs() < 1e-12);
        assert!(j.detrended_px.abs() < 1e-12);
    }

    #[test]
    fn single_frame_is_short_error() {
        let t = track_of(1, |_, _| [0.0, 0.0]);
        assert!(matches!(temporal_jitter(&t), Err(Error::Short(1))));
    }

    #[test]
    fn jitter_invariant_under_global_translation() {
        let a = track_of(12, |ti, k| [(ti as f64 * 0.7).sin() * 3.0, k as f64 + ti as f64 * 0.1]);
        let b = LandmarkTrack::new(
            a.frame_ids.clone(),
            a.points.iter().map(|p| p.mapv(|v| v + 11.5)).collect(),
        )
        .unwrap();
        let ja = temporal_jitter(&a).unwrap();
        let jb = temporal_jitter(&b).unwrap();
        assert!((ja.raw_px - jb.raw_px).abs() < 1e-12);
        assert!((ja.detrended_px - jb.detrended_px).abs() < 1e-12);
    }
}
