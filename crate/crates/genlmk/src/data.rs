//! Unpaired marked/unmarked frame ingestion and the synthetic benchmark:
//! textured ellipse blobs under random similarity poses, with marker
//! polylines drawn by the same stroke model the renderer uses, plus
//! ground-truth landmark positions for every unmarked frame.

use crate::error::{Error, Result};
use crate::renderer::{render, RenderSettings};
use crate::scalar::Scalar;
use crate::template::{SemanticLine, Template};
use ndarray::{Array2, Array3, Array4, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Image file I/O.
// ---------------------------------------------------------------------------

/// Loads a PNG frame as `3 x h x w` in `[-1, 1]`, resizing if needed.
pub fn load_image<F: Scalar>(path: &Path, resolution: [usize; 2]) -> Result<Array3<F>> {
    let img = image::open(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .to_rgb8();
    let [h, w] = resolution;
    let img = if (img.height() as usize, img.width() as usize) != (h, w) {
        image::imageops::resize(&img, w as u32, h as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let mut out = Array3::zeros((3, h, w));
    for iy in 0..h {
        for ix in 0..w {
            let p = img.get_pixel(ix as u32, iy as u32);
            for c in 0..3 {
                out[[c, iy, ix]] = F::from_f64(p[c] as f64 / 255.0 * 2.0 - 1.0);
            }
        }
    }
    Ok(out)
}

/// Writes a `3 x h x w` image in `[-1, 1]` as an 8-bit PNG.
pub fn save_image<F: Scalar>(img: &ArrayView3<'_, F>, path: &Path) -> Result<()> {
    let (_, h, w) = img.dim();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for iy in 0..h {
        for ix in 0..w {
            let px = [
                quantize(img[[0, iy, ix]]),
                quantize(img[[1, iy, ix]]),
                quantize(img[[2, iy, ix]]),
            ];
            out.put_pixel(ix as u32, iy as u32, image::Rgb(px));
        }
    }
    out.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn quantize<F: Scalar>(v: F) -> u8 {
    ((v.to_f64() + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Frame files of a directory in ascending filename order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    frames.sort();
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Unpaired dataset.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub marked_dir: PathBuf,
    pub unmarked_dir: PathBuf,
    pub resolution: [usize; 2],
    /// Horizontal flip is off by default: landmark identity is chiral.
    #[serde(default)]
    pub hflip: bool,
}

/// Two independent in-memory frame collections with no pairing. Sampling
/// order is a pure function of the caller's RNG.
#[derive(Debug)]
pub struct UnpairedDataset<F: Scalar> {
    pub marked: Vec<Array3<F>>,
    pub unmarked: Vec<Array3<F>>,
    pub resolution: [usize; 2],
    hflip: bool,
}

fn load_dir<F: Scalar>(dir: &Path, resolution: [usize; 2]) -> Result<Vec<Array3<F>>> {
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    frames.iter().map(|p| load_image(p, resolution)).collect()
}

impl<F: Scalar> UnpairedDataset<F> {
    pub fn load(cfg: &DatasetConfig) -> Result<Self> {
        Ok(UnpairedDataset {
            marked: load_dir(&cfg.marked_dir, cfg.resolution)?,
            unmarked: load_dir(&cfg.unmarked_dir, cfg.resolution)?,
            resolution: cfg.resolution,
            hflip: cfg.hflip,
        })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.marked.len(), self.unmarked.len())
    }

    fn sample_from(&self, pool: &[Array3<F>], rng: &mut ChaCha8Rng, batch: usize) -> Array4<F> {
        let [h, w] = self.resolution;
        let mut out = Array4::zeros((batch, 3, h, w));
        for bi in 0..batch {
            let idx = rng.gen_range(0..pool.len());
            let mut frame = pool[idx].clone();
            if self.hflip && rng.gen_bool(0.5) {
                frame.invert_axis(ndarray::Axis(2));
            }
            out.index_axis_mut(ndarray::Axis(0), bi).assign(&frame);
        }
        out
    }

    pub fn sample_marked(&self, rng: &mut ChaCha8Rng, batch: usize) -> Array4<F> {
        self.sample_from(&self.marked, rng, batch)
    }

    pub fn sample_unmarked(&self, rng: &mut ChaCha8Rng, batch: usize) -> Array4<F> {
        self.sample_from(&self.unmarked, rng, batch)
    }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MotionMode {
    Static,
    Linear { velocity_px: f64 },
    Sinusoidal { amplitude_px: f64, period: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseRanges {
    pub center_jitter: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rot_range: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        PoseRanges { center_jitter: 0.08, scale_min: 0.85, scale_max: 1.15, rot_range: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Frames per domain.
    pub n_frames: usize,
    /// Square frame size in pixels.
    pub resolution: usize,
    pub seed: u64,
    pub motion: MotionMode,
    /// Uniform background noise amplitude in `[-1, 1]` value space.
    pub noise_amplitude: f64,
    pub pose: PoseRanges,
    /// Stroke settings used to draw the markers on marked frames; keep in
    /// sync with the training render settings so the domains are bridgeable.
    pub marker: RenderSettings,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 500,
            resolution: 64,
            seed: 1,
            motion: MotionMode::Static,
            noise_amplitude: 0.05,
            pose: PoseRanges::default(),
            marker: RenderSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub rot: f64,
}

const ELLIPSE_A: f64 = 0.28;
const ELLIPSE_B: f64 = 0.18;
const N_SYNTH_LANDMARKS: usize = 8;

/// The benchmark template: 8 landmarks on the canonical ellipse rim, two
/// colored arcs closing the loop.
pub fn synth_template() -> Template {
    let mut points = Vec::new();
    for k in 0..N_SYNTH_LANDMARKS {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / N_SYNTH_LANDMARKS as f64;
        points.push([0.5 + ELLIPSE_A * theta.cos(), 0.5 + ELLIPSE_B * theta.sin()]);
    }
    Template::from_parts(
        N_SYNTH_LANDMARKS,
        points,
        vec![
            SemanticLine {
                name: "rim-a".into(),
                indices: vec![0, 1, 2, 3, 4],
                color: [0.95, 0.2, 0.2],
            },
            SemanticLine {
                name: "rim-b".into(),
                indices: vec![4, 5, 6, 7, 0],
                color: [0.2, 0.8, 0.95],
            },
        ],
        None,
        1.0,
    )
    .expect("synth template is valid")
}

/// Landmark positions (normalized) of the template under a similarity pose.
pub fn posed_landmarks(t: &Template, pose: &Pose) -> Array2<f64> {
    let (s, c) = (pose.rot.sin(), pose.rot.cos());
    let mut out = Array2::zeros((t.n_landmarks, 2));
    for (i, p) in t.points.iter().enumerate() {
        let x = p[0] - 0.5;
        let y = p[1] - 0.5;
        out[[i, 0]] = pose.cx + pose.scale * (c * x - s * y);
        out[[i, 1]] = pose.cy + pose.scale * (s * x + c * y);
    }
    out
}

fn draw_pose(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Pose {
    let j = cfg.pose.center_jitter;
    Pose {
        cx: 0.5 + rng.gen_range(-j..=j),
        cy: 0.5 + rng.gen_range(-j..=j),
        scale: rng.gen_range(cfg.pose.scale_min..=cfg.pose.scale_max),
        rot: rng.gen_range(-cfg.pose.rot_range..=cfg.pose.rot_range),
    }
}

/// Renders the textured ellipse blob for a pose, background noise included.
pub fn render_shape(cfg: &SynthConfig, pose: &Pose, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let res = cfg.resolution;
    let mut img = Array3::zeros((3, res, res));
    let (s, c) = (pose.rot.sin(), pose.rot.cos());
    for iy in 0..res {
        for ix in 0..res {
            let u = (ix as f64 + 0.5) / res as f64 - pose.cx;
            let v = (iy as f64 + 0.5) / res as f64 - pose.cy;
            // Into the shape's local frame.
            let qx = (c * u + s * v) / pose.scale;
            let qy = (-s * u + c * v) / pose.scale;
            let e = (qx / ELLIPSE_A).powi(2) + (qy / ELLIPSE_B).powi(2);
            let cov = ((1.06 - e) / 0.12).clamp(0.0, 1.0);
            // Texture gradient along the local axes makes pose observable.
            let shade = 0.15 + 0.55 * (qx / ELLIPSE_A) * 0.5 + 0.25 * (qy / ELLIPSE_B) * 0.5;
            let interior = [shade, shade * 0.75 - 0.05, shade * 0.5 - 0.15];
            for ch in 0..3 {
                let bg = -0.6 + rng.gen_range(-cfg.noise_amplitude..=cfg.noise_amplitude);
                img[[ch, iy, ix]] = (bg * (1.0 - cov) + interior[ch] * cov).clamp(-1.0, 1.0);
            }
        }
    }
    img
}

/// Draws the marker strokes for a pose onto a shape image using the shared
/// stroke model.
pub fn draw_markers(
    t: &Template,
    pose: &Pose,
    image: &Array3<f64>,
    marker: &RenderSettings,
) -> Result<Array3<f64>> {
    let gt = posed_landmarks(t, pose);
    let delta = &gt - &t.points_array::<f64>();
    render(&delta.view(), t, &image.view(), marker)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub n_marked: usize,
    pub n_unmarked: usize,
    pub seed: u64,
    pub resolution: usize,
    pub config: SynthConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GtRecord {
    pub frame: usize,
    pub points_px: Vec<[f64; 2]>,
}

fn write_frame(dir: &Path, index: usize, img: &Array3<f64>) -> Result<()> {
    let path = dir.join(format!("{index:06}.png"));
    save_image(&img.view(), &path)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates the unpaired benchmark: `marked/` and `unmarked/` frame sets
/// drawn from the same shape distribution but disjoint pose samples, with
/// ground-truth landmark pixels for every unmarked frame.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthManifest> {
    let t = synth_template();
    let marked_dir = out_dir.join("marked");
    let unmarked_dir = out_dir.join("unmarked");
    let gt_dir = out_dir.join("gt");
    create_dir(&marked_dir)?;
    create_dir(&unmarked_dir)?;
    create_dir(&gt_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.n_frames {
        let pose = draw_pose(cfg, &mut rng);
        let shape = render_shape(cfg, &pose, &mut rng);
        let marked = draw_markers(&t, &pose, &shape, &cfg.marker)?;
        write_frame(&marked_dir, i, &marked)?;
    }
    let gt_path = gt_dir.join("landmarks.jsonl");
    let mut gt_file = std::fs::File::create(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    for i in 0..cfg.n_frames {
        let pose = draw_pose(cfg, &mut rng);
        let shape = render_shape(cfg, &pose, &mut rng);
        write_frame(&unmarked_dir, i, &shape)?;
        let gt = posed_landmarks(&t, &pose);
        let record = GtRecord {
            frame: i,
            points_px: (0..t.n_landmarks)
                .map(|k| {
                    [
                        gt[[k, 0]] * cfg.resolution as f64,
                        gt[[k, 1]] * cfg.resolution as f64,
                    ]
                })
                .collect(),
        };
        writeln!(gt_file, "{}", serde_json::to_string(&record).unwrap())
            .map_err(|e| Error::io(&gt_path, e))?;
    }
    t.save(out_dir.join("template.json"))?;
    let manifest = SynthManifest {
        n_marked: cfg.n_frames,
        n_unmarked: cfg.n_frames,
        seed: cfg.seed,
        resolution: cfg.resolution,
        config: cfg.clone(),
    };
    let mpath = out_dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// One shape instance moving smoothly through `n_frames` unmarked frames,
/// with its ground-truth landmark track. Layout matches [`synth_generate`]
/// (minus `marked/`), so evaluation tooling can consume either.
pub fn make_motion_sequence(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthManifest> {
    let t = synth_template();
    let unmarked_dir = out_dir.join("unmarked");
    let gt_dir = out_dir.join("gt");
    create_dir(&unmarked_dir)?;
    create_dir(&gt_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let res = cfg.resolution as f64;
    let gt_path = gt_dir.join("landmarks.jsonl");
    let mut gt_file = std::fs::File::create(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    for i in 0..cfg.n_frames {
        let (dx_px, dy_px) = match cfg.motion {
            MotionMode::Static => (0.0, 0.0),
            MotionMode::Linear { velocity_px } => (velocity_px * i as f64, 0.0),
            MotionMode::Sinusoidal { amplitude_px, period } => {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / period;
                (amplitude_px * phase.sin(), 0.5 * amplitude_px * (2.0 * phase).sin())
            }
        };
        let pose = Pose { cx: 0.5 + dx_px / res, cy: 0.5 + dy_px / res, scale: 1.0, rot: 0.0 };
        let shape = render_shape(cfg, &pose, &mut rng);
        write_frame(&unmarked_dir, i, &shape)?;
        let gt = posed_landmarks(&t, &pose);
        let record = GtRecord {
            frame: i,
            points_px: (0..t.n_landmarks)
                .map(|k| [gt[[k, 0]] * res, gt[[k, 1]] * res])
                .collect(),
        };
        writeln!(gt_file, "{}", serde_json::to_string(&record).unwrap())
            .map_err(|e| Error::io(&gt_path, e))?;
    }
    t.save(out_dir.join("template.json"))?;
    let manifest = SynthManifest {
        n_marked: 0,
        n_unmarked: cfg.n_frames,
        seed: cfg.seed,
        resolution: cfg.resolution,
        config: cfg.clone(),
    };
    let mpath = out_dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Reads a `landmarks.jsonl` ground-truth file.
pub fn load_gt(path: &Path) -> Result<Vec<GtRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { n_frames: 3, resolution: 32, seed: 7, ..Default::default() }
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_generate(&small_cfg(), d1.path()).unwrap();
        synth_generate(&small_cfg(), d2.path()).unwrap();
        for sub in ["marked/000001.png", "unmarked/000002.png", "gt/landmarks.jsonl"] {
            let a = std::fs::read(d1.path().join(sub)).unwrap();
            let b = std::fs::read(d2.path().join(sub)).unwrap();
            assert_eq!(a, b, "{sub} differs between identical seeds");
        }
    }

    #[test]
    fn synth_counts_and_gt_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_generate(&small_cfg(), dir.path()).unwrap();
        assert_eq!((m.n_marked, m.n_unmarked), (3, 3));
        assert_eq!(list_frames(&dir.path().join("marked")).unwrap().len(), 3);
        assert_eq!(list_frames(&dir.path().join("unmarked")).unwrap().len(), 3);
        assert_eq!(load_gt(&dir.path().join("gt/landmarks.jsonl")).unwrap().len(), 3);
    }

    #[test]
    fn zero_frames_is_valid_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_frames: 0, ..small_cfg() };
        let m = synth_generate(&cfg, dir.path()).unwrap();
        assert_eq!((m.n_marked, m.n_unmarked), (0, 0));
        assert!(list_frames(&dir.path().join("marked")).unwrap().is_empty());
    }

    #[test]
    fn domains_are_disjoint_by_content() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_frames: 5, ..small_cfg() };
        synth_generate(&cfg, dir.path()).unwrap();
        let hash = |p: &Path| std::fs::read(p).unwrap();
        let marked: Vec<_> = list_frames(&dir.path().join("marked"))
            .unwrap()
            .iter()
            .map(|p| hash(p))
            .collect();
        for p in list_frames(&dir.path().join("unmarked")).unwrap() {
            assert!(!marked.contains(&hash(&p)));
        }
    }

    #[test]
    fn gt_lies_on_marker_stroke() {
        // Re-rasterize the marker strokes from each frame's GT and check the
        // pixel under every GT landmark carries near-full stroke coverage;
        // with alpha = 1 that only happens when the stroke passes within
        // about half a pixel of the landmark.
        let cfg = SynthConfig { n_frames: 4, resolution: 32, seed: 7, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        synth_generate(&cfg, dir.path()).unwrap();
        let t = synth_template();
        let gts = load_gt(&dir.path().join("gt/landmarks.jsonl")).unwrap();
        let res = cfg.resolution;
        let marker = RenderSettings { alpha: 1.0, sigma_px: 1.5, ..Default::default() };
        for rec in &gts {
            // Rebuild the deformation this frame's GT corresponds to.
            let mut delta = t.points_array::<f64>();
            for k in 0..t.n_landmarks {
                delta[[k, 0]] = rec.points_px[k][0] / res as f64 - t.points[k][0];
                delta[[k, 1]] = rec.points_px[k][1] / res as f64 - t.points[k][1];
            }
            let black = Array3::from_elem((3, res, res), -1.0);
            let rendered = render(&delta.view(), &t, &black.view(), &marker).unwrap();
            for p in &rec.points_px {
                let ix = (p[0].floor() as usize).min(res - 1);
                let iy = (p[1].floor() as usize).min(res - 1);
                // Any channel far above the -1 background means the stroke
                // covers this pixel. Landmarks shared by both lines mix the
                // two stroke colors, which caps the brightest channel near
                // 0.15 there, so test against the background, not white.
                let max_c = (0..3).map(|c| rendered[[c, iy, ix]]).fold(f64::MIN, f64::max);
                assert!(max_c > 0.0, "GT landmark at {p:?} not on a stroke (value {max_c})");
            }
        }
    }

    #[test]
    fn static_sequence_has_constant_gt() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_frames: 5, motion: MotionMode::Static, ..small_cfg() };
        make_motion_sequence(&cfg, dir.path()).unwrap();
        let gts = load_gt(&dir.path().join("gt/landmarks.jsonl")).unwrap();
        assert_eq!(gts.len(), 5);
        for rec in &gts[1..] {
            assert_eq!(rec.points_px, gts[0].points_px);
        }
    }

    #[test]
    fn linear_sequence_moves_one_px_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_frames: 4,
            motion: MotionMode::Linear { velocity_px: 1.0 },
            ..small_cfg()
        };
        make_motion_sequence(&cfg, dir.path()).unwrap();
        let gts = load_gt(&dir.path().join("gt/landmarks.jsonl")).unwrap();
        for w in gts.windows(2) {
            for (p0, p1) in w[0].points_px.iter().zip(&w[1].points_px) {
                let d = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
                assert!((d - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_frame_sequence_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_frames: 1, ..small_cfg() };
        make_motion_sequence(&cfg, dir.path()).unwrap();
        assert_eq!(load_gt(&dir.path().join("gt/landmarks.jsonl")).unwrap().len(), 1);
    }

    #[test]
    fn dataset_loads_and_samples_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        synth_generate(&small_cfg(), dir.path()).unwrap();
        let cfg = DatasetConfig {
            marked_dir: dir.path().join("marked"),
            unmarked_dir: dir.path().join("unmarked"),
            resolution: [32, 32],
            hflip: false,
        };
        let ds = UnpairedDataset::<f32>::load(&cfg).unwrap();
        assert_eq!(ds.sizes(), (3, 3));
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(ds.sample_marked(&mut r1, 2), ds.sample_marked(&mut r2, 2));
    }

    #[test]
    fn empty_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("marked")).unwrap();
        std::fs::create_dir_all(dir.path().join("unmarked")).unwrap();
        let cfg = DatasetConfig {
            marked_dir: dir.path().join("marked"),
            unmarked_dir: dir.path().join("unmarked"),
            resolution: [32, 32],
            hflip: false,
        };
        assert!(matches!(UnpairedDataset::<f32>::load(&cfg), Err(Error::Data(_))));
    }

    #[test]
    fn corrupt_frame_is_io_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let marked = dir.path().join("marked");
        std::fs::create_dir_all(&marked).unwrap();
        std::fs::write(marked.join("000000.png"), b"not a png").unwrap();
        let cfg = DatasetConfig {
            marked_dir: marked.clone(),
            unmarked_dir: marked.clone(),
            resolution: [32, 32],
            hflip: false,
        };
        match UnpairedDataset::<f32>::load(&cfg) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("000000.png")),
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
