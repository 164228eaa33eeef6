//! The training loop: unpaired adversarial translation with cycle
//! consistency, the fake-image history buffers, checkpointing with exact
//! resume, and checkpoint-driven inference.

use crate::autodiff::Tensor;
use crate::data::{list_frames, load_image, DatasetConfig, UnpairedDataset};
use crate::error::{Error, Result};
use crate::eval::{landmark_error, temporal_jitter, EvalReport, LandmarkTrack};
use crate::losses::{
    gan_target_loss, l1_loss, spring_energy, total_objective, GanLossKind, LossWeights,
    ObjectiveParts, SpringVariant,
};
use crate::networks::{
    DeformationNet, DeformationNetSpec, GanNetSpec, PatchDiscriminator, ResnetGenerator,
};
use crate::optim::{lr_at, Adam, AdamConfig};
use crate::renderer::{deformed_positions, overlay_export, render_batch, RenderSettings};
use crate::scalar::Scalar;
use crate::template::Template;
use crate::Real;
use ndarray::{Array4, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

fn default_resolution() -> [usize; 2] {
    [128, 128]
}
fn default_batch() -> usize {
    4
}
fn default_steps() -> u64 {
    40_000
}
fn default_history() -> usize {
    50
}
fn default_ckpt_every() -> u64 {
    1000
}
fn default_log_every() -> u64 {
    10
}

/// Full training configuration; parsed from a TOML file. Only the three
/// paths are mandatory, everything else has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub template_path: PathBuf,
    pub marked_dir: PathBuf,
    pub unmarked_dir: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_history")]
    pub history_buffer_size: usize,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub spring_variant: SpringVariant,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default = "default_ckpt_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Derived from the template and resolution when absent.
    #[serde(default)]
    pub deformation: Option<DeformationNetSpec>,
    #[serde(default)]
    pub gan: GanNetSpec,
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

impl TrainConfig {
    /// The deformation-net spec this config implies for an `n`-landmark
    /// template, validated against the training resolution.
    pub fn deformation_spec(&self, n_landmarks: usize) -> Result<DeformationNetSpec> {
        let spec = match &self.deformation {
            Some(s) => {
                if s.fc_sizes[2] != 2 * n_landmarks {
                    return Err(Error::Param(format!(
                        "deformation head emits {} values but the template needs {}",
                        s.fc_sizes[2],
                        2 * n_landmarks
                    )));
                }
                if s.input_resolution != self.resolution {
                    return Err(Error::Param(format!(
                        "deformation input resolution {:?} != training resolution {:?}",
                        s.input_resolution, self.resolution
                    )));
                }
                s.clone()
            }
            None => {
                let mut s = DeformationNetSpec::defaults_for(n_landmarks);
                s.input_resolution = self.resolution;
                s
            }
        };
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be positive".into()));
        }
        self.render.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// History buffer.
// ---------------------------------------------------------------------------

/// Bounded pool of past generator outputs. `push` replaces a uniformly
/// chosen slot once full; `sample` draws uniformly. Feeding discriminators
/// from the pool instead of only the freshest fakes damps oscillation.
pub struct HistoryBuffer<F: Scalar> {
    cap: usize,
    items: Vec<ArrayD<F>>,
}

impl<F: Scalar> HistoryBuffer<F> {
    pub fn new(cap: usize) -> Self {
        HistoryBuffer { cap: cap.max(1), items: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn push(&mut self, img: ArrayD<F>, rng: &mut ChaCha8Rng) {
        if self.items.len() < self.cap {
            self.items.push(img);
        } else {
            let slot = rng.gen_range(0..self.cap);
            self.items[slot] = img;
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ArrayD<F> {
        assert!(!self.items.is_empty(), "sampling an empty history buffer");
        self.items[rng.gen_range(0..self.items.len())].clone()
    }

    fn contents(&self) -> &[ArrayD<F>] {
        &self.items
    }

    fn restore(&mut self, items: Vec<ArrayD<F>>) {
        self.items = items;
        self.items.truncate(self.cap);
    }
}

// ---------------------------------------------------------------------------
// Weight blob format.
// ---------------------------------------------------------------------------

const BLOB_MAGIC: &[u8; 4] = b"GLMK";
const BLOB_VERSION: u32 = 1;

/// Serializes named tensors as a flat little-endian blob.
pub fn write_weight_blob<F: Scalar>(entries: &[(String, ArrayD<F>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.push(F::BYTE_WIDTH as u8);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, arr) in entries {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(arr.ndim() as u8);
        for d in arr.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in arr.iter() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn read_weight_blob<F: Scalar>(bytes: &[u8]) -> Result<Vec<(String, ArrayD<F>)>> {
    let err = |m: &str| Error::Parse(format!("weight blob: {m}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(err("truncated"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != BLOB_MAGIC {
        return Err(err("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let width = take(1)?[0] as usize;
    if width != F::BYTE_WIDTH {
        return Err(err(&format!(
            "scalar width {width} does not match expected {}",
            F::BYTE_WIDTH
        )));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| err("non-utf8 tensor name"))?;
        let ndim = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(len * width)?;
        let data: Vec<F> = raw.chunks_exact(width).map(F::read_le).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| err(&format!("shape error in {name}: {e}")))?;
        out.push((name, arr));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Models and state.
// ---------------------------------------------------------------------------

/// The four trainable networks.
pub struct Models {
    pub deform: DeformationNet<Real>,
    pub gen: ResnetGenerator<Real>,
    pub disc_m: PatchDiscriminator<Real>,
    pub disc_u: PatchDiscriminator<Real>,
}

impl Models {
    pub fn new(
        deform_spec: &DeformationNetSpec,
        gan_spec: &GanNetSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Models {
            deform: DeformationNet::new(deform_spec, rng)?,
            gen: ResnetGenerator::new(&gan_spec.generator, rng),
            disc_m: PatchDiscriminator::new(&gan_spec.discriminator, rng),
            disc_u: PatchDiscriminator::new(&gan_spec.discriminator, rng),
        })
    }

    /// Generator-side parameters: the deformation net and the translator.
    pub fn gen_side(&self) -> Vec<(String, Tensor<Real>)> {
        let mut p = self.deform.named_params("deform");
        p.extend(self.gen.named_params("gen"));
        p
    }

    /// Discriminator-side parameters.
    pub fn disc_side(&self) -> Vec<(String, Tensor<Real>)> {
        let mut p = self.disc_m.named_params("disc_m");
        p.extend(self.disc_u.named_params("disc_u"));
        p
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<Real>)> {
        let mut p = self.gen_side();
        p.extend(self.disc_side());
        p
    }
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
    pub rng: ChaCha8Rng,
}

/// Everything the loop mutates; a checkpoint restores all of it exactly.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub template: Template,
    pub models: Models,
    pub opt_g: Adam<Real>,
    pub opt_d: Adam<Real>,
    gen_names: Vec<String>,
    disc_names: Vec<String>,
    pub fake_m_pool: HistoryBuffer<Real>,
    pub fake_u_pool: HistoryBuffer<Real>,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let template = Template::load(&cfg.template_path)?;
        let deform_spec = cfg.deformation_spec(template.n_landmarks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let models = Models::new(&deform_spec, &cfg.gan, &mut rng)?;
        let gen = models.gen_side();
        let disc = models.disc_side();
        let gen_names = gen.iter().map(|(n, _)| n.clone()).collect();
        let disc_names = disc.iter().map(|(n, _)| n.clone()).collect();
        let opt_g = Adam::new(cfg.optimizer, gen.into_iter().map(|(_, t)| t).collect());
        let opt_d = Adam::new(cfg.optimizer, disc.into_iter().map(|(_, t)| t).collect());
        Ok(TrainState {
            cfg: cfg.clone(),
            template,
            models,
            opt_g,
            opt_d,
            gen_names,
            disc_names,
            fake_m_pool: HistoryBuffer::new(cfg.history_buffer_size),
            fake_u_pool: HistoryBuffer::new(cfg.history_buffer_size),
            rng,
            step: 0,
        })
    }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.
// ---------------------------------------------------------------------------

const MANIFEST_VERSION: u32 = 1;

/// Writes `root/<step>/{weights.bin, manifest.json, template.json}` and
/// refreshes the `root/latest` marker.
pub fn save_checkpoint(state: &TrainState, root: &Path) -> Result<PathBuf> {
    let dir = root.join(format!("{}", state.step));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut entries: Vec<(String, ArrayD<Real>)> = state
        .models
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.data().clone()))
        .collect();
    entries.extend(state.opt_g.state_blobs(&state.gen_names));
    entries.extend(state.opt_d.state_blobs(&state.disc_names));
    for (i, item) in state.fake_m_pool.contents().iter().enumerate() {
        entries.push((format!("pool_m.{i}"), item.clone()));
    }
    for (i, item) in state.fake_u_pool.contents().iter().enumerate() {
        entries.push((format!("pool_u.{i}"), item.clone()));
    }
    let wpath = dir.join("weights.bin");
    std::fs::write(&wpath, write_weight_blob(&entries)).map_err(|e| Error::io(&wpath, e))?;

    let manifest = CheckpointManifest {
        version: MANIFEST_VERSION,
        step: state.step,
        config: state.cfg.clone(),
        opt_g_steps: state.opt_g.step_count(),
        opt_d_steps: state.opt_d.step_count(),
        rng: state.rng.clone(),
    };
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(&mpath, e))?;

    // Prefer a verbatim copy of the template file; fall back to
    // re-serialization if the original moved.
    let tpath = dir.join("template.json");
    if std::fs::copy(&state.cfg.template_path, &tpath).is_err() {
        state.template.save(&tpath)?;
    }

    let latest = root.join("latest");
    std::fs::write(&latest, format!("{}", state.step)).map_err(|e| Error::io(&latest, e))?;
    Ok(dir)
}

/// Accepts either a specific checkpoint directory or a run root with a
/// `latest` marker.
pub fn resolve_checkpoint_dir(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").is_file() {
        return Ok(path.to_path_buf());
    }
    let marker = path.join("latest");
    let step = std::fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
    let dir = path.join(step.trim());
    if dir.join("manifest.json").is_file() {
        Ok(dir)
    } else {
        Err(Error::Data(format!("no checkpoint at {}", dir.display())))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let dir = resolve_checkpoint_dir(path)?;
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;

    let template = Template::load(dir.join("template.json"))?;
    let cfg = manifest.config;
    let deform_spec = cfg.deformation_spec(template.n_landmarks)?;
    // Placeholder RNG for construction; the blob overwrites every weight and
    // the manifest restores the real stream.
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let models = Models::new(&deform_spec, &cfg.gan, &mut init_rng)?;

    let wpath = dir.join("weights.bin");
    let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let blobs = read_weight_blob::<Real>(&bytes)?;
    let lookup: std::collections::HashMap<&str, &ArrayD<Real>> =
        blobs.iter().map(|(n, a)| (n.as_str(), a)).collect();

    for (name, tensor) in models.named_params() {
        let arr = lookup
            .get(name.as_str())
            .ok_or_else(|| Error::Data(format!("checkpoint missing tensor {name}")))?;
        if arr.shape() != tensor.data().shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name}: {:?} vs model {:?}",
                arr.shape(),
                tensor.data().shape()
            )));
        }
        tensor.data_mut().assign(arr);
    }

    let gen = models.gen_side();
    let disc = models.disc_side();
    let gen_names: Vec<String> = gen.iter().map(|(n, _)| n.clone()).collect();
    let disc_names: Vec<String> = disc.iter().map(|(n, _)| n.clone()).collect();
    let mut opt_g = Adam::new(cfg.optimizer, gen.into_iter().map(|(_, t)| t).collect());
    let mut opt_d = Adam::new(cfg.optimizer, disc.into_iter().map(|(_, t)| t).collect());
    opt_g.restore_state(&gen_names, &blobs, manifest.opt_g_steps);
    opt_d.restore_state(&disc_names, &blobs, manifest.opt_d_steps);

    let collect_pool = |prefix: &str| -> Vec<ArrayD<Real>> {
        let mut items = Vec::new();
        loop {
            match lookup.get(format!("{prefix}.{}", items.len()).as_str()) {
                Some(&a) => items.push(a.clone()),
                None => break,
            }
        }
        items
    };
    let mut fake_m_pool = HistoryBuffer::new(cfg.history_buffer_size);
    let mut fake_u_pool = HistoryBuffer::new(cfg.history_buffer_size);
    fake_m_pool.restore(collect_pool("pool_m"));
    fake_u_pool.restore(collect_pool("pool_u"));

    Ok(TrainState {
        cfg,
        template,
        models,
        opt_g,
        opt_d,
        gen_names,
        disc_names,
        fake_m_pool,
        fake_u_pool,
        rng: manifest.rng,
        step: manifest.step,
    })
}

// ---------------------------------------------------------------------------
// The step.
// ---------------------------------------------------------------------------

/// Per-step scalar diagnostics; one JSON line per logged step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub gan_u_to_m: f64,
    pub gan_m_to_u: f64,
    pub cyc: f64,
    pub spring: f64,
    pub total: f64,
    pub d_m: f64,
    pub d_u: f64,
    pub lr: f64,
}

fn half_sum(a: Tensor<Real>, b: Tensor<Real>) -> Tensor<Real> {
    a.add(&b).mul_scalar(0.5)
}

fn pool_exchange(
    pool: &mut HistoryBuffer<Real>,
    fresh: &Tensor<Real>,
    rng: &mut ChaCha8Rng,
) -> Array4<Real> {
    let data = fresh.data();
    let v = data.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let (b, c, h, w) = v.dim();
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        pool.push(v.index_axis(Axis(0), bi).to_owned().into_dyn(), rng);
        let drawn = pool.sample(rng);
        out.index_axis_mut(Axis(0), bi)
            .assign(&drawn.view().into_dimensionality::<ndarray::Ix3>().unwrap());
    }
    out
}

/// One optimization step: generator side first (deformation net and
/// translator against frozen discriminators, plus cycle and spring terms),
/// then both discriminators against real frames and history-buffered fakes.
pub fn train_step(
    state: &mut TrainState,
    batch_u: Array4<Real>,
    batch_m: Array4<Real>,
) -> Result<LossReport> {
    let cfg = &state.cfg;
    let kind: GanLossKind = cfg.loss.gan_loss;
    let lr = lr_at(cfg.optimizer.lr, state.step, cfg.steps);

    let u = Tensor::constant(batch_u.into_dyn());
    let m = Tensor::constant(batch_m.into_dyn());

    // --- Generator side ---------------------------------------------------
    state.opt_g.zero_grad();
    state.opt_d.zero_grad();

    let delta = state.models.deform.forward(&u)?;
    let fake_m = render_batch(&delta, &u, &state.template, &cfg.render)?;
    let fake_u = state.models.gen.forward(&m)?;

    let u_cyc = state.models.gen.forward(&fake_m)?;
    let delta2 = state.models.deform.forward(&fake_u)?;
    let m_cyc = render_batch(&delta2, &fake_u, &state.template, &cfg.render)?;

    let gan_u_to_m = gan_target_loss(&state.models.disc_m.forward(&fake_m)?, true, kind);
    let gan_m_to_u = gan_target_loss(&state.models.disc_u.forward(&fake_u)?, true, kind);
    let cyc = l1_loss(&u_cyc, &u).add(&l1_loss(&m_cyc, &m));
    let spring = spring_energy(&delta, &state.template, cfg.spring_variant)?
        .add(&spring_energy(&delta2, &state.template, cfg.spring_variant)?);

    let parts = ObjectiveParts {
        gan_u_to_m: gan_u_to_m.item(),
        gan_m_to_u: gan_m_to_u.item(),
        cyc: cyc.item(),
        spring: spring.item(),
    };
    let report = total_objective(&parts, &cfg.loss)?;

    let lg = cfg.loss.lambda_gan as Real;
    let lc = cfg.loss.lambda_cyc as Real;
    let total = gan_u_to_m
        .add(&gan_m_to_u)
        .mul_scalar(lg)
        .add(&cyc.mul_scalar(lc))
        .add(&spring);
    total.backward();
    state.opt_g.step(lr);

    // --- Discriminator side -----------------------------------------------
    state.opt_d.zero_grad();
    let pooled_m = pool_exchange(&mut state.fake_m_pool, &fake_m, &mut state.rng);
    let pooled_u = pool_exchange(&mut state.fake_u_pool, &fake_u, &mut state.rng);

    let d_m = half_sum(
        gan_target_loss(&state.models.disc_m.forward(&m)?, true, kind),
        gan_target_loss(
            &state.models.disc_m.forward(&Tensor::constant(pooled_m.into_dyn()))?,
            false,
            kind,
        ),
    );
    let d_u = half_sum(
        gan_target_loss(&state.models.disc_u.forward(&u)?, true, kind),
        gan_target_loss(
            &state.models.disc_u.forward(&Tensor::constant(pooled_u.into_dyn()))?,
            false,
            kind,
        ),
    );
    let d_m_v = d_m.item();
    let d_u_v = d_u.item();
    if !d_m_v.is_finite() || !d_u_v.is_finite() {
        return Err(Error::NonFinite("discriminator loss".into()));
    }
    d_m.add(&d_u).backward();
    state.opt_d.step(lr);

    Ok(LossReport {
        step: state.step,
        gan_u_to_m: parts.gan_u_to_m.to_f64(),
        gan_m_to_u: parts.gan_m_to_u.to_f64(),
        cyc: parts.cyc.to_f64(),
        spring: parts.spring.to_f64(),
        total: report.total.to_f64(),
        d_m: d_m_v.to_f64(),
        d_u: d_u_v.to_f64(),
        lr,
    })
}

// ---------------------------------------------------------------------------
// The loop.
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MetricsLine {
    #[serde(flatten)]
    report: LossReport,
    wall_time_ms: u128,
}

/// Runs (or resumes) training, checkpointing into `out_dir`; returns the
/// final checkpoint directory.
pub fn fit(cfg: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut state = if let Some(ckpt) = resume {
        let mut s = load_checkpoint(ckpt)?;
        // The step budget and logging cadence follow the caller; everything
        // that affects reproducibility stays as checkpointed.
        s.cfg.steps = cfg.steps;
        s.cfg.checkpoint_every = cfg.checkpoint_every;
        s.cfg.log_every = cfg.log_every;
        s
    } else {
        TrainState::new(cfg)?
    };

    let ds = UnpairedDataset::<Real>::load(&DatasetConfig {
        marked_dir: state.cfg.marked_dir.clone(),
        unmarked_dir: state.cfg.unmarked_dir.clone(),
        resolution: state.cfg.resolution,
        hflip: false,
    })?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let started = std::time::Instant::now();

    while state.step < state.cfg.steps {
        let batch_u = ds.sample_unmarked(&mut state.rng, state.cfg.batch_size);
        let batch_m = ds.sample_marked(&mut state.rng, state.cfg.batch_size);
        let report = match train_step(&mut state, batch_u, batch_m) {
            Ok(r) => r,
            Err(e) => {
                // Numeric failure: leave a diagnostic checkpoint behind so
                // the blow-up can be inspected, then halt.
                if matches!(e, Error::NonFinite(_)) {
                    let dump = out_dir.join("nonfinite");
                    let _ = std::fs::create_dir_all(&dump);
                    let _ = save_checkpoint(&state, &dump);
                    let note = dump.join("note.json");
                    let _ = std::fs::write(
                        &note,
                        serde_json::to_string_pretty(&serde_json::json!({
                            "step": state.step,
                            "error": e.to_string(),
                        }))
                        .unwrap(),
                    );
                }
                return Err(e);
            }
        };
        state.step += 1;
        let log_every = state.cfg.log_every.max(1);
        if state.step % log_every == 0 || state.step == state.cfg.steps {
            let line = MetricsLine {
                report: LossReport { step: state.step, ..report },
                wall_time_ms: started.elapsed().as_millis(),
            };
            writeln!(metrics, "{}", serde_json::to_string(&line).unwrap())
                .map_err(|e| Error::io(&metrics_path, e))?;
        }
        if state.cfg.checkpoint_every > 0
            && state.step % state.cfg.checkpoint_every == 0
            && state.step < state.cfg.steps
        {
            save_checkpoint(&state, out_dir)?;
        }
    }
    save_checkpoint(&state, out_dir)
}

// ---------------------------------------------------------------------------
// Inference and evaluation entry points.
// ---------------------------------------------------------------------------

/// Landmark positions (pixels) for an explicit frame list.
pub fn infer_frames(state: &TrainState, frames: &[PathBuf]) -> Result<LandmarkTrack> {
    let [h, w] = state.cfg.resolution;
    let n = state.template.n_landmarks;
    let mut points = Vec::with_capacity(frames.len());
    for path in frames {
        let img = load_image::<Real>(path, [h, w])?;
        let batch = img.insert_axis(Axis(0));
        let delta = state.models.deform.forward(&Tensor::constant(batch.into_dyn()))?;
        let data = delta.data();
        let d2 = data
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap()
            .index_axis(Axis(0), 0)
            .mapv(|v| v.to_f64());
        let pos = deformed_positions(&state.template, &d2.view())?;
        let mut px = ndarray::Array2::<f64>::zeros((n, 2));
        for k in 0..n {
            px[[k, 0]] = pos[[k, 0]] * w as f64;
            px[[k, 1]] = pos[[k, 1]] * h as f64;
        }
        points.push(px);
    }
    LandmarkTrack::new((0..frames.len() as u64).collect(), points)
}

/// Landmark positions for every frame of a directory, in filename order.
pub fn infer_dir(state: &TrainState, frames_dir: &Path) -> Result<LandmarkTrack> {
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", frames_dir.display())));
    }
    infer_frames(state, &frames)
}

/// Renders human-viewable overlays (template drawn at the predicted
/// positions) for every frame into `out_dir`.
pub fn run_overlay(state: &TrainState, frames_dir: &Path, out_dir: &Path) -> Result<usize> {
    let frames = list_frames(frames_dir)?;
    if frames.is_empty() {
        return Err(Error::Data(format!("no frames in {}", frames_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let [h, w] = state.cfg.resolution;
    for path in frames.iter() {
        let img = load_image::<Real>(path, [h, w])?;
        let batch = img.clone().insert_axis(Axis(0));
        let delta = state.models.deform.forward(&Tensor::constant(batch.into_dyn()))?;
        let data = delta.data();
        let d2 = data
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap()
            .index_axis(Axis(0), 0)
            .to_owned();
        let pos = deformed_positions(&state.template, &d2.view())?;
        let name = path.file_name().unwrap();
        overlay_export(&state.template, &pos.view(), &img.view(), out_dir.join(name))?;
    }
    Ok(frames.len())
}

/// Runs inference over a dataset directory and computes every applicable
/// metric: landmark error when ground truth is present, temporal jitter when
/// the sequence has at least two frames.
pub fn run_eval(state: &TrainState, data_dir: &Path) -> Result<EvalReport> {
    let unmarked = data_dir.join("unmarked");
    let frames_dir = if unmarked.is_dir() { unmarked } else { data_dir.to_path_buf() };
    let pred = infer_dir(state, &frames_dir)?;
    let width = state.cfg.resolution[1];

    let gt_path = data_dir.join("gt").join("landmarks.jsonl");
    let gt = if gt_path.is_file() { Some(LandmarkTrack::load_jsonl(&gt_path)?) } else { None };

    let error = match &gt {
        Some(gt) => Some(landmark_error(&pred, gt, width)?),
        None => None,
    };
    let jitter = if pred.n_frames() >= 2 { Some(temporal_jitter(&pred)?) } else { None };
    let gt_jitter = match &gt {
        Some(gt) if gt.n_frames() >= 2 => Some(temporal_jitter(gt)?),
        _ => None,
    };

    Ok(EvalReport {
        n_frames: pred.n_frames(),
        n_landmarks: pred.n_landmarks(),
        image_width: width,
        error,
        jitter,
        gt_jitter,
        checkpoint: String::new(),
        data: data_dir.display().to_string(),
    })
}
