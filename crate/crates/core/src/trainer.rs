//! Training orchestration for both modes, checkpointing, deterministic
//! logging, and volume synthesis with trained models.
//!
//! Update order per sample: the paired mode updates the discriminator first
//! (on a detached fake) and then the generator against the updated
//! discriminator; the unpaired mode updates both generators jointly first and
//! then each discriminator on the pre-update fakes. Every optimizer update
//! runs on its own fresh tape, and the borrow structure of the update helpers
//! makes cross-network parameter writes impossible.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Precision, TrainConfig, TrainMode};
use crate::dataset::{self, DatasetManifest, Role, SliceMode, SliceSample};
use crate::error::{Error, Result};
use crate::io::{self, CheckpointFile};
use crate::losses::{
    adv_loss_log_d, adv_loss_log_g, adv_loss_lsq_d, adv_loss_lsq_g, cgan_total, cycle_loss,
    l1_loss, pgan_total_g, LossWeights,
};
use crate::nn::{
    build_patch_discriminator, build_unet_generator, init_weights, network_forward, param_layout,
    stage_params, NetworkDef, ParamSet, StagedParams,
};
use crate::optim::{adam_step, lr_at_epoch, AdamParams, AdamState};
use crate::rng::{RngState, SeededRng};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::util::{fnv1a64, parallel_map};
use crate::volume::{Alignment, Volume};

pub const RUNLOG_HEADER: &str = "epoch,step,loss_name,value,lr";
pub const RUNLOG_FILE: &str = "runlog.csv";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.cfckpt";
pub const FROZEN_CONFIG: &str = "config.resolved.txt";

/// One network with its parameters and per-parameter optimizer state.
#[derive(Clone, Debug)]
pub struct NetBundle<S: Scalar = f64> {
    pub name: String,
    pub def: NetworkDef,
    pub params: ParamSet<S>,
    pub adam: Vec<AdamState<S>>,
}

impl<S: Scalar> NetBundle<S> {
    fn init(name: &str, def: NetworkDef, seed: u64) -> Self {
        let params = init_weights::<S>(&def, seed);
        let adam = params.iter().map(|(_, t)| AdamState::new(t.shape())).collect();
        NetBundle { name: name.into(), def, params, adam }
    }

    /// Apply tape gradients to every parameter with one Adam step.
    fn apply_grads(&mut self, tape: &Tape<S>, staged: &StagedParams, lr: f64, hp: AdamParams) -> Result<()> {
        for (i, (name, var)) in staged.iter().enumerate() {
            let grad = tape.grad_or_zero(var);
            let param = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::usage(format!("unknown parameter {name}")))?;
            adam_step(param, &grad, &mut self.adam[i], lr, hp)?;
        }
        Ok(())
    }
}

/// Training state: everything a checkpoint round-trips.
#[derive(Clone, Debug)]
pub struct TrainedModel<S: Scalar = f64> {
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub rng: RngState,
    pub nets: Vec<NetBundle<S>>,
}

impl<S: Scalar> TrainedModel<S> {
    pub fn net(&self, name: &str) -> Result<&NetBundle<S>> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::usage(format!("model has no network '{name}'")))
    }
}

/// Network set for a mode: [g, d] for the paired mode, [gy, gx, dy, dx] for
/// the unpaired one (gy: source→target, gx: target→source).
fn build_defs(cfg: &TrainConfig) -> Result<Vec<(&'static str, NetworkDef)>> {
    let g_out = if cfg.mode.is_cgan() { cfg.k } else { 1 };
    match cfg.mode {
        TrainMode::Pgan => Ok(vec![
            ("g", build_unet_generator(cfg.image_size, cfg.k, 1, cfg.base_channels, cfg.depth)?),
            ("d", build_patch_discriminator(cfg.k, 1, cfg.d_base_channels, cfg.d_layers)?),
        ]),
        TrainMode::CganReg | TrainMode::CganUnreg => Ok(vec![
            ("gy", build_unet_generator(cfg.image_size, cfg.k, g_out, cfg.base_channels, cfg.depth)?),
            ("gx", build_unet_generator(cfg.image_size, cfg.k, g_out, cfg.base_channels, cfg.depth)?),
            ("dy", build_patch_discriminator(0, g_out, cfg.d_base_channels, cfg.d_layers)?),
            ("dx", build_patch_discriminator(0, g_out, cfg.d_base_channels, cfg.d_layers)?),
        ]),
    }
}

fn fresh_model<S: Scalar>(cfg: &TrainConfig) -> Result<TrainedModel<S>> {
    let nets = build_defs(cfg)?
        .into_iter()
        .map(|(name, def)| NetBundle::init(name, def, cfg.seed ^ fnv1a64(name.as_bytes())))
        .collect();
    Ok(TrainedModel {
        config: cfg.clone(),
        epochs_completed: 0,
        rng: SeededRng::substream(cfg.seed, 0x54_52_41_49).state(),
        nets,
    })
}

/// Serialize a model into the versioned checkpoint container.
pub fn to_checkpoint_file<S: Scalar>(model: &TrainedModel<S>) -> CheckpointFile {
    let mut blobs: Vec<(String, Tensor<f64>)> = Vec::new();
    for net in &model.nets {
        for (pname, t) in net.params.iter() {
            blobs.push((format!("{}.{pname}", net.name), t.widen()));
        }
        for ((pname, _), st) in net.params.iter().zip(&net.adam) {
            blobs.push((format!("adam.{}.{pname}.m", net.name), st.m.widen()));
            blobs.push((format!("adam.{}.{pname}.v", net.name), st.v.widen()));
            blobs.push((format!("adam.{}.{pname}.t", net.name), Tensor::scalar(st.t as f64)));
        }
    }
    CheckpointFile {
        config_hash: model.config.hash(),
        epochs_completed: model.epochs_completed as u32,
        mode_code: model.config.mode.code(),
        rng: model.rng,
        config_text: model.config.to_text(),
        blobs,
    }
}

/// Rebuild a typed model from a checkpoint container.
pub fn model_from_checkpoint<S: Scalar>(file: &CheckpointFile) -> Result<TrainedModel<S>> {
    let cfg = TrainConfig::parse(&file.config_text)?;
    if cfg.hash() != file.config_hash {
        return Err(Error::data("checkpoint config hash does not match its config text"));
    }
    if cfg.mode.code() != file.mode_code {
        return Err(Error::data("checkpoint mode code does not match its config"));
    }
    let blob = |name: &str| -> Result<&Tensor<f64>> {
        file.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::data(format!("checkpoint missing blob '{name}'")))
    };
    let mut nets = Vec::new();
    for (name, def) in build_defs(&cfg)? {
        let mut entries = Vec::new();
        let mut adam = Vec::new();
        for (pname, shape) in param_layout(&def) {
            let t = blob(&format!("{name}.{pname}"))?;
            if t.shape() != shape {
                return Err(Error::data(format!(
                    "checkpoint blob {name}.{pname} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            entries.push((pname.clone(), t.cast::<S>()));
            let m = blob(&format!("adam.{name}.{pname}.m"))?.cast::<S>();
            let v = blob(&format!("adam.{name}.{pname}.v"))?.cast::<S>();
            let t_count = blob(&format!("adam.{name}.{pname}.t"))?.item()? as u64;
            adam.push(AdamState { m, v, t: t_count });
        }
        nets.push(NetBundle { name: name.into(), def, params: ParamSet::from_entries(entries), adam });
    }
    Ok(TrainedModel { config: cfg, epochs_completed: file.epochs_completed as usize, rng: file.rng, nets })
}

/// Precision-erased model handle for CLI-facing entry points.
pub enum AnyModel {
    F64(Box<TrainedModel<f64>>),
    F32(Box<TrainedModel<f32>>),
}

impl AnyModel {
    pub fn config(&self) -> &TrainConfig {
        match self {
            AnyModel::F64(m) => &m.config,
            AnyModel::F32(m) => &m.config,
        }
    }
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let file = io::read_checkpoint(path)?;
    let cfg = TrainConfig::parse(&file.config_text)?;
    Ok(match cfg.precision {
        Precision::F64 => AnyModel::F64(Box::new(model_from_checkpoint::<f64>(&file)?)),
        Precision::F32 => AnyModel::F32(Box::new(model_from_checkpoint::<f32>(&file)?)),
    })
}

/// Append-only per-step loss log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<(usize, usize, String, f64, f64)>,
}

impl RunLog {
    pub fn push(&mut self, epoch: usize, step: usize, name: &str, value: f64, lr: f64) {
        self.records.push((epoch, step, name.into(), value, lr));
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{RUNLOG_HEADER}");
        for (epoch, step, name, value, lr) in &self.records {
            let _ = writeln!(s, "{epoch},{step},{name},{value},{lr}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(RUNLOG_HEADER) {
            return Err(Error::data("bad runlog header"));
        }
        let mut log = RunLog::default();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::data(format!("bad runlog row: {line}")));
            }
            let bad = |e: &dyn std::fmt::Display| Error::data(format!("bad runlog row {line}: {e}"));
            log.records.push((
                f[0].parse().map_err(|e: std::num::ParseIntError| bad(&e))?,
                f[1].parse().map_err(|e: std::num::ParseIntError| bad(&e))?,
                f[2].into(),
                f[3].parse().map_err(|e: std::num::ParseFloatError| bad(&e))?,
                f[4].parse().map_err(|e: std::num::ParseFloatError| bad(&e))?,
            ));
        }
        Ok(log)
    }

    /// Largest absolute difference between matching loss values, or infinity
    /// when the logs are structurally different.
    pub fn max_abs_diff(&self, other: &RunLog) -> f64 {
        if self.records.len() != other.records.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.records.iter().zip(&other.records) {
            if a.0 != b.0 || a.1 != b.1 || a.2 != b.2 {
                return f64::INFINITY;
            }
            worst = worst.max((a.3 - b.3).abs()).max((a.4 - b.4).abs());
        }
        worst
    }
}

/// [k,H,W] slice stack in [0,1] -> [1,k,H,W] network tensor in [-1,1].
fn to_net<S: Scalar>(t: &Tensor<f64>) -> Tensor<S> {
    let sh = t.shape();
    let mut shape = Vec::with_capacity(4);
    shape.push(1);
    shape.extend_from_slice(sh);
    Tensor::from_fn(&shape, |i| S::of_f64(2.0 * t.data()[i] - 1.0))
}

/// Network output channel back to a [0,1] image plane.
fn from_net<S: Scalar>(t: &Tensor<S>, channel: usize) -> Vec<f64> {
    let sh = t.shape();
    let plane = sh[2] * sh[3];
    t.data()[channel * plane..(channel + 1) * plane]
        .iter()
        .map(|&v| (v.as_f64() + 1.0) / 2.0)
        .collect()
}

/// Discriminator update of the paired mode: cross-entropy on the registered
/// (source, target) pair vs the (source, detached fake) pair. Takes no
/// generator state at all.
pub fn pgan_d_update<S: Scalar>(
    d: &mut NetBundle<S>,
    source: &Tensor<S>,
    target: &Tensor<S>,
    fake: &Tensor<S>,
    lr: f64,
    hp: AdamParams,
) -> Result<f64> {
    let mut tape = Tape::new();
    let sd = stage_params(&mut tape, &d.params, true);
    let x = tape.constant(source.clone());
    let y = tape.constant(target.clone());
    let f = tape.constant(fake.clone());
    let real_in = tape.concat(&[x, y], 1)?;
    let d_real = network_forward(&mut tape, &d.def, &sd, real_in)?;
    let fake_in = tape.concat(&[x, f], 1)?;
    let d_fake = network_forward(&mut tape, &d.def, &sd, fake_in)?;
    let loss = adv_loss_log_d(&mut tape, d_real, d_fake)?;
    let value = tape.value(loss).item()?.as_f64();
    tape.backward(loss)?;
    d.apply_grads(&tape, &sd, lr, hp)?;
    Ok(value)
}

/// Least-squares discriminator update on (real, detached fake) images.
pub fn lsq_d_update<S: Scalar>(
    d: &mut NetBundle<S>,
    real: &Tensor<S>,
    fake: &Tensor<S>,
    lr: f64,
    hp: AdamParams,
) -> Result<f64> {
    let mut tape = Tape::new();
    let sd = stage_params(&mut tape, &d.params, true);
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let d_real = network_forward(&mut tape, &d.def, &sd, r)?;
    let d_fake = network_forward(&mut tape, &d.def, &sd, f)?;
    let loss = adv_loss_lsq_d(&mut tape, d_real, d_fake)?;
    let value = tape.value(loss).item()?.as_f64();
    tape.backward(loss)?;
    d.apply_grads(&tape, &sd, lr, hp)?;
    Ok(value)
}

/// One paired-mode sample: D step on the detached fake, then G step against
/// the updated (read-only) discriminator. Returns named loss components.
pub fn pgan_step<S: Scalar>(
    g: &mut NetBundle<S>,
    d: &mut NetBundle<S>,
    sample: &SliceSample,
    lr: f64,
    hp: AdamParams,
    w: &LossWeights,
) -> Result<Vec<(&'static str, f64)>> {
    let x_t: Tensor<S> = to_net(&sample.source);
    let y_t: Tensor<S> = to_net(&sample.target);

    let mut tape = Tape::new();
    let sg = stage_params(&mut tape, &g.params, true);
    let x = tape.constant(x_t.clone());
    let fake = network_forward(&mut tape, &g.def, &sg, x)?;
    let fake_value = tape.value(fake).clone();

    let d_loss = pgan_d_update(d, &x_t, &y_t, &fake_value, lr, hp)?;

    // generator phase continues the same tape with the just-updated
    // discriminator staged read-only
    let sd = stage_params(&mut tape, &d.params, false);
    let d_in = tape.concat(&[x, fake], 1)?;
    let d_fake = network_forward(&mut tape, &d.def, &sd, d_in)?;
    let g_adv = adv_loss_log_g(&mut tape, d_fake)?;
    let y = tape.constant(y_t);
    let l1 = l1_loss(&mut tape, y, fake)?;
    let total = pgan_total_g(&mut tape, g_adv, l1, w)?;
    let (adv_v, l1_v, total_v) = (
        tape.value(g_adv).item()?.as_f64(),
        tape.value(l1).item()?.as_f64(),
        tape.value(total).item()?.as_f64(),
    );
    tape.backward(total)?;
    g.apply_grads(&tape, &sg, lr, hp)?;

    Ok(vec![("d_loss", d_loss), ("g_adv", adv_v), ("g_l1", l1_v), ("g_total", total_v)])
}

/// One unpaired-mode sample: joint generator update (least-squares
/// adversarial terms plus weighted cycle loss), then each discriminator on
/// the pre-update fakes.
pub fn cgan_step<S: Scalar>(
    gy: &mut NetBundle<S>,
    gx: &mut NetBundle<S>,
    dy: &mut NetBundle<S>,
    dx: &mut NetBundle<S>,
    source: &Tensor<f64>,
    target: &Tensor<f64>,
    lr: f64,
    hp: AdamParams,
    w: &LossWeights,
) -> Result<Vec<(&'static str, f64)>> {
    let x_t: Tensor<S> = to_net(source);
    let y_t: Tensor<S> = to_net(target);

    let mut tape = Tape::new();
    let sgy = stage_params(&mut tape, &gy.params, true);
    let sgx = stage_params(&mut tape, &gx.params, true);
    let sdy = stage_params(&mut tape, &dy.params, false);
    let sdx = stage_params(&mut tape, &dx.params, false);
    let x = tape.constant(x_t.clone());
    let y = tape.constant(y_t.clone());
    let fake_y = network_forward(&mut tape, &gy.def, &sgy, x)?;
    let fake_x = network_forward(&mut tape, &gx.def, &sgx, y)?;
    let rec_x = network_forward(&mut tape, &gx.def, &sgx, fake_y)?;
    let rec_y = network_forward(&mut tape, &gy.def, &sgy, fake_x)?;
    let dy_fake = network_forward(&mut tape, &dy.def, &sdy, fake_y)?;
    let dx_fake = network_forward(&mut tape, &dx.def, &sdx, fake_x)?;
    let adv_y = adv_loss_lsq_g(&mut tape, dy_fake)?;
    let adv_x = adv_loss_lsq_g(&mut tape, dx_fake)?;
    let cyc = cycle_loss(&mut tape, x, rec_x, y, rec_y)?;
    let total = cgan_total(&mut tape, adv_x, adv_y, cyc, w)?;
    let (adv_x_v, adv_y_v, cyc_v, total_v) = (
        tape.value(adv_x).item()?.as_f64(),
        tape.value(adv_y).item()?.as_f64(),
        tape.value(cyc).item()?.as_f64(),
        tape.value(total).item()?.as_f64(),
    );
    let fake_y_value = tape.value(fake_y).clone();
    let fake_x_value = tape.value(fake_x).clone();
    tape.backward(total)?;
    gy.apply_grads(&tape, &sgy, lr, hp)?;
    gx.apply_grads(&tape, &sgx, lr, hp)?;

    let dy_loss = lsq_d_update(dy, &y_t, &fake_y_value, lr, hp)?;
    let dx_loss = lsq_d_update(dx, &x_t, &fake_x_value, lr, hp)?;

    Ok(vec![
        ("g_adv_x", adv_x_v),
        ("g_adv_y", adv_y_v),
        ("g_cycle", cyc_v),
        ("g_total", total_v),
        ("dx_loss", dx_loss),
        ("dy_loss", dy_loss),
    ])
}

fn check_mode_dataset(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<()> {
    match cfg.mode {
        TrainMode::Pgan | TrainMode::CganReg => {
            if !manifest.registered_variants {
                return Err(Error::config(format!(
                    "mode {} requires registered volume pairs, but the dataset provides only misaligned variants",
                    cfg.mode.label()
                )));
            }
        }
        TrainMode::CganUnreg => {
            if !manifest.misaligned_variants {
                return Err(Error::config(
                    "mode cgan_unreg requires misaligned target volumes, but the dataset has none"
                        .to_string(),
                ));
            }
        }
    }
    if cfg.unpaired && !cfg.mode.is_cgan() {
        return Err(Error::config("unpaired sampling is only meaningful for cgan modes"));
    }
    if manifest.dims[1] > cfg.image_size || manifest.dims[2] > cfg.image_size {
        return Err(Error::config(format!(
            "dataset slices {}x{} exceed configured image_size {}",
            manifest.dims[1], manifest.dims[2], cfg.image_size
        )));
    }
    Ok(())
}

fn load_training_samples(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Vec<SliceSample>> {
    let mode = if cfg.mode == TrainMode::Pgan { SliceMode::Pgan } else { SliceMode::Cgan };
    let target_misaligned = cfg.mode == TrainMode::CganUnreg;
    let mut samples = Vec::new();
    for subj in manifest.subjects_with_role(Role::Train) {
        let source = dataset::load_volume(&cfg.manifest_dir, subj.id, cfg.source, false)?;
        let target =
            dataset::load_volume(&cfg.manifest_dir, subj.id, cfg.target, target_misaligned)?;
        samples.extend(dataset::extract_slices(
            &source,
            &target,
            cfg.k,
            mode,
            cfg.image_size,
            subj.id,
        )?);
    }
    if samples.is_empty() {
        return Err(Error::data("no training samples"));
    }
    Ok(samples)
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub runlog: RunLog,
    pub epochs_completed: usize,
}

/// Train per the config, optionally resuming from a checkpoint file. The
/// output directory receives the frozen resolved config, cadenced and final
/// checkpoints, and the CSV runlog.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F64 => train_typed::<f64>(cfg, resume),
        Precision::F32 => train_typed::<f32>(cfg, resume),
    }
}

/// Paired-mode training entry point; rejects configs for other modes.
pub fn train_pgan(cfg: &TrainConfig) -> Result<TrainSummary> {
    if cfg.mode != TrainMode::Pgan {
        return Err(Error::config(format!(
            "train_pgan called with mode {}",
            cfg.mode.label()
        )));
    }
    train(cfg, None)
}

/// Unpaired-mode training entry point; rejects the paired mode.
pub fn train_cgan(cfg: &TrainConfig) -> Result<TrainSummary> {
    if !cfg.mode.is_cgan() {
        return Err(Error::config(format!(
            "train_cgan called with mode {}",
            cfg.mode.label()
        )));
    }
    train(cfg, None)
}

fn train_typed<S: Scalar>(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = dataset::load_manifest(&cfg.manifest_dir)?;
    check_mode_dataset(cfg, &manifest)?;
    let samples = load_training_samples(cfg, &manifest)?;

    let mut model: TrainedModel<S> = match resume {
        Some(path) => {
            let file = io::read_checkpoint(path)?;
            if file.config_hash != cfg.hash() {
                return Err(Error::config(format!(
                    "checkpoint {} was produced by a different config (hash mismatch)",
                    path.display()
                )));
            }
            let m = model_from_checkpoint::<S>(&file)?;
            if m.epochs_completed >= cfg.epochs {
                return Err(Error::usage(format!(
                    "checkpoint already has {} of {} epochs",
                    m.epochs_completed, cfg.epochs
                )));
            }
            m
        }
        None => fresh_model::<S>(cfg)?,
    };

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    fs::write(cfg.out_dir.join(FROZEN_CONFIG), cfg.to_text())
        .map_err(|e| Error::io(cfg.out_dir.join(FROZEN_CONFIG), e))?;

    let schedule = cfg.schedule();
    let hp = cfg.adam();
    let w = cfg.weights();
    let mut rng = SeededRng::restore(&model.rng);
    let mut runlog = RunLog::default();

    for epoch in model.epochs_completed..cfg.epochs {
        let lr = lr_at_epoch(epoch, &schedule)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        for (step, &si) in order.iter().enumerate() {
            let sample = &samples[si];
            let losses = match cfg.mode {
                TrainMode::Pgan => {
                    let [g, d] = &mut model.nets[..] else {
                        return Err(Error::usage("paired model must hold [g, d]"));
                    };
                    pgan_step(g, d, sample, lr, hp, &w)?
                }
                TrainMode::CganReg | TrainMode::CganUnreg => {
                    let target = if cfg.unpaired {
                        &samples[rng.index(samples.len())].target
                    } else {
                        &sample.target
                    };
                    let [gy, gx, dy, dx] = &mut model.nets[..] else {
                        return Err(Error::usage("unpaired model must hold [gy, gx, dy, dx]"));
                    };
                    cgan_step(gy, gx, dy, dx, &sample.source, target, lr, hp, &w)?
                }
            };
            for (name, value) in losses {
                runlog.push(epoch, step, name, value, lr);
            }
        }
        model.epochs_completed = epoch + 1;
        model.rng = rng.state();
        if (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
            let path = cfg.out_dir.join(format!("ckpt_epoch_{:04}.cfckpt", epoch + 1));
            io::write_checkpoint(&path, &to_checkpoint_file(&model))?;
        }
    }

    let final_path = cfg.out_dir.join(FINAL_CHECKPOINT);
    io::write_checkpoint(&final_path, &to_checkpoint_file(&model))?;
    let runlog_path = cfg.out_dir.join(RUNLOG_FILE);
    fs::write(&runlog_path, runlog.to_csv()).map_err(|e| Error::io(&runlog_path, e))?;

    Ok(TrainSummary {
        out_dir: cfg.out_dir.clone(),
        final_checkpoint: final_path,
        runlog,
        epochs_completed: model.epochs_completed,
    })
}

/// Synthesize a full volume with a trained model by sliding the k-window over
/// every axial index. Multi-slice generator outputs contribute only their
/// center slice, so volumes from both modes are directly comparable. The
/// output is mapped back to [0,1] and rescaled to a maximum intensity of 1.
pub fn synthesize<S: Scalar>(model: &TrainedModel<S>, source: &Volume, threads: usize) -> Result<Volume> {
    let cfg = &model.config;
    let net_name = if source.contrast == cfg.source {
        if cfg.mode == TrainMode::Pgan {
            "g"
        } else {
            "gy"
        }
    } else if source.contrast == cfg.target && cfg.mode.is_cgan() {
        "gx"
    } else {
        return Err(Error::usage(format!(
            "model trained for {}->{} cannot synthesize from a {} volume",
            cfg.source.label(),
            cfg.target.label(),
            source.contrast.label()
        )));
    };
    let bundle = model.net(net_name)?;
    let [d, h, wd] = source.dims;
    if h > cfg.image_size || wd > cfg.image_size {
        return Err(Error::usage(format!(
            "source slices {h}x{wd} exceed the model's image_size {}",
            cfg.image_size
        )));
    }
    let k = cfg.k;
    let half = k / 2;
    let pads = [
        dataset::center_pads(h, cfg.image_size),
        dataset::center_pads(wd, cfg.image_size),
    ];
    let out_channel = bundle.def.out_channels / 2; // center slice of the output stack
    let slices: Vec<Result<Vec<f64>>> = parallel_map(d, threads, |z| {
        let mut stack = Vec::with_capacity(k * cfg.image_size * cfg.image_size);
        for off in -(half as isize)..=(half as isize) {
            let zz = (z as isize + off).clamp(0, d as isize - 1) as usize;
            let padded = source.slice_tensor(zz).pad_zero(&pads)?;
            stack.extend(padded.into_data());
        }
        let input: Tensor<S> = to_net(&Tensor::new(
            vec![k, cfg.image_size, cfg.image_size],
            stack,
        )?);
        let out = crate::nn::infer(&bundle.def, &bundle.params, &input)?;
        let plane = from_net(&out, out_channel);
        // crop the centered padding back off
        let mut cropped = Vec::with_capacity(h * wd);
        for row in 0..h {
            let base = (row + pads[0].0) * cfg.image_size + pads[1].0;
            cropped.extend_from_slice(&plane[base..base + wd]);
        }
        Ok(cropped)
    });
    let mut data = Vec::with_capacity(d * h * wd);
    for s in slices {
        data.extend(s?);
    }
    let target_contrast =
        if source.contrast == cfg.source { cfg.target } else { cfg.source };
    let out = Volume { dims: source.dims, data, contrast: target_contrast, alignment: Alignment::Registered };
    Ok(out.rescaled_to_unit_max())
}

/// Synthesis through the precision-erased handle.
pub fn synthesize_any(model: &AnyModel, source: &Volume, threads: usize) -> Result<Volume> {
    match model {
        AnyModel::F64(m) => synthesize(m, source, threads),
        AnyModel::F32(m) => synthesize(m, source, threads),
    }
}
