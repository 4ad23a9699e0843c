//! Dataset assembly: subject-level splits, k-neighborhood slice extraction,
//! the plain-text manifest, and the deterministic on-disk dataset builder.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::phantom::{generate_phantom, protocol_for, render_contrast};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::util::parallel_map;
use crate::volume::{
    mean_normalize, misalign, normalize_volume, Contrast, PooledAccumulator, PooledStats, Volume,
};

pub const MANIFEST_FORMAT: &str = "cfman.v1";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Which training pairing a sample targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceMode {
    /// k source slices in, single center target slice out.
    Pgan,
    /// k source slices in, k target slices out.
    Cgan,
}

/// One training sample: a k-stack of source slices and its target slice(s).
#[derive(Clone, Debug)]
pub struct SliceSample {
    /// [k, S, S] source stack (S = padded square size).
    pub source: Tensor<f64>,
    /// [1, S, S] (pgan) or [k, S, S] (cgan) target.
    pub target: Tensor<f64>,
    pub center: usize,
    pub subject: usize,
}

/// Split a slice into its per-axis center padding (extra goes after).
pub fn center_pads(from: usize, to: usize) -> (usize, usize) {
    let total = to - from;
    (total / 2, total - total / 2)
}

/// Extract one sample per axial index. Edge indices replicate the border
/// slice; every slice is zero-padded (centered) to `pad_to` square.
pub fn extract_slices(
    source: &Volume,
    target: &Volume,
    k: usize,
    mode: SliceMode,
    pad_to: usize,
    subject: usize,
) -> Result<Vec<SliceSample>> {
    if source.dims != target.dims {
        return Err(Error::data(format!(
            "source dims {:?} != target dims {:?}",
            source.dims, target.dims
        )));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::config(format!("slice count k = {k} must be odd")));
    }
    let [d, h, w] = source.dims;
    if pad_to < h || pad_to < w {
        return Err(Error::data(format!(
            "pad size {pad_to} smaller than slice {h}x{w}"
        )));
    }
    let pads = [center_pads(h, pad_to), center_pads(w, pad_to)];
    let pad_slice = |v: &Volume, z: usize| -> Result<Vec<f64>> {
        let t = v.slice_tensor(z).pad_zero(&pads)?;
        Ok(t.into_data())
    };
    let half = k / 2;
    let clamp = |z: isize| -> usize { z.clamp(0, d as isize - 1) as usize };
    let plane = pad_to * pad_to;
    let mut samples = Vec::with_capacity(d);
    for c in 0..d {
        let mut src = Vec::with_capacity(k * plane);
        for off in -(half as isize)..=(half as isize) {
            src.extend(pad_slice(source, clamp(c as isize + off))?);
        }
        let tgt = match mode {
            SliceMode::Pgan => pad_slice(target, c)?,
            SliceMode::Cgan => {
                let mut t = Vec::with_capacity(k * plane);
                for off in -(half as isize)..=(half as isize) {
                    t.extend(pad_slice(target, clamp(c as isize + off))?);
                }
                t
            }
        };
        let kt = tgt.len() / plane;
        samples.push(SliceSample {
            source: Tensor::new(vec![k, pad_to, pad_to], src)?,
            target: Tensor::new(vec![kt, pad_to, pad_to], tgt)?,
            center: c,
            subject,
        });
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            _ => Err(Error::data(format!("unknown role '{s}'"))),
        }
    }
}

/// Subject-level train/test split: deterministic shuffle, then the first
/// round(n·fraction) subjects train.
pub fn split_dataset(n_subjects: usize, train_fraction: f64, seed: u64) -> Result<Vec<Role>> {
    if n_subjects < 2 {
        return Err(Error::data(format!("need at least 2 subjects, got {n_subjects}")));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n_subjects).collect();
    let mut rng = SeededRng::substream(seed, 0x53_50_4c_49);
    rng.shuffle(&mut order);
    let n_train = ((n_subjects as f64 * train_fraction).round() as usize)
        .clamp(1, n_subjects - 1);
    let mut roles = vec![Role::Test; n_subjects];
    for &s in order.iter().take(n_train) {
        roles[s] = Role::Train;
    }
    Ok(roles)
}

/// Which contrasts receive render noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseTarget {
    Both,
    Only(Contrast),
}

impl NoiseTarget {
    fn applies_to(self, c: Contrast) -> bool {
        match self {
            NoiseTarget::Both => true,
            NoiseTarget::Only(t) => t == c,
        }
    }

    pub fn label(self) -> String {
        match self {
            NoiseTarget::Both => "both".into(),
            NoiseTarget::Only(c) => c.label().into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "both" {
            Ok(NoiseTarget::Both)
        } else {
            Ok(NoiseTarget::Only(Contrast::parse(s)?))
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub subjects: usize,
    pub dims: [usize; 3],
    pub seed: u64,
    pub n_tissues: usize,
    pub train_fraction: f64,
    pub noise_amplitude: f64,
    pub noise_target: NoiseTarget,
    pub misalign: bool,
    pub max_rot_deg: f64,
    pub max_shift_vox: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            subjects: 10,
            dims: [16, 64, 64],
            seed: 42,
            n_tissues: 5,
            train_fraction: 0.8,
            noise_amplitude: 0.0,
            noise_target: NoiseTarget::Both,
            misalign: false,
            max_rot_deg: 5.0,
            max_shift_vox: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectEntry {
    pub id: usize,
    pub seed: u64,
    pub role: Role,
}

/// Plain-text description of a generated dataset: provenance, protocols,
/// frozen normalization statistics, and the subject roster.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub dataset_seed: u64,
    pub dims: [usize; 3],
    pub n_tissues: usize,
    pub train_fraction: f64,
    pub noise_amplitude: f64,
    pub noise_target: NoiseTarget,
    pub misaligned_variants: bool,
    pub registered_variants: bool,
    pub max_rot_deg: f64,
    pub max_shift_vox: f64,
    pub norm_stats: Vec<(Contrast, PooledStats)>,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn stats_for(&self, c: Contrast) -> Option<PooledStats> {
        self.norm_stats.iter().find(|(k, _)| *k == c).map(|(_, s)| *s)
    }

    pub fn subjects_with_role(&self, role: Role) -> Vec<&SubjectEntry> {
        self.subjects.iter().filter(|s| s.role == role).collect()
    }

    /// Volume file name for a subject/contrast/alignment triple.
    pub fn volume_file(id: usize, contrast: Contrast, misaligned: bool) -> String {
        if misaligned {
            format!("subj{id:03}_{}_mis.cfv", contrast.label())
        } else {
            format!("subj{id:03}_{}.cfv", contrast.label())
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {MANIFEST_FORMAT}");
        let _ = writeln!(s, "dataset_seed = {}", self.dataset_seed);
        let _ = writeln!(s, "dims = {} {} {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(s, "n_tissues = {}", self.n_tissues);
        let _ = writeln!(s, "train_fraction = {:e}", self.train_fraction);
        let _ = writeln!(s, "noise_amplitude = {:e}", self.noise_amplitude);
        let _ = writeln!(s, "noise_target = {}", self.noise_target.label());
        let _ = writeln!(s, "registered_variants = {}", self.registered_variants);
        let _ = writeln!(s, "misaligned_variants = {}", self.misaligned_variants);
        let _ = writeln!(s, "max_rot_deg = {:e}", self.max_rot_deg);
        let _ = writeln!(s, "max_shift_vox = {:e}", self.max_shift_vox);
        for c in [Contrast::T1w, Contrast::T2w] {
            let p = protocol_for(c);
            let _ = writeln!(s, "protocol.{} = TR {:e} TE {:e}", c.label(), p.tr_ms, p.te_ms);
        }
        for (c, st) in &self.norm_stats {
            let _ = writeln!(s, "norm.{} = mean {:e} std {:e}", c.label(), st.mean, st.std);
        }
        for subj in &self.subjects {
            let _ = writeln!(
                s,
                "subject = id {} seed {} role {}",
                subj.id,
                subj.seed,
                subj.role.label()
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: Vec<(&str, &str)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("manifest line without '=': {line}")))?;
            kv.push((k.trim(), v.trim()));
        }
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::data(format!("manifest missing key '{key}'")))
        };
        if get("format")? != MANIFEST_FORMAT {
            return Err(Error::data(format!("unsupported manifest format {}", get("format")?)));
        }
        let parse_f = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|e| Error::data(format!("bad number '{v}': {e}")))
        };
        let parse_u = |v: &str| -> Result<u64> {
            v.parse::<u64>().map_err(|e| Error::data(format!("bad integer '{v}': {e}")))
        };
        let dims_raw: Vec<&str> = get("dims")?.split_whitespace().collect();
        if dims_raw.len() != 3 {
            return Err(Error::data("dims must have three components"));
        }
        let dims = [
            parse_u(dims_raw[0])? as usize,
            parse_u(dims_raw[1])? as usize,
            parse_u(dims_raw[2])? as usize,
        ];
        let mut norm_stats = Vec::new();
        let mut subjects = Vec::new();
        for (k, v) in &kv {
            if let Some(label) = k.strip_prefix("norm.") {
                let c = Contrast::parse(label).map_err(|e| Error::data(e.to_string()))?;
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "mean" || parts[2] != "std" {
                    return Err(Error::data(format!("bad norm record '{v}'")));
                }
                norm_stats.push((c, PooledStats { mean: parse_f(parts[1])?, std: parse_f(parts[3])? }));
            } else if *k == "subject" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 6 || parts[0] != "id" || parts[2] != "seed" || parts[4] != "role" {
                    return Err(Error::data(format!("bad subject record '{v}'")));
                }
                subjects.push(SubjectEntry {
                    id: parse_u(parts[1])? as usize,
                    seed: parse_u(parts[3])?,
                    role: Role::parse(parts[5])?,
                });
            }
        }
        Ok(DatasetManifest {
            dataset_seed: parse_u(get("dataset_seed")?)?,
            dims,
            n_tissues: parse_u(get("n_tissues")?)? as usize,
            train_fraction: parse_f(get("train_fraction")?)?,
            noise_amplitude: parse_f(get("noise_amplitude")?)?,
            noise_target: NoiseTarget::parse(get("noise_target")?)?,
            registered_variants: get("registered_variants")? == "true",
            misaligned_variants: get("misaligned_variants")? == "true",
            max_rot_deg: parse_f(get("max_rot_deg")?)?,
            max_shift_vox: parse_f(get("max_shift_vox")?)?,
            norm_stats,
            subjects,
        })
    }
}

fn subject_volumes(spec: &PhantomSpec, subject_seed: u64) -> Result<Vec<(Contrast, Volume, Vec<bool>)>> {
    let maps = generate_phantom(subject_seed, spec.dims, spec.n_tissues)?;
    let mask = maps.mask();
    let mut out = Vec::with_capacity(2);
    for c in [Contrast::T1w, Contrast::T2w] {
        let amp = if spec.noise_target.applies_to(c) { spec.noise_amplitude } else { 0.0 };
        let noise_seed = subject_seed ^ (0x100 + c.code() as u64);
        let v = render_contrast(&maps, &protocol_for(c), amp, noise_seed)?;
        out.push((c, v, mask.clone()));
    }
    Ok(out)
}

/// Build a complete dataset under `out_dir`: normalized registered volume
/// pairs (plus misaligned variants when requested) and the manifest.
///
/// Pooled normalization statistics are computed on training subjects only and
/// frozen into the manifest; test volumes reuse them.
pub fn build_phantom_dataset(spec: &PhantomSpec, out_dir: &Path, threads: usize) -> Result<DatasetManifest> {
    if spec.subjects < 2 {
        return Err(Error::data(format!("need at least 2 subjects, got {}", spec.subjects)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut seed_rng = SeededRng::substream(spec.seed, 0x44_41_54_41);
    let subject_seeds: Vec<u64> = (0..spec.subjects).map(|_| seed_rng.next_u64()).collect();
    let roles = split_dataset(spec.subjects, spec.train_fraction, spec.seed)?;

    // render all subjects (parallel across subjects, deterministic order)
    let rendered: Vec<Result<Vec<(Contrast, Volume, Vec<bool>)>>> =
        parallel_map(spec.subjects, threads, |i| subject_volumes(spec, subject_seeds[i]));
    let mut all: Vec<Vec<(Contrast, Volume, Vec<bool>)>> = Vec::with_capacity(spec.subjects);
    for r in rendered {
        all.push(r?);
    }

    // pooled stats per contrast over mean-normalized training subjects
    let mut norm_stats = Vec::new();
    for c in [Contrast::T1w, Contrast::T2w] {
        let mut acc = PooledAccumulator::default();
        for (i, vols) in all.iter().enumerate() {
            if roles[i] != Role::Train {
                continue;
            }
            let (_, v, mask) = vols.iter().find(|(vc, _, _)| *vc == c).expect("both contrasts");
            let n1 = mean_normalize(v, mask)?;
            acc.add(&n1, mask);
        }
        norm_stats.push((c, acc.finish()?));
    }

    // normalize everything with the frozen stats, misalign if requested, write
    for (i, vols) in all.iter().enumerate() {
        for (c, v, mask) in vols {
            let stats = norm_stats.iter().find(|(k, _)| k == c).expect("stats").1;
            let normalized = normalize_volume(v, mask, stats)?;
            let path = out_dir.join(DatasetManifest::volume_file(i, *c, false));
            io::write_volume(&path, &normalized)?;
            if spec.misalign {
                let mis_seed = subject_seeds[i] ^ (0x200 + c.code() as u64);
                let mis = misalign(&normalized, mis_seed, spec.max_rot_deg, spec.max_shift_vox)?;
                let path = out_dir.join(DatasetManifest::volume_file(i, *c, true));
                io::write_volume(&path, &mis)?;
            }
        }
    }

    let manifest = DatasetManifest {
        dataset_seed: spec.seed,
        dims: spec.dims,
        n_tissues: spec.n_tissues,
        train_fraction: spec.train_fraction,
        noise_amplitude: spec.noise_amplitude,
        noise_target: spec.noise_target,
        registered_variants: true,
        misaligned_variants: spec.misalign,
        max_rot_deg: spec.max_rot_deg,
        max_shift_vox: spec.max_shift_vox,
        norm_stats,
        subjects: (0..spec.subjects)
            .map(|i| SubjectEntry { id: i, seed: subject_seeds[i], role: roles[i] })
            .collect(),
    };
    fs::write(out_dir.join(MANIFEST_FILE), manifest.to_text())
        .map_err(|e| Error::io(out_dir.join(MANIFEST_FILE), e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetManifest::parse(&text)
}

/// Load one subject volume from a dataset directory.
pub fn load_volume(dir: &Path, id: usize, contrast: Contrast, misaligned: bool) -> Result<Volume> {
    io::read_volume(&dir.join(DatasetManifest::volume_file(id, contrast, misaligned)))
}

pub fn volume_path(dir: &Path, id: usize, contrast: Contrast, misaligned: bool) -> PathBuf {
    dir.join(DatasetManifest::volume_file(id, contrast, misaligned))
}
