//! 3-D volumes: contrast tags, alignment provenance, the two-step intensity
//! normalization, and in-plane rigid misalignment.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Contrast weighting of a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Contrast {
    T1w,
    T2w,
}

impl Contrast {
    pub fn code(self) -> u8 {
        match self {
            Contrast::T1w => 0,
            Contrast::T2w => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Contrast::T1w),
            1 => Ok(Contrast::T2w),
            _ => Err(Error::data(format!("unknown contrast code {code}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Contrast::T1w => "t1w",
            Contrast::T2w => "t2w",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "t1w" => Ok(Contrast::T1w),
            "t2w" => Ok(Contrast::T2w),
            _ => Err(Error::usage(format!("unknown contrast label '{s}' (expected t1w|t2w)"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Contrast::T1w => Contrast::T2w,
            Contrast::T2w => Contrast::T1w,
        }
    }
}

/// Whether a volume sits on the shared grid or carries a recorded in-plane
/// rigid perturbation (rotation in degrees, shifts in voxels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alignment {
    Registered,
    Misaligned { rot_deg: f64, shift_y: f64, shift_x: f64 },
}

impl Alignment {
    pub fn is_misaligned(&self) -> bool {
        matches!(self, Alignment::Misaligned { .. })
    }

    pub fn rigid_params(&self) -> [f64; 3] {
        match *self {
            Alignment::Registered => [0.0; 3],
            Alignment::Misaligned { rot_deg, shift_y, shift_x } => [rot_deg, shift_y, shift_x],
        }
    }
}

/// Dense [D,H,W] scalar field with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub contrast: Contrast,
    pub alignment: Alignment,
}

impl Volume {
    pub fn numel(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let plane = self.dims[1] * self.dims[2];
        &self.data[z * plane..(z + 1) * plane]
    }

    pub fn slice_tensor(&self, z: usize) -> Tensor<f64> {
        Tensor::new(vec![self.dims[1], self.dims[2]], self.slice(z).to_vec()).expect("slice shape")
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescale so the maximum intensity is exactly 1 (no-op for empty or
    /// all-zero volumes).
    pub fn rescaled_to_unit_max(&self) -> Volume {
        let max = self.max_value();
        if max <= 0.0 || max == 1.0 {
            return self.clone();
        }
        let mut out = self.clone();
        for v in &mut out.data {
            *v /= max;
        }
        out
    }
}

/// Pooled intensity statistics of mean-normalized training volumes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PooledStats {
    pub mean: f64,
    pub std: f64,
}

/// Step 1 of the normalization: divide by the in-mask mean so the brain mean
/// is exactly 1.
pub fn mean_normalize(v: &Volume, mask: &[bool]) -> Result<Volume> {
    if mask.len() != v.numel() {
        return Err(Error::data("mask length does not match volume"));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (&x, &m) in v.data.iter().zip(mask) {
        if m {
            sum += x;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("empty brain mask"));
    }
    let mean = sum / n as f64;
    if mean <= 0.0 {
        return Err(Error::data(format!("non-positive in-mask mean {mean}")));
    }
    let mut out = v.clone();
    for x in &mut out.data {
        *x /= mean;
    }
    Ok(out)
}

/// Accumulate pooled statistics over mean-normalized training volumes of one
/// contrast. Population variance over all in-mask voxels.
#[derive(Default)]
pub struct PooledAccumulator {
    sum: f64,
    sum_sq: f64,
    n: u64,
}

impl PooledAccumulator {
    pub fn add(&mut self, mean_normalized: &Volume, mask: &[bool]) {
        for (&x, &m) in mean_normalized.data.iter().zip(mask) {
            if m {
                self.sum += x;
                self.sum_sq += x * x;
                self.n += 1;
            }
        }
    }

    pub fn finish(&self) -> Result<PooledStats> {
        if self.n == 0 {
            return Err(Error::data("pooled statistics over zero voxels"));
        }
        let mean = self.sum / self.n as f64;
        let var = (self.sum_sq / self.n as f64 - mean * mean).max(0.0);
        Ok(PooledStats { mean, std: var.sqrt() })
    }
}

/// Full normalization: per-subject mean to 1, then map pooled mean + 3·std to
/// 1, then clip into [0,1].
pub fn normalize_volume(v: &Volume, mask: &[bool], pooled: PooledStats) -> Result<Volume> {
    let mut out = mean_normalize(v, mask)?;
    let ceiling = pooled.mean + 3.0 * pooled.std;
    if ceiling <= 0.0 {
        return Err(Error::data(format!("non-positive normalization ceiling {ceiling}")));
    }
    for x in &mut out.data {
        *x = (*x / ceiling).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Apply an in-plane rigid transform (rotation about the slice center, then
/// translation) to every axial slice, with bilinear resampling and zero fill.
pub fn apply_rigid(v: &Volume, rot_deg: f64, shift_y: f64, shift_x: f64) -> Volume {
    if rot_deg == 0.0 && shift_y == 0.0 && shift_x == 0.0 {
        return v.clone();
    }
    let [d, h, w] = v.dims;
    let theta = rot_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = v.clone();
    let plane = h * w;
    for z in 0..d {
        let src = &v.data[z * plane..(z + 1) * plane];
        let dst = &mut out.data[z * plane..(z + 1) * plane];
        for oy in 0..h {
            for ox in 0..w {
                // inverse map: rotate by -theta about the center after
                // removing the translation
                let py = oy as f64 - cy - shift_y;
                let px = ox as f64 - cx - shift_x;
                let sy = cos_t * py + sin_t * px + cy;
                let sx = -sin_t * py + cos_t * px + cx;
                dst[oy * w + ox] = bilinear(src, h, w, sy, sx);
            }
        }
    }
    out
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let mut acc = 0.0;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let iy = y0 as i64 + dy;
        if iy < 0 || iy >= h as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let ix = x0 as i64 + dx;
            if ix < 0 || ix >= w as i64 || wx == 0.0 {
                continue;
            }
            acc += wy * wx * plane[iy as usize * w + ix as usize];
        }
    }
    acc
}

/// Seeded rigid misalignment within the given bounds; the drawn parameters
/// are recorded in the alignment flag.
pub fn misalign(v: &Volume, seed: u64, max_rot_deg: f64, max_shift_vox: f64) -> Result<Volume> {
    if max_rot_deg < 0.0 || max_shift_vox < 0.0 {
        return Err(Error::config("misalignment bounds must be >= 0"));
    }
    let mut rng = SeededRng::substream(seed, 0x4d_49_53_41);
    let rot = rng.uniform_in(-max_rot_deg, max_rot_deg);
    let dy = rng.uniform_in(-max_shift_vox, max_shift_vox);
    let dx = rng.uniform_in(-max_shift_vox, max_shift_vox);
    let mut out = apply_rigid(v, rot, dy, dx);
    out.alignment = Alignment::Misaligned { rot_deg: rot, shift_y: dy, shift_x: dx };
    Ok(out)
}
