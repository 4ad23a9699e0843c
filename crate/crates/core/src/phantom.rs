//! Parametric head phantom: shared tissue-parameter maps and the spin-echo
//! signal equation that renders them into contrast-weighted volumes.
//!
//! Both contrasts of a subject are deterministic voxelwise functions of the
//! same (PD, T1, T2) maps, so a cross-contrast mapping exists by construction
//! and is learnable from data. The tissue table is chosen so that some classes
//! alias in one contrast but separate in the other, which keeps a purely
//! intensity-based regressor imperfect while spatial context disambiguates.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::{Alignment, Contrast, Volume};

/// Co-registered tissue-parameter fields of one subject. T1/T2 are in
/// milliseconds, PD in arbitrary units; background has PD exactly 0.
#[derive(Clone, Debug)]
pub struct TissueMaps {
    pub dims: [usize; 3],
    pub pd: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub subject_seed: u64,
}

impl TissueMaps {
    pub fn numel(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Brain mask: voxels with PD > 0.
    pub fn mask(&self) -> Vec<bool> {
        self.pd.iter().map(|&v| v > 0.0).collect()
    }
}

/// Acquisition protocol: repetition and echo times plus the contrast label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Protocol {
    pub tr_ms: f64,
    pub te_ms: f64,
    pub label: Contrast,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.tr_ms <= 0.0 || self.te_ms < 0.0 {
            return Err(Error::config(format!(
                "protocol requires TR > 0 and TE >= 0, got TR {} TE {}",
                self.tr_ms, self.te_ms
            )));
        }
        Ok(())
    }
}

/// T1-weighted gradient-echo style protocol.
pub const PROTOCOL_T1W: Protocol = Protocol { tr_ms: 14.0, te_ms: 7.7, label: Contrast::T1w };
/// T2-weighted spin-echo style protocol.
pub const PROTOCOL_T2W: Protocol = Protocol { tr_ms: 7730.0, te_ms: 80.0, label: Contrast::T2w };

pub fn protocol_for(contrast: Contrast) -> Protocol {
    match contrast {
        Contrast::T1w => PROTOCOL_T1W,
        Contrast::T2w => PROTOCOL_T2W,
    }
}

/// (PD, T1 ms, T2 ms) per tissue class. Class 0 is fluid (ventricle plus a
/// couple of pockets), the last class is fat-like (small bright pockets), and
/// the middle classes partition the remaining interior. Fluid is by far the
/// brightest class in the long-TR contrast and fat in the short-TR one; both
/// occupy only a few percent of the head, so they sit above the pooled
/// mean + 3·std ceiling and saturate to 1 after normalization, giving every
/// volume a stable maximum. The dura-like class nearly matches gray matter in
/// the short-TR contrast but separates in the long-TR one, and fat does the
/// reverse against white matter, so a voxelwise intensity map cannot resolve
/// them without spatial context.
pub const TISSUE_TABLE: [(f64, f64, f64); 5] = [
    (1.00, 4000.0, 2000.0), // fluid
    (0.65, 510.0, 67.0),    // white-matter-like
    (0.78, 920.0, 100.0),   // gray-matter-like
    (0.70, 870.0, 47.0),    // dura/muscle-like
    (0.90, 200.0, 60.0),    // fat-like
];

/// Maximum number of distinct tissue classes supported.
pub const MAX_TISSUES: usize = TISSUE_TABLE.len();

const VARIATION: f64 = 0.05;
const BUMPS_PER_FIELD: usize = 6;
const FLUID_POCKETS: usize = 2;
const FAT_POCKETS: usize = 3;

/// 3-tap partial-volume smoothing of the parameter maps, in-plane and then
/// along z (thick-slice mixing). PD blurs directly (background is zero);
/// T1/T2 blur mask-weighted so background placeholders never bleed into
/// tissue.
fn partial_volume_smooth(pd: &mut Vec<f64>, t1: &mut Vec<f64>, t2: &mut Vec<f64>, dims: [usize; 3]) {
    let [d, h, w] = dims;
    let plane = h * w;
    let blur_plane = |src: &[f64], dst: &mut [f64]| {
        let mut tmp = vec![0.0; plane];
        for y in 0..h {
            for x in 0..w {
                let c = src[y * w + x];
                let l = if x > 0 { src[y * w + x - 1] } else { c };
                let r = if x + 1 < w { src[y * w + x + 1] } else { c };
                tmp[y * w + x] = 0.25 * l + 0.5 * c + 0.25 * r;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let c = tmp[y * w + x];
                let u = if y > 0 { tmp[(y - 1) * w + x] } else { c };
                let dn = if y + 1 < h { tmp[(y + 1) * w + x] } else { c };
                dst[y * w + x] = 0.25 * u + 0.5 * c + 0.25 * dn;
            }
        }
    };
    let mut buf = vec![0.0; plane];
    for z in 0..d {
        let lo = z * plane;
        let hi = lo + plane;
        let mask: Vec<f64> = pd[lo..hi].iter().map(|&v| f64::from(v > 0.0)).collect();
        let mut wmask = vec![0.0; plane];
        blur_plane(&mask, &mut wmask);
        for (field, weighted) in [(&mut *t1, true), (&mut *t2, true), (&mut *pd, false)] {
            if weighted {
                let masked: Vec<f64> =
                    field[lo..hi].iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                blur_plane(&masked, &mut buf);
                for i in 0..plane {
                    if wmask[i] > 0.0 {
                        field[lo + i] = buf[i] / wmask[i];
                    }
                }
            } else {
                blur_plane(&field[lo..hi].to_vec(), &mut buf);
                field[lo..hi].copy_from_slice(&buf);
            }
        }
    }

    // z pass over the in-plane-smoothed maps
    let tap = |src: &[f64], z: usize, i: usize| -> [f64; 3] {
        let c = src[z * plane + i];
        let lo = if z > 0 { src[(z - 1) * plane + i] } else { c };
        let hi = if z + 1 < d { src[(z + 1) * plane + i] } else { c };
        [lo, c, hi]
    };
    let mask: Vec<f64> = pd.iter().map(|&v| f64::from(v > 0.0)).collect();
    let mut out_pd = pd.clone();
    let mut out_t1 = t1.clone();
    let mut out_t2 = t2.clone();
    for z in 0..d {
        for i in 0..plane {
            let [m0, m1, m2] = tap(&mask, z, i);
            let wm = 0.25 * m0 + 0.5 * m1 + 0.25 * m2;
            let [p0, p1, p2] = tap(pd, z, i);
            out_pd[z * plane + i] = 0.25 * p0 + 0.5 * p1 + 0.25 * p2;
            if wm > 0.0 {
                let mw = |v: [f64; 3]| {
                    (0.25 * v[0] * m0 + 0.5 * v[1] * m1 + 0.25 * v[2] * m2) / wm
                };
                out_t1[z * plane + i] = mw(tap(t1, z, i));
                out_t2[z * plane + i] = mw(tap(t2, z, i));
            }
        }
    }
    *pd = out_pd;
    *t1 = out_t1;
    *t2 = out_t2;
}

struct Bump {
    center: [f64; 3],
    inv_sigma: [f64; 3],
    amplitude: f64,
}

fn draw_bumps(rng: &mut SeededRng, dims: [usize; 3], signed: bool) -> Vec<Bump> {
    (0..BUMPS_PER_FIELD)
        .map(|_| {
            let center = [
                rng.uniform_in(0.2, 0.8) * dims[0] as f64,
                rng.uniform_in(0.2, 0.8) * dims[1] as f64,
                rng.uniform_in(0.2, 0.8) * dims[2] as f64,
            ];
            // wider sigmas along z: neighboring cross-sections of a volume
            // are strongly correlated, and the multi-slice conditioning
            // variants rely on exactly that structure
            let inv_sigma = [
                1.0 / (rng.uniform_in(0.35, 0.60) * dims[0] as f64),
                1.0 / (rng.uniform_in(0.15, 0.40) * dims[1] as f64),
                1.0 / (rng.uniform_in(0.15, 0.40) * dims[2] as f64),
            ];
            let amplitude = if signed {
                rng.uniform_in(-1.0, 1.0)
            } else {
                rng.uniform_in(0.5, 1.5)
            };
            Bump { center, inv_sigma, amplitude }
        })
        .collect()
}

fn field_at(bumps: &[Bump], z: f64, y: f64, x: f64) -> f64 {
    let mut acc = 0.0;
    for b in bumps {
        let dz = (z - b.center[0]) * b.inv_sigma[0];
        let dy = (y - b.center[1]) * b.inv_sigma[1];
        let dx = (x - b.center[2]) * b.inv_sigma[2];
        acc += b.amplitude * (-0.5 * (dz * dz + dy * dy + dx * dx)).exp();
    }
    acc
}

/// Deterministic per-subject phantom: a jittered head ellipsoid that spans
/// every axial slice, a fluid rim and ventricle, and blob-partitioned interior
/// tissue classes with low-amplitude smooth parameter variation.
pub fn generate_phantom(subject_seed: u64, dims: [usize; 3], n_tissues: usize) -> Result<TissueMaps> {
    if dims.iter().any(|&d| d < 16) {
        return Err(Error::config(format!("phantom dims {dims:?} must be >= 16 per axis")));
    }
    if !(2..=MAX_TISSUES).contains(&n_tissues) {
        return Err(Error::config(format!(
            "n_tissues {n_tissues} outside supported range 2..={MAX_TISSUES}"
        )));
    }
    let [d, h, w] = dims;
    let mut rng = SeededRng::substream(subject_seed, 0x50_48_41_4e);
    // head ellipsoid, z semi-axis strictly larger than D/2 so no slice is empty
    let center = [
        d as f64 * rng.uniform_in(0.49, 0.51),
        h as f64 * rng.uniform_in(0.48, 0.52),
        w as f64 * rng.uniform_in(0.48, 0.52),
    ];
    let semi = [
        d as f64 * rng.uniform_in(0.60, 0.66),
        h as f64 * rng.uniform_in(0.36, 0.42),
        w as f64 * rng.uniform_in(0.32, 0.38),
    ];
    // bright pocket ellipsoids: fluid (ventricle plus pockets) and fat
    struct Pocket {
        center: [f64; 3],
        semi: [f64; 3],
        class: usize,
    }
    let fat_class = n_tissues - 1;
    let mut pockets: Vec<Pocket> = Vec::new();
    let draw_pocket = |rng: &mut SeededRng, scale: f64, class: usize| {
        // pocket centers stay inside r < 0.55 of the head so they never touch
        // the mask boundary; pockets are elongated along z like the rest of
        // the anatomy
        let dir = [rng.uniform_in(-0.55, 0.55), rng.uniform_in(-0.55, 0.55), rng.uniform_in(-0.55, 0.55)];
        let f = scale * rng.uniform_in(0.85, 1.15);
        Pocket {
            center: [
                center[0] + dir[0] * semi[0],
                center[1] + dir[1] * semi[1],
                center[2] + dir[2] * semi[2],
            ],
            semi: [1.5 * f * semi[0], f * semi[1], f * semi[2]],
            class,
        }
    };
    // ventricle: a larger central fluid pocket
    let ventricle = {
        let mut p = draw_pocket(&mut rng, 0.26, 0);
        p.center = [
            center[0] + d as f64 * rng.uniform_in(-0.03, 0.03),
            center[1] + h as f64 * rng.uniform_in(-0.04, 0.04),
            center[2] + w as f64 * rng.uniform_in(-0.04, 0.04),
        ];
        p
    };
    pockets.push(ventricle);
    for _ in 0..FLUID_POCKETS {
        pockets.push(draw_pocket(&mut rng, 0.19, 0));
    }
    for _ in 0..FAT_POCKETS {
        pockets.push(draw_pocket(&mut rng, 0.22, fat_class));
    }
    // interior class score fields and parameter variation fields
    let interior_hi = if n_tissues <= 3 { 1 } else { n_tissues - 2 };
    let class_fields: Vec<Vec<Bump>> =
        (1..=interior_hi).map(|_| draw_bumps(&mut rng, dims, false)).collect();
    let var_fields: Vec<Vec<Bump>> = (0..3).map(|_| draw_bumps(&mut rng, dims, true)).collect();

    let numel = d * h * w;
    let mut pd = vec![0.0; numel];
    let mut t1 = vec![1.0; numel];
    let mut t2 = vec![1.0; numel];
    let mut idx = 0usize;
    for iz in 0..d {
        let z = iz as f64;
        for iy in 0..h {
            let y = iy as f64;
            for ix in 0..w {
                let x = ix as f64;
                let rz = (z - center[0]) / semi[0];
                let ry = (y - center[1]) / semi[1];
                let rx = (x - center[2]) / semi[2];
                let r2 = rz * rz + ry * ry + rx * rx;
                if r2 > 1.0 {
                    idx += 1;
                    continue;
                }
                let mut class = None;
                for p in &pockets {
                    let pz = (z - p.center[0]) / p.semi[0];
                    let py = (y - p.center[1]) / p.semi[1];
                    let px = (x - p.center[2]) / p.semi[2];
                    if pz * pz + py * py + px * px <= 1.0 {
                        class = Some(p.class);
                        break;
                    }
                }
                let class = class.unwrap_or_else(|| {
                    let mut best = 1usize;
                    let mut best_score = f64::NEG_INFINITY;
                    for (c, bumps) in class_fields.iter().enumerate() {
                        let s = field_at(bumps, z, y, x);
                        if s > best_score {
                            best_score = s;
                            best = c + 1;
                        }
                    }
                    best
                });
                let (base_pd, base_t1, base_t2) = TISSUE_TABLE[class];
                let jitter =
                    |f: &[Bump]| 1.0 + VARIATION * field_at(f, z, y, x).tanh();
                pd[idx] = base_pd * jitter(&var_fields[0]);
                t1[idx] = base_t1 * jitter(&var_fields[1]);
                t2[idx] = base_t2 * jitter(&var_fields[2]);
                idx += 1;
            }
        }
    }
    partial_volume_smooth(&mut pd, &mut t1, &mut t2, dims);
    Ok(TissueMaps { dims, pd, t1, t2, subject_seed })
}

/// Spin-echo style signal equation: S = PD·(1−exp(−TR/T1))·exp(−TE/T2),
/// plus optional seeded Gaussian noise inside the head mask. The noise std is
/// `amplitude` times the peak in-mask clean signal (the usual peak-referenced
/// SNR convention), so amplitude 0.05 is clearly visible speckle.
pub fn render_contrast(maps: &TissueMaps, protocol: &Protocol, noise_amplitude: f64, noise_seed: u64) -> Result<Volume> {
    protocol.validate()?;
    if noise_amplitude < 0.0 {
        return Err(Error::config(format!("noise amplitude {noise_amplitude} must be >= 0")));
    }
    let numel = maps.numel();
    let mut data = vec![0.0; numel];
    let mut mask_peak = 0.0f64;
    let mut mask_n = 0usize;
    for i in 0..numel {
        if maps.pd[i] <= 0.0 {
            continue;
        }
        let s = maps.pd[i]
            * (1.0 - (-protocol.tr_ms / maps.t1[i]).exp())
            * (-protocol.te_ms / maps.t2[i]).exp();
        data[i] = s;
        mask_peak = mask_peak.max(s);
        mask_n += 1;
    }
    if noise_amplitude > 0.0 && mask_n > 0 {
        let sigma = noise_amplitude * mask_peak;
        let mut rng = SeededRng::substream(noise_seed, 0x4e_4f_49_53);
        for i in 0..numel {
            if maps.pd[i] > 0.0 {
                data[i] += sigma * rng.normal();
            }
        }
    }
    Ok(Volume {
        dims: maps.dims,
        data,
        contrast: protocol.label,
        alignment: Alignment::Registered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_bitwise_identical() {
        let a = generate_phantom(77, [16, 24, 24], 5).unwrap();
        let b = generate_phantom(77, [16, 24, 24], 5).unwrap();
        assert_eq!(a.pd, b.pd);
        assert_eq!(a.t1, b.t1);
        assert_eq!(a.t2, b.t2);
    }

    #[test]
    fn distinct_seeds_differ_substantially() {
        let dims = [16, 24, 24];
        let a = generate_phantom(1, dims, 5).unwrap();
        for seed in 2..6u64 {
            let b = generate_phantom(seed, dims, 5).unwrap();
            let mask_a = a.mask();
            let in_mask = mask_a.iter().filter(|&&m| m).count();
            let differing = a
                .pd
                .iter()
                .zip(&b.pd)
                .zip(&mask_a)
                .filter(|((x, y), &m)| m && (*x - *y).abs() > 1e-12)
                .count();
            assert!(
                differing as f64 >= 0.10 * in_mask as f64,
                "seed {seed}: only {differing}/{in_mask} voxels differ"
            );
        }
    }

    #[test]
    fn background_pd_exactly_zero() {
        let maps = generate_phantom(5, [16, 20, 20], 3).unwrap();
        // corner voxel is well outside any head ellipsoid
        assert_eq!(maps.pd[0], 0.0);
        let in_mask = maps.mask().iter().filter(|&&m| m).count();
        assert!(in_mask > 0);
        for (i, &m) in maps.mask().iter().enumerate() {
            if m {
                assert!(maps.t1[i] > 0.0 && maps.t2[i] > 0.0);
            }
        }
    }

    #[test]
    fn every_slice_intersects_the_head() {
        for seed in 0..8u64 {
            let maps = generate_phantom(seed, [16, 64, 64], 5).unwrap();
            let plane = 64 * 64;
            for z in 0..16 {
                let n = maps.pd[z * plane..(z + 1) * plane].iter().filter(|&&v| v > 0.0).count();
                assert!(n > 20, "seed {seed} slice {z} nearly empty ({n} voxels)");
            }
        }
    }

    #[test]
    fn signal_equation_limits() {
        // TE = 0 and TR >> T1 recovers pure PD
        let maps = TissueMaps {
            dims: [16, 16, 16],
            pd: vec![0.7; 4096],
            t1: vec![800.0; 4096],
            t2: vec![90.0; 4096],
            subject_seed: 0,
        };
        let p = Protocol { tr_ms: 1e12, te_ms: 0.0, label: Contrast::T1w };
        let v = render_contrast(&maps, &p, 0.0, 0).unwrap();
        assert!(v.data.iter().all(|&s| (s - 0.7).abs() < 1e-12));
    }

    #[test]
    fn signal_equation_point_fixture() {
        // PD=1, T1=1000, T2=100 at TR=7730, TE=80
        let maps = TissueMaps {
            dims: [16, 16, 16],
            pd: vec![1.0; 4096],
            t1: vec![1000.0; 4096],
            t2: vec![100.0; 4096],
            subject_seed: 0,
        };
        let v = render_contrast(&maps, &PROTOCOL_T2W, 0.0, 0).unwrap();
        assert!((v.data[0] - 0.44914).abs() < 1e-4, "{}", v.data[0]);
    }

    #[test]
    fn signal_monotone_in_t2_when_te_positive() {
        let mk = |t2: f64| TissueMaps {
            dims: [16, 16, 16],
            pd: vec![1.0; 4096],
            t1: vec![1000.0; 4096],
            t2: vec![t2; 4096],
            subject_seed: 0,
        };
        let mut last = 0.0;
        for t2 in [40.0, 80.0, 160.0, 320.0] {
            let v = render_contrast(&mk(t2), &PROTOCOL_T2W, 0.0, 0).unwrap();
            assert!(v.data[0] > last);
            last = v.data[0];
        }
    }

    #[test]
    fn noise_is_seeded_and_mask_limited() {
        let maps = generate_phantom(9, [16, 24, 24], 4).unwrap();
        let a = render_contrast(&maps, &PROTOCOL_T1W, 0.05, 123).unwrap();
        let b = render_contrast(&maps, &PROTOCOL_T1W, 0.05, 123).unwrap();
        assert_eq!(a.data, b.data);
        let c = render_contrast(&maps, &PROTOCOL_T1W, 0.05, 124).unwrap();
        assert_ne!(a.data, c.data);
        for (i, &m) in maps.mask().iter().enumerate() {
            if !m {
                assert_eq!(a.data[i], 0.0);
            }
        }
    }

    #[test]
    fn undersized_dims_rejected() {
        assert!(generate_phantom(1, [8, 64, 64], 5).is_err());
        assert!(generate_phantom(1, [16, 64, 64], 1).is_err());
        assert!(generate_phantom(1, [16, 64, 64], 9).is_err());
    }
}
