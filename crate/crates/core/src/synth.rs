//! Synthetic paired scenes: a smooth canopy height field and a tomographic
//! cube whose per-pixel z-profiles are a ground return plus a canopy return.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BandId, CanopyHeightMap, PolSet, Polarization, TomoCube};
use crate::error::SynthError;
use crate::fileio::AlignedScene;
use crate::seed::{derive_seed, pixel_seed};

pub const SYNTH_NZ: usize = 36;
pub const SYNTH_Z_MIN_M: f64 = -6.0;
pub const SYNTH_Z_STEP_M: f64 = 2.0;

/// Bin centers -6, -4, ..., 64 m.
pub fn synth_z_centers() -> Vec<f64> {
    (0..SYNTH_NZ)
        .map(|i| SYNTH_Z_MIN_M + SYNTH_Z_STEP_M * i as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub height_range_m: (f64, f64),
    pub correlation_length_px: f64,
    pub ground_amp: f64,
    pub canopy_amp: f64,
    pub ground_sigma_m: f64,
    pub canopy_sigma_m: f64,
    pub noise_rel: f64,
    pub gap_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 0,
            nx: 64,
            ny: 64,
            height_range_m: (20.0, 35.0),
            correlation_length_px: 8.0,
            ground_amp: 1.0,
            canopy_amp: 1.0,
            ground_sigma_m: 2.0,
            canopy_sigma_m: 3.0,
            noise_rel: 0.1,
            gap_fraction: 0.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadParams(m));
        let (lo, hi) = self.height_range_m;
        if self.nx == 0 || self.ny == 0 {
            return bad(format!("grid {}x{} is empty", self.nx, self.ny));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return bad(format!("height range ({lo}, {hi}) must satisfy 0 <= lo < hi"));
        }
        if !(self.correlation_length_px > 0.0) {
            return bad("correlation length must be positive".into());
        }
        if !(self.ground_amp >= 0.0 && self.canopy_amp >= 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        if !(self.ground_sigma_m > 0.0 && self.canopy_sigma_m > 0.0) {
            return bad("profile widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise_rel) {
            return bad(format!("noise_rel {} outside [0, 1)", self.noise_rel));
        }
        if !(0.0..1.0).contains(&self.gap_fraction) {
            return bad(format!("gap_fraction {} outside [0, 1)", self.gap_fraction));
        }
        Ok(())
    }
}

/// Smooth random height field clamped to the configured range.
///
/// `nx·ny/64` Gaussian bumps of width `correlation_length_px` are summed on a
/// uniform base at the range midpoint, rescaled to a standard deviation of a
/// fifth of the range, and clamped. Exactly `round(gap_fraction·nx·ny)` pixels
/// become nodata.
pub fn gen_height_field(params: &SceneParams) -> Result<CanopyHeightMap, SynthError> {
    params.validate()?;
    let (nx, ny) = (params.nx, params.ny);
    let (lo, hi) = params.height_range_m;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "synth.height"));

    let sigma = params.correlation_length_px;
    let radius = (3.0 * sigma).ceil() as isize;
    let n_bumps = (nx * ny / 64).max(1);
    let mut field = vec![0.0f64; nx * ny];
    for _ in 0..n_bumps {
        let cx = rng.random::<f64>() * nx as f64;
        let cy = rng.random::<f64>() * ny as f64;
        let amp = rng.random_range(-1.0..1.0);
        let (ix, iy) = (cx.floor() as isize, cy.floor() as isize);
        for x in (ix - radius).max(0)..(ix + radius + 1).min(nx as isize) {
            for y in (iy - radius).max(0)..(iy + radius + 1).min(ny as isize) {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                field[x as usize * ny + y as usize] += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let target_std = (hi - lo) / 5.0;
    let gain = if std > 1e-12 { target_std / std } else { 0.0 };
    let base = 0.5 * (lo + hi);
    let mut heights_m: Vec<f32> = field
        .iter()
        .map(|v| (base + (v - mean) * gain).clamp(lo, hi) as f32)
        .collect();

    let n_gaps = (params.gap_fraction * nx as f64 * ny as f64).round() as usize;
    let mut nodata = vec![false; nx * ny];
    if n_gaps > 0 {
        let mut order: Vec<usize> = (0..nx * ny).collect();
        let mut gap_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "synth.gaps"));
        for i in 0..n_gaps {
            let j = gap_rng.random_range(i..order.len());
            order.swap(i, j);
            nodata[order[i]] = true;
            heights_m[order[i]] = f32::NAN;
        }
    }
    Ok(CanopyHeightMap {
        nx,
        ny,
        az_spacing_m: 1.0,
        rng_spacing_m: 1.0,
        heights_m,
        nodata,
    })
}

/// A single pixel's backscatter distribution over height bins.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalProfile {
    pub z_centers_m: Vec<f64>,
    pub values: Vec<f64>,
}

fn two_gaussian(z: f64, h: f64, ground_amp: f64, canopy_amp: f64, params: &SceneParams) -> f64 {
    let gs = params.ground_sigma_m;
    let cs = params.canopy_sigma_m;
    ground_amp * (-z * z / (2.0 * gs * gs)).exp() + canopy_amp * (-(z - h).powi(2) / (2.0 * cs * cs)).exp()
}

/// Noise-free ground + canopy profile for a canopy top at `h_m`.
pub fn profile_at(h_m: f64, params: &SceneParams, z_centers: &[f64]) -> VerticalProfile {
    debug_assert!(h_m >= 0.0);
    VerticalProfile {
        z_centers_m: z_centers.to_vec(),
        values: z_centers
            .iter()
            .map(|&z| two_gaussian(z, h_m, params.ground_amp, params.canopy_amp, params))
            .collect(),
    }
}

/// Per-polarization (ground, canopy) amplitude multipliers.
fn pol_gains(p: Polarization) -> (f64, f64) {
    match p {
        Polarization::HH => (1.5, 1.0),
        Polarization::HV | Polarization::VV => (1.0, 1.25),
    }
}

/// Normalized Gaussian taps for a blur of `sigma_bins`; radius at least one bin.
fn blur_kernel(sigma_bins: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma_bins).ceil() as usize).max(1);
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma_bins * sigma_bins)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Convolve along z; taps falling off the grid are dropped and the remainder
/// renormalized.
fn blur(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let j = i + k as isize - radius;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Tomographic cube for a height map: two-Gaussian profiles per pixel,
/// blurred by the band's vertical resolution and perturbed by
/// multiplicative uniform noise.
pub fn gen_cube(
    chm: &CanopyHeightMap,
    band: BandId,
    pols: &PolSet,
    params: &SceneParams,
) -> Result<TomoCube, SynthError> {
    params.validate()?;
    chm.validate().map_err(SynthError::BadParams)?;
    let (nx, ny, nz) = (chm.nx, chm.ny, SYNTH_NZ);
    let z = synth_z_centers();
    let sigma_bins = band.vertical_res_m() / 2.355 / SYNTH_Z_STEP_M;
    let kernel = blur_kernel(sigma_bins);
    let noise_seed = derive_seed(params.seed, "synth.noise");

    let mut intensity = vec![0.0f32; pols.len() * nx * ny * nz];
    for x in 0..nx {
        for y in 0..ny {
            let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(noise_seed, x, y));
            let height = chm.get(x, y);
            for (pi, &p) in pols.as_slice().iter().enumerate() {
                let (gg, cg) = pol_gains(p);
                let ground = params.ground_amp * gg;
                let (h, canopy) = match height {
                    Some(h) => (h as f64, params.canopy_amp * cg),
                    None => (0.0, 0.0),
                };
                let raw: Vec<f64> = z.iter().map(|&zc| two_gaussian(zc, h, ground, canopy, params)).collect();
                let blurred = blur(&raw, &kernel);
                let base = ((pi * nx + x) * ny + y) * nz;
                for (k, v) in blurred.into_iter().enumerate() {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    intensity[base + k] = (v * (1.0 + params.noise_rel * u)).max(0.0) as f32;
                }
            }
        }
    }
    Ok(TomoCube {
        band,
        pols: pols.clone(),
        nx,
        ny,
        nz,
        z_centers_m: z,
        az_spacing_m: chm.az_spacing_m,
        rng_spacing_m: chm.rng_spacing_m,
        intensity,
    })
}

/// Height field plus cube, already aligned.
pub fn gen_scene(params: &SceneParams, band: BandId, pols: &PolSet) -> Result<AlignedScene, SynthError> {
    let chm = gen_height_field(params)?;
    let cube = gen_cube(&chm, band, pols, params)?;
    Ok(AlignedScene { cube, chm })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub height_m: f64,
    /// No unique maximum inside the vegetation window (e.g. a flat profile).
    pub degenerate: bool,
}

pub const DEFAULT_VEGETATION_FLOOR_M: f64 = 5.0;

/// Non-learned reference predictor: the bin center of the strongest return
/// at or above `z_min_veg_m`, ties going to the lowest bin.
pub fn oracle_height(profile: &VerticalProfile, z_min_veg_m: f64) -> Result<OracleEstimate, SynthError> {
    let mut best: Option<(usize, f64)> = None;
    let mut min_v = f64::INFINITY;
    for (i, (&z, &v)) in profile.z_centers_m.iter().zip(&profile.values).enumerate() {
        if z < z_min_veg_m {
            continue;
        }
        min_v = min_v.min(v);
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    let (i, max_v) = best.ok_or(SynthError::EmptyVegetationWindow(z_min_veg_m))?;
    Ok(OracleEstimate {
        height_m: profile.z_centers_m[i],
        degenerate: max_v <= min_v,
    })
}

/// Oracle heights for every pixel, using the channel-summed profile.
pub fn oracle_height_map(cube: &TomoCube, z_min_veg_m: f64) -> Result<Vec<f64>, SynthError> {
    let mut out = Vec::with_capacity(cube.nx * cube.ny);
    let mut values = vec![0.0f64; cube.nz];
    for x in 0..cube.nx {
        for y in 0..cube.ny {
            values.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..cube.pols.len() {
                for (acc, &v) in values.iter_mut().zip(cube.profile(p, x, y)) {
                    *acc += v as f64;
                }
            }
            let prof = VerticalProfile {
                z_centers_m: cube.z_centers_m.clone(),
                values: values.clone(),
            };
            out.push(oracle_height(&prof, z_min_veg_m)?.height_m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_cube;

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..v.len() {
            if v[i] > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn height_field_in_range_and_deterministic() {
        let p = SceneParams {
            seed: 7,
            ..Default::default()
        };
        let a = gen_height_field(&p).unwrap();
        assert_eq!((a.nx, a.ny), (64, 64));
        assert!(a.heights_m.iter().all(|&h| (20.0..=35.0).contains(&h)));
        assert_eq!(a.nodata_count(), 0);
        let b = gen_height_field(&p).unwrap();
        assert_eq!(a, b);
        let c = gen_height_field(&SceneParams { seed: 8, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn height_field_is_smooth_and_spread() {
        let p = SceneParams::default();
        let h = gen_height_field(&p).unwrap();
        let mut diffs = Vec::new();
        for x in 0..h.nx {
            for y in 0..h.ny {
                if x + 1 < h.nx {
                    diffs.push((h.heights_m[h.index(x, y)] - h.heights_m[h.index(x + 1, y)]).abs());
                }
                if y + 1 < h.ny {
                    diffs.push((h.heights_m[h.index(x, y)] - h.heights_m[h.index(x, y + 1)]).abs());
                }
            }
        }
        let mean_diff = diffs.iter().sum::<f32>() / diffs.len() as f32;
        assert!(mean_diff < 7.5, "mean neighbor diff {mean_diff}");
        let mn = h.heights_m.iter().cloned().fold(f32::INFINITY, f32::min);
        let mx = h.heights_m.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(mx - mn > 5.0);
    }

    #[test]
    fn gap_fraction_exact() {
        let p = SceneParams {
            nx: 20,
            ny: 10,
            gap_fraction: 0.13,
            ..Default::default()
        };
        let h = gen_height_field(&p).unwrap();
        assert_eq!(h.nodata_count(), 26);
        assert!(h.validate().is_ok());
    }

    #[test]
    fn bad_params_rejected() {
        let bad = [
            SceneParams {
                height_range_m: (30.0, 20.0),
                ..Default::default()
            },
            SceneParams {
                noise_rel: 1.0,
                ..Default::default()
            },
            SceneParams {
                ground_amp: -1.0,
                ..Default::default()
            },
            SceneParams {
                gap_fraction: 1.0,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(matches!(gen_height_field(&p), Err(SynthError::BadParams(_))));
        }
    }

    #[test]
    fn canopy_only_profile_peaks_at_height() {
        let z = synth_z_centers();
        let p = SceneParams {
            ground_amp: 0.0,
            ..Default::default()
        };
        let prof = profile_at(30.0, &p, &z);
        assert_eq!(z[argmax(&prof.values)], 30.0);
        let prof = profile_at(28.7, &p, &z);
        assert_eq!(z[argmax(&prof.values)], 28.0);
    }

    #[test]
    fn ground_only_profile_peaks_at_zero() {
        let z = synth_z_centers();
        let p = SceneParams {
            canopy_amp: 0.0,
            ..Default::default()
        };
        let prof = profile_at(30.0, &p, &z);
        assert_eq!(z[argmax(&prof.values)], 0.0);
    }

    #[test]
    fn equal_returns_are_symmetric_about_midpoint() {
        let z = synth_z_centers();
        let p = SceneParams {
            ground_sigma_m: 2.5,
            canopy_sigma_m: 2.5,
            ..Default::default()
        };
        let prof = profile_at(30.0, &p, &z);
        // z = 15 - d and z = 15 + d are both bin centers when d is odd.
        for d in [1.0, 3.0, 5.0, 11.0, 15.0] {
            let lo = z.iter().position(|&v| v == 15.0 - d).unwrap();
            let hi = z.iter().position(|&v| v == 15.0 + d).unwrap();
            assert!((prof.values[lo] - prof.values[hi]).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_is_valid_and_deterministic() {
        let p = SceneParams {
            nx: 12,
            ny: 9,
            gap_fraction: 0.1,
            ..Default::default()
        };
        let s = gen_scene(&p, BandId::P, &PolSet::union()).unwrap();
        assert_eq!(validate_cube(&s.cube), Ok(()));
        assert_eq!(s.cube.nz, 36);
        assert_eq!(s.cube.z_centers_m[0], -6.0);
        assert_eq!(s.cube.z_centers_m[35], 64.0);
        let s2 = gen_scene(&p, BandId::P, &PolSet::union()).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn noise_free_canopy_only_cube_recovers_heights() {
        for band in BandId::ALL {
            let p = SceneParams {
                nx: 16,
                ny: 16,
                seed: 3,
                noise_rel: 0.0,
                ground_amp: 0.0,
                ..Default::default()
            };
            let s = gen_scene(&p, band, &PolSet::single(Polarization::HV)).unwrap();
            let est = oracle_height_map(&s.cube, DEFAULT_VEGETATION_FLOOR_M).unwrap();
            for (i, e) in est.iter().enumerate() {
                let truth = s.chm.heights_m[i] as f64;
                assert!((e - truth).abs() <= 1.0 + 1e-9, "{band}: {e} vs {truth}");
            }
        }
    }

    #[test]
    fn nodata_pixels_get_ground_only_profiles() {
        let p = SceneParams {
            nx: 8,
            ny: 8,
            noise_rel: 0.0,
            gap_fraction: 0.2,
            ..Default::default()
        };
        let s = gen_scene(&p, BandId::LMono, &PolSet::single(Polarization::VV)).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                if s.chm.get(x, y).is_none() {
                    let prof = s.cube.profile(0, x, y);
                    let top = prof.iter().cloned().fold(f32::MIN, f32::max);
                    assert_eq!(prof[3], top); // z = 0
                }
            }
        }
    }

    #[test]
    fn oracle_examples() {
        let z = synth_z_centers();
        let single = VerticalProfile {
            z_centers_m: z.clone(),
            values: z.iter().map(|&v| (-(v - 28.0f64).powi(2) / 8.0).exp()).collect(),
        };
        let e = oracle_height(&single, 5.0).unwrap();
        assert!((e.height_m - 28.0).abs() <= 1.0 && !e.degenerate);

        let ground_heavy = VerticalProfile {
            z_centers_m: z.clone(),
            values: z
                .iter()
                .map(|&v| 10.0 * (-v * v / 8.0).exp() + 0.2 * (-(v - 25.0f64).powi(2) / 8.0).exp())
                .collect(),
        };
        let e = oracle_height(&ground_heavy, 5.0).unwrap();
        assert!((e.height_m - 25.0).abs() <= 1.0);

        let flat = VerticalProfile {
            z_centers_m: z.clone(),
            values: vec![0.0; z.len()],
        };
        let e = oracle_height(&flat, 5.0).unwrap();
        assert_eq!(e.height_m, 6.0);
        assert!(e.degenerate);

        assert!(matches!(
            oracle_height(&flat, 100.0),
            Err(SynthError::EmptyVegetationWindow(_))
        ));
    }
}
