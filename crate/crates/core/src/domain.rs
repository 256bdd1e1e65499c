//! Domain types: bands, polarizations, tomographic cubes, height maps and
//! split assignments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CubeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    P,
    LMono,
    LBi,
}

impl BandId {
    pub const ALL: [BandId; 3] = [BandId::P, BandId::LMono, BandId::LBi];

    pub fn meta(self) -> BandMeta {
        match self {
            BandId::P => BandMeta {
                band: self,
                wavelength_m: 0.69,
                slant_range_res_m: 5.0,
                azimuth_res_m: 1.0,
                vertical_res_m: 3.0,
                num_passes: 28,
            },
            BandId::LMono => BandMeta {
                band: self,
                wavelength_m: 0.22,
                slant_range_res_m: 3.0,
                azimuth_res_m: 0.55,
                vertical_res_m: 1.3,
                num_passes: 30,
            },
            BandId::LBi => BandMeta {
                band: self,
                wavelength_m: 0.22,
                slant_range_res_m: 3.0,
                azimuth_res_m: 0.55,
                vertical_res_m: 2.3,
                num_passes: 30,
            },
        }
    }

    pub fn vertical_res_m(self) -> f64 {
        self.meta().vertical_res_m
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BandId::P => "P",
            BandId::LMono => "LMono",
            BandId::LBi => "LBi",
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "p" => Ok(BandId::P),
            "lmono" | "lmonostatic" => Ok(BandId::LMono),
            "lbi" | "lbistatic" => Ok(BandId::LBi),
            _ => Err(format!("unknown band {s:?}")),
        }
    }
}

/// Acquisition and resolution figures for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMeta {
    pub band: BandId,
    pub wavelength_m: f64,
    pub slant_range_res_m: f64,
    pub azimuth_res_m: f64,
    pub vertical_res_m: f64,
    pub num_passes: u32,
}

/// All three bands with their metadata, in `BandId` order.
pub fn band_registry() -> [(BandId, BandMeta); 3] {
    BandId::ALL.map(|b| (b, b.meta()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    HH,
    HV,
    VV,
}

impl Polarization {
    pub const ALL: [Polarization; 3] = [Polarization::HH, Polarization::HV, Polarization::VV];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::HH => "HH",
            Polarization::HV => "HV",
            Polarization::VV => "VV",
        }
    }
}

impl FromStr for Polarization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HH" => Ok(Polarization::HH),
            "HV" => Ok(Polarization::HV),
            "VV" => Ok(Polarization::VV),
            _ => Err(format!("unknown polarization {s:?}")),
        }
    }
}

/// Ordered, non-empty, duplicate-free set of polarization channels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Polarization>", into = "Vec<Polarization>")]
pub struct PolSet(Vec<Polarization>);

impl PolSet {
    pub fn new(pols: Vec<Polarization>) -> Result<Self, String> {
        if pols.is_empty() {
            return Err("polarization set must be non-empty".into());
        }
        for (i, p) in pols.iter().enumerate() {
            if pols[..i].contains(p) {
                return Err(format!("duplicate polarization {}", p.as_str()));
            }
        }
        Ok(PolSet(pols))
    }

    /// HH+HV+VV.
    pub fn union() -> Self {
        PolSet(Polarization::ALL.to_vec())
    }

    pub fn single(p: Polarization) -> Self {
        PolSet(vec![p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[Polarization] {
        &self.0
    }

    pub fn index_of(&self, p: Polarization) -> Option<usize> {
        self.0.iter().position(|&q| q == p)
    }

    pub fn is_union(&self) -> bool {
        Polarization::ALL.iter().all(|p| self.0.contains(p))
    }

    /// `HH`, `HV+VV`, `HH+HV+VV`, ...
    pub fn label(&self) -> String {
        self.0.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("+")
    }
}

impl TryFrom<Vec<Polarization>> for PolSet {
    type Error = String;

    fn try_from(v: Vec<Polarization>) -> Result<Self, Self::Error> {
        PolSet::new(v)
    }
}

impl From<PolSet> for Vec<Polarization> {
    fn from(p: PolSet) -> Self {
        p.0
    }
}

impl FromStr for PolSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("union") {
            return Ok(PolSet::union());
        }
        let pols = s
            .split(['+', ','])
            .map(Polarization::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        PolSet::new(pols)
    }
}

impl fmt::Display for PolSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Multi-polarization intensity volume on an (azimuth, range, height-bin) grid.
///
/// `intensity` is linear power laid out `[pol][x][y][z]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TomoCube {
    pub band: BandId,
    pub pols: PolSet,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub z_centers_m: Vec<f64>,
    pub az_spacing_m: f64,
    pub rng_spacing_m: f64,
    pub intensity: Vec<f32>,
}

impl TomoCube {
    pub fn voxels_per_pol(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, pol: usize, x: usize, y: usize, z: usize) -> usize {
        ((pol * self.nx + x) * self.ny + y) * self.nz + z
    }

    /// The z-profile of one channel at pixel (x, y).
    pub fn profile(&self, pol: usize, x: usize, y: usize) -> &[f32] {
        let start = self.index(pol, x, y, 0);
        &self.intensity[start..start + self.nz]
    }

    pub fn channel(&self, pol: usize) -> &[f32] {
        let n = self.voxels_per_pol();
        &self.intensity[pol * n..(pol + 1) * n]
    }

    pub fn z_spacing_m(&self) -> f64 {
        if self.nz < 2 {
            return 0.0;
        }
        (self.z_centers_m[self.nz - 1] - self.z_centers_m[0]) / (self.nz - 1) as f64
    }
}

/// Check every cube invariant; the first violation found is returned.
///
/// Order: shape, z axis, then voxels in storage order.
pub fn validate_cube(cube: &TomoCube) -> Result<(), CubeError> {
    if cube.nx == 0 || cube.ny == 0 || cube.nz == 0 {
        return Err(CubeError::DimensionMismatch(format!(
            "grid dims must be positive, got ({}, {}, {})",
            cube.nx, cube.ny, cube.nz
        )));
    }
    if cube.z_centers_m.len() != cube.nz {
        return Err(CubeError::DimensionMismatch(format!(
            "{} z centers for nz = {}",
            cube.z_centers_m.len(),
            cube.nz
        )));
    }
    let expected = cube.pols.len() * cube.voxels_per_pol();
    if cube.intensity.len() != expected {
        return Err(CubeError::DimensionMismatch(format!(
            "{} intensity values for {} volumes of {} voxels",
            cube.intensity.len(),
            cube.pols.len(),
            cube.voxels_per_pol()
        )));
    }
    check_z_axis(&cube.z_centers_m)?;
    let (nx, ny, nz) = (cube.nx, cube.ny, cube.nz);
    for (i, &v) in cube.intensity.iter().enumerate() {
        if v.is_finite() && v >= 0.0 {
            continue;
        }
        let z = i % nz;
        let y = (i / nz) % ny;
        let x = (i / (nz * ny)) % nx;
        let pol = i / (nz * ny * nx);
        return Err(if !v.is_finite() {
            CubeError::NonFiniteIntensity { pol, x, y, z }
        } else {
            CubeError::NegativeIntensity { pol, x, y, z }
        });
    }
    Ok(())
}

fn check_z_axis(z: &[f64]) -> Result<(), CubeError> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(CubeError::NonMonotoneZAxis(0));
    }
    if z.len() < 2 {
        return Ok(());
    }
    let step = (z[z.len() - 1] - z[0]) / (z.len() - 1) as f64;
    if step <= 0.0 {
        return Err(CubeError::NonMonotoneZAxis(1));
    }
    for i in 1..z.len() {
        let d = z[i] - z[i - 1];
        if d <= 0.0 || ((d - step) / step).abs() > 1e-6 {
            return Err(CubeError::NonMonotoneZAxis(i));
        }
    }
    Ok(())
}

/// LiDAR-derived canopy heights on the cube's (x, y) lattice.
#[derive(Debug, Clone)]
pub struct CanopyHeightMap {
    pub nx: usize,
    pub ny: usize,
    pub az_spacing_m: f64,
    pub rng_spacing_m: f64,
    /// Row-major `[x][y]`; values under the nodata mask are NaN.
    pub heights_m: Vec<f32>,
    pub nodata: Vec<bool>,
}

/// Equality ignores the stored values under the nodata mask.
impl PartialEq for CanopyHeightMap {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.az_spacing_m == other.az_spacing_m
            && self.rng_spacing_m == other.rng_spacing_m
            && self.nodata == other.nodata
            && self
                .heights_m
                .iter()
                .zip(&other.heights_m)
                .zip(&self.nodata)
                .all(|((a, b), &m)| m || a.to_bits() == b.to_bits())
    }
}

impl CanopyHeightMap {
    pub fn from_heights(nx: usize, ny: usize, heights_m: Vec<f32>) -> Self {
        let nodata = heights_m.iter().map(|h| h.is_nan()).collect();
        CanopyHeightMap {
            nx,
            ny,
            az_spacing_m: 1.0,
            rng_spacing_m: 1.0,
            heights_m,
            nodata,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x * self.ny + y
    }

    /// Height at (x, y), or `None` under the nodata mask.
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = self.index(x, y);
        (!self.nodata[i]).then(|| self.heights_m[i])
    }

    pub fn nodata_count(&self) -> usize {
        self.nodata.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.nx * self.ny;
        if self.heights_m.len() != n || self.nodata.len() != n {
            return Err(format!(
                "grid {}x{} with {} heights and {} mask cells",
                self.nx,
                self.ny,
                self.heights_m.len(),
                self.nodata.len()
            ));
        }
        for (i, (&h, &m)) in self.heights_m.iter().zip(&self.nodata).enumerate() {
            if !m && !(h.is_finite() && h >= 0.0) {
                return Err(format!(
                    "height {h} at ({}, {}) must be finite and non-negative",
                    i / self.ny,
                    i % self.ny
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitLabel {
    Train,
    Val,
    Test,
    Excluded,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 4] = [
        SplitLabel::Train,
        SplitLabel::Val,
        SplitLabel::Test,
        SplitLabel::Excluded,
    ];

    pub fn code(self) -> u8 {
        match self {
            SplitLabel::Train => 0,
            SplitLabel::Val => 1,
            SplitLabel::Test => 2,
            SplitLabel::Excluded => 255,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SplitLabel::Train),
            1 => Some(SplitLabel::Val),
            2 => Some(SplitLabel::Test),
            255 => Some(SplitLabel::Excluded),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
            SplitLabel::Excluded => "excluded",
        }
    }
}

impl FromStr for SplitLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown split label {s:?}"))
    }
}

/// Per-pixel split labels over an (nx, ny) grid, row-major `[x][y]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub nx: usize,
    pub ny: usize,
    pub labels: Vec<SplitLabel>,
}

impl SplitAssignment {
    pub fn uniform(nx: usize, ny: usize, label: SplitLabel) -> Self {
        SplitAssignment {
            nx,
            ny,
            labels: vec![label; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> SplitLabel {
        self.labels[x * self.ny + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: SplitLabel) {
        self.labels[x * self.ny + y] = label;
    }

    pub fn count(&self, label: SplitLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Usable iff there is at least one Train and one Test pixel.
    pub fn is_usable(&self) -> bool {
        self.count(SplitLabel::Train) > 0 && self.count(SplitLabel::Test) > 0
    }
}

/// Regression quality on one split of one band/polarization configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub band: BandId,
    pub pols: PolSet,
    pub split: SplitLabel,
    pub n_samples: usize,
    pub mae_m: f64,
    pub rmse_m: f64,
    pub r2: f64,
    pub normalized_mae: f64,
}
