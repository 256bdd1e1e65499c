//! Binary formats for cubes, height maps and split maps, plus (x, y)
//! alignment of a cube with its ground truth.
//!
//! All three formats share one layout: an ASCII magic line, a little-endian
//! `u32` header length `N`, `N` bytes of UTF-8 JSON, then the payload.
//!
//! | format | magic      | payload                                            |
//! |--------|------------|----------------------------------------------------|
//! | cube   | `TCUB1\n`  | `f32` LE, `[pol][x][y][z]` row-major               |
//! | CHM    | `CHM1\n`   | `f32` LE, `[x][y]` row-major, NaN = nodata         |
//! | split  | `SMAP1\n`  | `u8` per pixel: 0 train, 1 val, 2 test, 255 excl.  |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_cube, BandId, CanopyHeightMap, PolSet, SplitAssignment, SplitLabel, TomoCube,
};
use crate::error::FormatError;

pub const CUBE_MAGIC: &[u8] = b"TCUB1\n";
pub const CHM_MAGIC: &[u8] = b"CHM1\n";
pub const SPLIT_MAGIC: &[u8] = b"SMAP1\n";

pub const SCENE_CUBE_FILE: &str = "cube.tcub";
pub const SCENE_CHM_FILE: &str = "chm.chm";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubeHeader {
    band: BandId,
    pols: PolSet,
    nx: usize,
    ny: usize,
    nz: usize,
    z_centers_m: Vec<f64>,
    az_spacing_m: f64,
    rng_spacing_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    nx: usize,
    ny: usize,
    az_spacing_m: f64,
    rng_spacing_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitHeader {
    nx: usize,
    ny: usize,
}

/// Encode `magic | u32 len | json header | payload` into one buffer.
pub(crate) fn encode_framed<H: Serialize>(magic: &[u8], header: &H, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serialization is infallible");
    let mut out = Vec::with_capacity(magic.len() + 4 + json.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

/// Split a framed buffer into its parsed header and payload bytes.
pub(crate) fn decode_framed<'a, H: DeserializeOwned>(
    bytes: &'a [u8],
    magic: &'static [u8],
) -> Result<(H, &'a [u8]), FormatError> {
    let expected = std::str::from_utf8(magic).expect("magic is ASCII");
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(FormatError::BadMagic { expected });
    }
    let rest = &bytes[magic.len()..];
    if rest.len() < 4 {
        return Err(FormatError::HeaderParse("missing header length".into()));
    }
    let n = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    let rest = &rest[4..];
    if rest.len() < n {
        return Err(FormatError::HeaderParse(format!(
            "header length {n} exceeds file size"
        )));
    }
    let header = serde_json::from_slice(&rest[..n]).map_err(|e| FormatError::HeaderParse(e.to_string()))?;
    Ok((header, &rest[n..]))
}

pub(crate) fn f32_payload(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn read_f32_payload(payload: &[u8], count: usize) -> Result<Vec<f32>, FormatError> {
    let expected = count * 4;
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::InvariantViolation(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn encode_cube(cube: &TomoCube) -> Result<Vec<u8>, FormatError> {
    validate_cube(cube)?;
    let header = CubeHeader {
        band: cube.band,
        pols: cube.pols.clone(),
        nx: cube.nx,
        ny: cube.ny,
        nz: cube.nz,
        z_centers_m: cube.z_centers_m.clone(),
        az_spacing_m: cube.az_spacing_m,
        rng_spacing_m: cube.rng_spacing_m,
    };
    Ok(encode_framed(CUBE_MAGIC, &header, &f32_payload(&cube.intensity)))
}

pub fn decode_cube(bytes: &[u8]) -> Result<TomoCube, FormatError> {
    let (h, payload): (CubeHeader, _) = decode_framed(bytes, CUBE_MAGIC)?;
    let count = h.pols.len() * h.nx * h.ny * h.nz;
    let intensity = read_f32_payload(payload, count)?;
    let cube = TomoCube {
        band: h.band,
        pols: h.pols,
        nx: h.nx,
        ny: h.ny,
        nz: h.nz,
        z_centers_m: h.z_centers_m,
        az_spacing_m: h.az_spacing_m,
        rng_spacing_m: h.rng_spacing_m,
        intensity,
    };
    validate_cube(&cube)?;
    Ok(cube)
}

pub fn write_cube(cube: &TomoCube, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_cube(cube)?)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<TomoCube, FormatError> {
    decode_cube(&fs::read(path)?)
}

fn grid_to_payload(chm: &CanopyHeightMap) -> Vec<f32> {
    chm.heights_m
        .iter()
        .zip(&chm.nodata)
        .map(|(&h, &m)| if m { f32::NAN } else { h })
        .collect()
}

fn encode_grid(chm: &CanopyHeightMap) -> Vec<u8> {
    let header = GridHeader {
        nx: chm.nx,
        ny: chm.ny,
        az_spacing_m: chm.az_spacing_m,
        rng_spacing_m: chm.rng_spacing_m,
    };
    encode_framed(CHM_MAGIC, &header, &f32_payload(&grid_to_payload(chm)))
}

fn decode_grid(bytes: &[u8]) -> Result<CanopyHeightMap, FormatError> {
    let (h, payload): (GridHeader, _) = decode_framed(bytes, CHM_MAGIC)?;
    let heights_m = read_f32_payload(payload, h.nx * h.ny)?;
    let nodata = heights_m.iter().map(|v| v.is_nan()).collect();
    Ok(CanopyHeightMap {
        nx: h.nx,
        ny: h.ny,
        az_spacing_m: h.az_spacing_m,
        rng_spacing_m: h.rng_spacing_m,
        heights_m,
        nodata,
    })
}

pub fn encode_chm(chm: &CanopyHeightMap) -> Result<Vec<u8>, FormatError> {
    chm.validate().map_err(FormatError::InvariantViolation)?;
    Ok(encode_grid(chm))
}

pub fn decode_chm(bytes: &[u8]) -> Result<CanopyHeightMap, FormatError> {
    let chm = decode_grid(bytes)?;
    chm.validate().map_err(FormatError::InvariantViolation)?;
    Ok(chm)
}

pub fn write_chm(chm: &CanopyHeightMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_chm(chm)?)
}

pub fn read_chm(path: impl AsRef<Path>) -> Result<CanopyHeightMap, FormatError> {
    decode_chm(&fs::read(path)?)
}

/// Write a real-valued grid in the CHM container without the non-negativity
/// check; used for signed error maps.
pub fn write_signed_grid(grid: &CanopyHeightMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    if grid.heights_m.len() != grid.nx * grid.ny || grid.nodata.len() != grid.nx * grid.ny {
        return Err(FormatError::InvariantViolation("grid size does not match dims".into()));
    }
    write_bytes(path.as_ref(), &encode_grid(grid))
}

pub fn read_signed_grid(path: impl AsRef<Path>) -> Result<CanopyHeightMap, FormatError> {
    decode_grid(&fs::read(path)?)
}

pub fn encode_split(split: &SplitAssignment) -> Result<Vec<u8>, FormatError> {
    if split.labels.len() != split.nx * split.ny {
        return Err(FormatError::InvariantViolation(format!(
            "{} labels for a {}x{} grid",
            split.labels.len(),
            split.nx,
            split.ny
        )));
    }
    let header = SplitHeader {
        nx: split.nx,
        ny: split.ny,
    };
    let payload: Vec<u8> = split.labels.iter().map(|l| l.code()).collect();
    Ok(encode_framed(SPLIT_MAGIC, &header, &payload))
}

pub fn decode_split(bytes: &[u8]) -> Result<SplitAssignment, FormatError> {
    let (h, payload): (SplitHeader, _) = decode_framed(bytes, SPLIT_MAGIC)?;
    let expected = h.nx * h.ny;
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::InvariantViolation("trailing bytes after split payload".into()));
    }
    let labels = payload
        .iter()
        .map(|&c| {
            SplitLabel::from_code(c)
                .ok_or_else(|| FormatError::InvariantViolation(format!("unknown split code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SplitAssignment {
        nx: h.nx,
        ny: h.ny,
        labels,
    })
}

pub fn write_split(split: &SplitAssignment, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_split(split)?)
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitAssignment, FormatError> {
    decode_split(&fs::read(path)?)
}

/// A cube and its ground truth on one (x, y) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedScene {
    pub cube: TomoCube,
    pub chm: CanopyHeightMap,
}

impl AlignedScene {
    pub fn nx(&self) -> usize {
        self.cube.nx
    }

    pub fn ny(&self) -> usize {
        self.cube.ny
    }
}

fn spacing_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Merge a cube and a height map on (x, y).
///
/// Both grids share the lattice origin; the result covers their intersection
/// and no resampling happens.
pub fn align(cube: &TomoCube, chm: &CanopyHeightMap) -> Result<AlignedScene, FormatError> {
    if !spacing_matches(cube.az_spacing_m, chm.az_spacing_m)
        || !spacing_matches(cube.rng_spacing_m, chm.rng_spacing_m)
    {
        return Err(FormatError::IncompatibleSpacing(format!(
            "cube ({}, {}) m vs chm ({}, {}) m",
            cube.az_spacing_m, cube.rng_spacing_m, chm.az_spacing_m, chm.rng_spacing_m
        )));
    }
    validate_cube(cube)?;
    chm.validate().map_err(FormatError::InvariantViolation)?;
    let nx = cube.nx.min(chm.nx);
    let ny = cube.ny.min(chm.ny);
    if nx == 0 || ny == 0 {
        return Err(FormatError::InvariantViolation("grids do not overlap".into()));
    }

    let out_cube = if (nx, ny) == (cube.nx, cube.ny) {
        cube.clone()
    } else {
        let nz = cube.nz;
        let mut intensity = Vec::with_capacity(cube.pols.len() * nx * ny * nz);
        for p in 0..cube.pols.len() {
            for x in 0..nx {
                let start = cube.index(p, x, 0, 0);
                intensity.extend_from_slice(&cube.intensity[start..start + ny * nz]);
            }
        }
        TomoCube {
            nx,
            ny,
            intensity,
            ..cube.clone()
        }
    };

    let mut heights_m = Vec::with_capacity(nx * ny);
    let mut nodata = Vec::with_capacity(nx * ny);
    for x in 0..nx {
        for y in 0..ny {
            let i = chm.index(x, y);
            heights_m.push(if chm.nodata[i] { f32::NAN } else { chm.heights_m[i] });
            nodata.push(chm.nodata[i]);
        }
    }
    Ok(AlignedScene {
        cube: out_cube,
        chm: CanopyHeightMap {
            nx,
            ny,
            az_spacing_m: chm.az_spacing_m,
            rng_spacing_m: chm.rng_spacing_m,
            heights_m,
            nodata,
        },
    })
}

/// Write `cube.tcub` and `chm.chm` into `dir`, creating it if needed.
pub fn write_scene(scene: &AlignedScene, dir: impl AsRef<Path>) -> Result<(), FormatError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_cube(&scene.cube, dir.join(SCENE_CUBE_FILE))?;
    write_chm(&scene.chm, dir.join(SCENE_CHM_FILE))
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<AlignedScene, FormatError> {
    let dir = dir.as_ref();
    let cube = read_cube(dir.join(SCENE_CUBE_FILE))?;
    let chm = read_chm(dir.join(SCENE_CHM_FILE))?;
    align(&cube, &chm)
}
