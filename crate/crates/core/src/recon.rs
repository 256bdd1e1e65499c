//! Whole-scene reconstruction from patch predictions, error maps, band tables,
//! and 8-bit heatmaps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::domain::{BandId, CanopyHeightMap, MetricsReport, PolSet, SplitAssignment, SplitLabel};
use crate::error::{FormatError, ReconError};
use crate::fileio::{write_bytes, AlignedScene};
use crate::metrics::{evaluate, normalized_mae, MinMaxScaler};
use crate::trainer::make_patches;
use crate::volnet::VolNet;

pub const HEATMAP_MAX_M: f32 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconMap {
    pub nx: usize,
    pub ny: usize,
    pub w: usize,
    pub stride: usize,
    /// Row-major `[x][y]`; NaN where uncovered.
    pub heights_m: Vec<f32>,
    pub coverage: Vec<u32>,
    pub uncovered: Vec<bool>,
}

impl ReconMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = x * self.ny + y;
        (!self.uncovered[i]).then_some(self.heights_m[i])
    }

    pub fn uncovered_count(&self) -> usize {
        self.uncovered.iter().filter(|&&u| u).count()
    }

    /// As a grid whose nodata mask is the uncovered mask.
    pub fn to_grid(&self, az_spacing_m: f64, rng_spacing_m: f64) -> CanopyHeightMap {
        CanopyHeightMap {
            nx: self.nx,
            ny: self.ny,
            az_spacing_m,
            rng_spacing_m,
            heights_m: self.heights_m.clone(),
            nodata: self.uncovered.clone(),
        }
    }

    /// `"overlap"` when windows overlap, `"disjoint"` otherwise.
    pub fn stitching(&self) -> &'static str {
        if self.stride < self.w {
            "overlap"
        } else {
            "disjoint"
        }
    }
}

/// Accumulates per-patch `W×W` predictions into a map by overlap averaging.
pub fn stitch(nx: usize, ny: usize, w: usize, stride: usize, patches: &[((usize, usize), Vec<f32>)]) -> ReconMap {
    let mut sum = vec![0.0f64; nx * ny];
    let mut coverage = vec![0u32; nx * ny];
    for ((x0, y0), pred) in patches {
        for dx in 0..w {
            for dy in 0..w {
                let i = (x0 + dx) * ny + y0 + dy;
                sum[i] += pred[dx * w + dy] as f64;
                coverage[i] += 1;
            }
        }
    }
    let uncovered: Vec<bool> = coverage.iter().map(|&c| c == 0).collect();
    let heights_m = sum
        .iter()
        .zip(&coverage)
        .map(|(&s, &c)| if c == 0 { f32::NAN } else { (s / c as f64) as f32 })
        .collect();
    ReconMap {
        nx,
        ny,
        w,
        stride,
        heights_m,
        coverage,
        uncovered,
    }
}

/// Tiles the whole scene at `stride`, ignoring split labels, and averages overlaps.
/// Pixels in the right/bottom margin outside every full window stay uncovered.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    net: &mut VolNet<f32>,
    scene: &AlignedScene,
    w: usize,
    stride: usize,
    pols: &PolSet,
    scaler: &MinMaxScaler<f32>,
    db: bool,
    batch_size: usize,
) -> Result<ReconMap, ReconError> {
    if net.spec.in_channels != pols.len() {
        return Err(ReconError::ShapeMismatch(format!(
            "model takes {} channels, {} polarizations given",
            net.spec.in_channels,
            pols.len()
        )));
    }
    let everywhere = SplitAssignment::uniform(scene.nx(), scene.ny(), SplitLabel::Train);
    let ds = make_patches(scene, &everywhere, SplitLabel::Train, w, stride, pols, scaler, db)
        .map_err(|e| ReconError::ShapeMismatch(e.to_string()))?;
    let per = w * w;
    let mut outputs = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _, _) = ds.batch::<f32>(chunk);
        let y = net.predict(&x)?;
        for (k, &i) in chunk.iter().enumerate() {
            outputs.push((ds.patches[i].origin, y.data[k * per..(k + 1) * per].to_vec()));
        }
    }
    Ok(stitch(scene.nx(), scene.ny(), w, stride, &outputs))
}

/// Signed `pred − truth` over covered, non-nodata pixels (optionally only those
/// carrying one split label), plus metrics over the same pixels.
/// Without a split filter the report is tagged `Test`.
pub fn error_map(
    recon: &ReconMap,
    chm: &CanopyHeightMap,
    band: BandId,
    pols: &PolSet,
    split: Option<(&SplitAssignment, SplitLabel)>,
) -> Result<(CanopyHeightMap, MetricsReport), ReconError> {
    if (recon.nx, recon.ny) != (chm.nx, chm.ny) {
        return Err(ReconError::DimensionMismatch(format!(
            "map is {}×{}, CHM is {}×{}",
            recon.nx, recon.ny, chm.nx, chm.ny
        )));
    }
    if let Some((a, _)) = split {
        if (a.nx, a.ny) != (chm.nx, chm.ny) {
            return Err(ReconError::DimensionMismatch("split and CHM dimensions differ".into()));
        }
    }
    let n = chm.nx * chm.ny;
    let mut err = vec![f32::NAN; n];
    let mut nodata = vec![true; n];
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for x in 0..chm.nx {
        for y in 0..chm.ny {
            if let Some((a, label)) = split {
                if a.get(x, y) != label {
                    continue;
                }
            }
            let (Some(p), Some(t)) = (recon.get(x, y), chm.get(x, y)) else {
                continue;
            };
            let i = x * chm.ny + y;
            err[i] = p - t;
            nodata[i] = false;
            pred.push(p as f64);
            truth.push(t as f64);
        }
    }
    let label = split.map(|s| s.1).unwrap_or(SplitLabel::Test);
    let report = evaluate(&pred, &truth, band, pols, label)?;
    let grid = CanopyHeightMap {
        nx: chm.nx,
        ny: chm.ny,
        az_spacing_m: chm.az_spacing_m,
        rng_spacing_m: chm.rng_spacing_m,
        heights_m: err,
        nodata,
    };
    Ok((grid, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub band: BandId,
    pub pols: PolSet,
    pub val_mae: Option<f64>,
    pub test_mae: f64,
    pub norm_test_mae: f64,
    pub test_r2: f64,
}

pub const BAND_CSV_HEADER: &str = "band,pol,val_mae,test_mae,norm_test_mae,test_r2";

/// One row per (band, pols) with a Test report, sorted by band then pols.
/// Normalized MAE is recomputed from the raw test MAE; later duplicates win.
pub fn band_report(reports: &[MetricsReport]) -> Vec<BandRow> {
    let band_rank = |b: BandId| BandId::ALL.iter().position(|&x| x == b).expect("known band");
    let mut groups: BTreeMap<(usize, PolSet), (Option<&MetricsReport>, Option<&MetricsReport>)> = BTreeMap::new();
    for r in reports {
        let g = groups.entry((band_rank(r.band), r.pols.clone())).or_default();
        match r.split {
            SplitLabel::Val => g.0 = Some(r),
            SplitLabel::Test => g.1 = Some(r),
            _ => {}
        }
    }
    groups
        .into_values()
        .filter_map(|(val, test)| {
            let t = test?;
            Some(BandRow {
                band: t.band,
                pols: t.pols.clone(),
                val_mae: val.map(|v| v.mae_m),
                test_mae: t.mae_m,
                norm_test_mae: normalized_mae(t.mae_m, t.band),
                test_r2: t.r2,
            })
        })
        .collect()
}

pub fn write_band_csv<W: Write>(mut w: W, rows: &[BandRow]) -> std::io::Result<()> {
    writeln!(w, "{BAND_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.4},{:.4},{:.4}",
            r.band.as_str(),
            r.pols.label(),
            r.val_mae.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.test_mae,
            r.norm_test_mae,
            r.test_r2
        )?;
    }
    Ok(())
}

/// Binary PGM; image rows are azimuth lines.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Fixed linear map 0–40 m to 0–255; NaN and masked pixels go to 0.
pub fn heatmap_bytes(values: &[f32], mask: &[bool]) -> Vec<u8> {
    values
        .iter()
        .zip(mask)
        .map(|(&v, &m)| {
            if m || v.is_nan() {
                0
            } else {
                (v.clamp(0.0, HEATMAP_MAX_M) / HEATMAP_MAX_M * 255.0).round() as u8
            }
        })
        .collect()
}

/// Writes `path` as the heatmap and `<stem>.mask.pgm` next to it (255 where valid).
pub fn write_heatmap(grid: &CanopyHeightMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let missing: Vec<bool> = grid
        .nodata
        .iter()
        .zip(&grid.heights_m)
        .map(|(&m, v)| m || v.is_nan())
        .collect();
    write_bytes(path, &encode_pgm(grid.ny, grid.nx, &heatmap_bytes(&grid.heights_m, &missing)))?;
    let mask: Vec<u8> = missing.iter().map(|&m| if m { 0 } else { 255 }).collect();
    write_bytes(&mask_path(path), &encode_pgm(grid.ny, grid.nx, &mask))
}

pub fn mask_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.pgm"))
}
