use crate::domain::{PolSet, SplitAssignment, SplitLabel};
use crate::error::{MetricsError, TrainError};
use crate::fileio::AlignedScene;
use crate::metrics::MinMaxScaler;
use crate::scalar::Scalar;
use crate::volnet::Tensor;

pub const PATCH_SIZES: [usize; 3] = [16, 32, 64];

/// Intensity preprocessing applied before the scaler.
pub fn preprocess(v: f32, db: bool) -> f32 {
    if db {
        10.0 * (v as f64 + 1e-12).log10() as f32
    } else {
        v
    }
}

/// Cube channel index of each requested polarization.
pub fn channel_indices(scene: &AlignedScene, pols: &PolSet) -> Result<Vec<usize>, TrainError> {
    pols.as_slice()
        .iter()
        .map(|&p| {
            scene
                .cube
                .pols
                .index_of(p)
                .ok_or_else(|| TrainError::BadConfig(format!("cube has no {} channel", p.as_str())))
        })
        .collect()
}

/// Per-channel min-max scaler over every voxel of Train-labeled pixels.
pub fn fit_scaler(
    scene: &AlignedScene,
    assignment: &SplitAssignment,
    pols: &PolSet,
    db: bool,
) -> Result<MinMaxScaler<f32>, TrainError> {
    let channels = channel_indices(scene, pols)?;
    let cube = &scene.cube;
    let train_pixels: Vec<(usize, usize)> = (0..cube.nx)
        .flat_map(|x| (0..cube.ny).map(move |y| (x, y)))
        .filter(|&(x, y)| assignment.get(x, y) == SplitLabel::Train)
        .collect();
    if train_pixels.is_empty() {
        return Err(MetricsError::EmptyInput.into());
    }
    let per_channel = channels.iter().map(|&c| {
        train_pixels
            .iter()
            .flat_map(move |&(x, y)| cube.profile(c, x, y).iter().map(move |&v| preprocess(v, db)))
    });
    Ok(MinMaxScaler::fit(per_channel)?)
}

/// One `(c, W, W, Z)` input window with its `(W, W)` target.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub input: Vec<f32>,
    pub target_m: Vec<f32>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub label: SplitLabel,
    pub w: usize,
    pub channels: usize,
    pub nz: usize,
    pub patches: Vec<Patch>,
}

/// Top-left corners of every window of size `w` at `stride` along an axis.
pub fn window_starts(extent: usize, w: usize, stride: usize) -> Vec<usize> {
    if extent < w {
        return Vec::new();
    }
    (0..=extent - w).step_by(stride).collect()
}

/// Whether every pixel of the `w`×`w` window at `(x0, y0)` carries `label`.
pub fn window_is_pure(assignment: &SplitAssignment, x0: usize, y0: usize, w: usize, label: SplitLabel) -> bool {
    (x0..x0 + w).all(|x| (y0..y0 + w).all(|y| assignment.get(x, y) == label))
}

/// Slides a `w`×`w` window over the scene and keeps windows made only of `label` pixels.
#[allow(clippy::too_many_arguments)]
pub fn make_patches(
    scene: &AlignedScene,
    assignment: &SplitAssignment,
    label: SplitLabel,
    w: usize,
    stride: usize,
    pols: &PolSet,
    scaler: &MinMaxScaler<f32>,
    db: bool,
) -> Result<PatchDataset, TrainError> {
    if !PATCH_SIZES.contains(&w) {
        return Err(TrainError::BadConfig(format!("patch size {w} not in {PATCH_SIZES:?}")));
    }
    if stride == 0 || stride > w {
        return Err(TrainError::BadConfig(format!("stride {stride} outside 1..={w}")));
    }
    if (assignment.nx, assignment.ny) != (scene.nx(), scene.ny()) {
        return Err(TrainError::BadConfig("split and scene dimensions differ".into()));
    }
    let channels = channel_indices(scene, pols)?;
    if scaler.n_channels() != channels.len() {
        return Err(TrainError::BadConfig(format!(
            "scaler has {} channels, {} requested",
            scaler.n_channels(),
            channels.len()
        )));
    }
    let cube = &scene.cube;
    let nz = cube.nz;
    let mut patches = Vec::new();
    for &x0 in &window_starts(cube.nx, w, stride) {
        for &y0 in &window_starts(cube.ny, w, stride) {
            if !window_is_pure(assignment, x0, y0, w, label) {
                continue;
            }
            let mut input = Vec::with_capacity(channels.len() * w * w * nz);
            for (ci, &c) in channels.iter().enumerate() {
                let start = input.len();
                for x in x0..x0 + w {
                    for y in y0..y0 + w {
                        input.extend(cube.profile(c, x, y).iter().map(|&v| preprocess(v, db)));
                    }
                }
                scaler.transform(ci, &mut input[start..])?;
            }
            let mut target_m = Vec::with_capacity(w * w);
            let mut valid = Vec::with_capacity(w * w);
            for x in x0..x0 + w {
                for y in y0..y0 + w {
                    match scene.chm.get(x, y) {
                        Some(h) => {
                            target_m.push(h);
                            valid.push(true);
                        }
                        None => {
                            target_m.push(0.0);
                            valid.push(false);
                        }
                    }
                }
            }
            patches.push(Patch {
                origin: (x0, y0),
                input,
                target_m,
                valid,
            });
        }
    }
    if patches.is_empty() {
        return Err(TrainError::NoPatches(format!(
            "no pure {w}×{w} {} window at stride {stride}",
            label.as_str()
        )));
    }
    Ok(PatchDataset {
        label,
        w,
        channels: channels.len(),
        nz,
        patches,
    })
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Stacks the selected patches into a network batch with flattened targets.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> (Tensor<T>, Vec<T>, Vec<bool>) {
        let dims = [idx.len(), self.channels, self.w, self.w, self.nz];
        let mut data = Vec::with_capacity(dims.iter().product());
        let mut target = Vec::with_capacity(idx.len() * self.w * self.w);
        let mut valid = Vec::with_capacity(target.capacity());
        for &i in idx {
            let p = &self.patches[i];
            data.extend(p.input.iter().map(|&v| T::from_f64_lossy(v as f64)));
            target.extend(p.target_m.iter().map(|&v| T::from_f64_lossy(v as f64)));
            valid.extend_from_slice(&p.valid);
        }
        (Tensor::from_vec(dims, data), target, valid)
    }
}
