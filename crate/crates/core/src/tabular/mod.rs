//! Per-pixel regression on flattened z-profiles.

pub mod gbt;
pub mod knn;
pub mod ridge;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{PolSet, SplitAssignment, SplitLabel};
use crate::error::{Error, TabularError};
use crate::fileio::AlignedScene;
use crate::geosplit::{make_split, SplitSpec};
use crate::metrics::{mae, MinMaxScaler};
use crate::seed::rng_for;
use crate::trainer::{fit_scaler, preprocess};

pub use gbt::{Gbt, GbtParams};
pub use knn::Knn;
pub use ridge::Ridge;

/// Rows are pixels; columns are optional scaled `x, y`, then `z_1..z_nz` per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pixels: Vec<(usize, usize)>,
}

impl TabularDataset {
    pub fn cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.x[i * c..(i + 1) * c]
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            feature_names: self.feature_names.clone(),
            x: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            pixels: idx.iter().map(|&i| self.pixels[i]).collect(),
        }
    }

    /// CSV with the feature names plus `target` as header.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = self.feature_names.clone();
        header.push("target".into());
        wtr.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn feature_names(pols: &PolSet, nz: usize, include_xy: bool) -> Vec<String> {
    let mut names = Vec::new();
    if include_xy {
        names.push("x".to_string());
        names.push("y".to_string());
    }
    for p in pols.as_slice() {
        for k in 1..=nz {
            names.push(format!("{}_z{k}", p.as_str()));
        }
    }
    names
}

/// One row per non-nodata pixel carrying `label`, in row-major pixel order.
///
/// With a scaler, intensities are preprocessed and scaled per channel; `x`, `y`
/// are scaled to `[0, 1]` by grid extent.
pub fn flatten(
    scene: &AlignedScene,
    pols: &PolSet,
    include_xy: bool,
    assignment: &SplitAssignment,
    label: SplitLabel,
    scaler: Option<(&MinMaxScaler<f32>, bool)>,
) -> Result<TabularDataset, TabularError> {
    let cube = &scene.cube;
    if (assignment.nx, assignment.ny) != (cube.nx, cube.ny) {
        return Err(TabularError::SchemaMismatch(format!(
            "split is {}×{}, scene is {}×{}",
            assignment.nx, assignment.ny, cube.nx, cube.ny
        )));
    }
    let channels: Vec<usize> = pols
        .as_slice()
        .iter()
        .map(|&p| {
            cube.pols
                .index_of(p)
                .ok_or_else(|| TabularError::SchemaMismatch(format!("cube has no {} channel", p.as_str())))
        })
        .collect::<Result<_, _>>()?;
    let names = feature_names(pols, cube.nz, include_xy);
    let span = |n: usize| if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut pixels = Vec::new();
    for px in 0..cube.nx {
        for py in 0..cube.ny {
            if assignment.get(px, py) != label {
                continue;
            }
            let Some(h) = scene.chm.get(px, py) else {
                continue;
            };
            if include_xy {
                x.push(px as f64 / span(cube.nx));
                x.push(py as f64 / span(cube.ny));
            }
            for (ci, &c) in channels.iter().enumerate() {
                for &v in cube.profile(c, px, py) {
                    let v = match scaler {
                        Some((s, db)) => s.transform_value(ci, preprocess(v, db))?,
                        None => v,
                    };
                    x.push(v as f64);
                }
            }
            y.push(h as f64);
            pixels.push((px, py));
        }
    }
    if y.is_empty() {
        return Err(TabularError::EmptySelection);
    }
    Ok(TabularDataset {
        feature_names: names,
        x,
        y,
        pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorKind {
    Ridge { lambda: f64 },
    Knn { k: usize },
    Gbt(GbtParams),
}

impl RegressorKind {
    pub fn validate(&self) -> Result<(), TabularError> {
        let ok = match *self {
            RegressorKind::Ridge { lambda } => lambda >= 0.0 && lambda.is_finite(),
            RegressorKind::Knn { k } => k >= 1,
            RegressorKind::Gbt(p) => p.n_trees >= 1 && p.max_depth >= 1 && p.learning_rate > 0.0 && p.min_leaf >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(TabularError::BadRegressor(format!("{self:?}")))
        }
    }

    /// Rows needed to fit.
    pub fn min_rows(&self) -> usize {
        match *self {
            RegressorKind::Ridge { .. } => 10,
            RegressorKind::Knn { k } => k.max(10),
            RegressorKind::Gbt(p) => p.min_leaf.max(10),
        }
    }

    /// Ordering key for ties in model selection: simpler models first.
    pub fn complexity(&self) -> (u8, usize) {
        match *self {
            RegressorKind::Ridge { .. } => (0, 0),
            RegressorKind::Knn { .. } => (1, 0),
            RegressorKind::Gbt(p) => (2, p.n_trees),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            RegressorKind::Ridge { lambda } => format!("ridge(lambda={lambda})"),
            RegressorKind::Knn { k } => format!("knn(k={k})"),
            RegressorKind::Gbt(p) => format!(
                "gbt(trees={},depth={},lr={},min_leaf={})",
                p.n_trees, p.max_depth, p.learning_rate, p.min_leaf
            ),
        }
    }

    /// The fixed candidate grid used by the tabular harness.
    pub fn default_grid() -> Vec<RegressorKind> {
        vec![
            RegressorKind::Ridge { lambda: 1e-3 },
            RegressorKind::Ridge { lambda: 1.0 },
            RegressorKind::Knn { k: 5 },
            RegressorKind::Knn { k: 15 },
            RegressorKind::Gbt(GbtParams {
                n_trees: 100,
                max_depth: 4,
                learning_rate: 0.1,
                min_leaf: 5,
            }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Ridge(Ridge),
    Knn(Knn),
    Gbt(Gbt),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub kind: RegressorKind,
    pub feature_names: Vec<String>,
    pub model: Model,
}

pub fn fit(kind: RegressorKind, train: &TabularDataset) -> Result<Regressor, TabularError> {
    kind.validate()?;
    let need = kind.min_rows();
    if train.rows() < need {
        return Err(TabularError::TooFewRows {
            need,
            have: train.rows(),
        });
    }
    let cols = train.cols();
    let model = match kind {
        RegressorKind::Ridge { lambda } => Model::Ridge(Ridge::fit(&train.x, &train.y, cols, lambda)?),
        RegressorKind::Knn { k } => Model::Knn(Knn::fit(&train.x, &train.y, cols, k)),
        RegressorKind::Gbt(p) => Model::Gbt(Gbt::fit(&train.x, &train.y, cols, p)),
    };
    Ok(Regressor {
        kind,
        feature_names: train.feature_names.clone(),
        model,
    })
}

impl Regressor {
    pub fn predict(&self, data: &TabularDataset) -> Result<Vec<f64>, TabularError> {
        if data.feature_names != self.feature_names {
            return Err(TabularError::SchemaMismatch(
                "feature columns differ from the fitted schema".into(),
            ));
        }
        let cols = data.cols();
        let out = match &self.model {
            Model::Knn(m) => m.predict(&data.x),
            Model::Ridge(m) => data.x.chunks(cols).map(|r| m.predict_row(r)).collect(),
            Model::Gbt(m) => data.x.par_chunks(cols).map(|r| m.predict_row(r)).collect(),
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub kind: RegressorKind,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub regressor: Regressor,
    pub scores: Vec<CandidateScore>,
    pub chosen: usize,
}

/// Fits every candidate on `train`, scores validation MAE, keeps the argmin.
/// Exact ties go to the simpler model.
pub fn select_model(
    candidates: &[RegressorKind],
    train: &TabularDataset,
    val: &TabularDataset,
) -> Result<Selection, TabularError> {
    if candidates.is_empty() {
        return Err(TabularError::BadRegressor("no candidates".into()));
    }
    let fitted: Vec<(Regressor, f64)> = candidates
        .par_iter()
        .map(|&k| {
            let r = fit(k, train)?;
            let m = mae(&r.predict(val)?, &val.y)?;
            Ok((r, m))
        })
        .collect::<Result<_, TabularError>>()?;
    let mut chosen = 0;
    for i in 1..fitted.len() {
        let (a, b) = (&fitted[i], &fitted[chosen]);
        let better = a.1 < b.1 || (a.1 == b.1 && a.0.kind.complexity() < b.0.kind.complexity());
        if better {
            chosen = i;
        }
    }
    let scores = fitted
        .iter()
        .map(|(r, m)| CandidateScore {
            kind: r.kind,
            val_mae: *m,
        })
        .collect();
    let regressor = fitted.into_iter().nth(chosen).expect("non-empty").0;
    Ok(Selection {
        regressor,
        scores,
        chosen,
    })
}

/// Seeded split of row indices into (fit, holdout) with `frac` held out.
pub fn holdout_rows(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "tabular.holdout"));
    let k = ((n as f64 * frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut hold = idx[..k].to_vec();
    let mut fit = idx[k..].to_vec();
    hold.sort_unstable();
    fit.sort_unstable();
    (fit, hold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularRun {
    pub selection: Selection,
    pub test_mae: f64,
    pub baseline_test_mae: f64,
}

/// Train/select/test on one scene and split. Without Val pixels, 20% of the
/// training rows (seeded) serve as validation.
pub fn run_tabular(
    scene: &AlignedScene,
    pols: &PolSet,
    include_xy: bool,
    assignment: &SplitAssignment,
    candidates: &[RegressorKind],
    db: bool,
    seed: u64,
) -> Result<TabularRun, Error> {
    let scaler = fit_scaler(scene, assignment, pols, db)?;
    let sc = Some((&scaler, db));
    let train_all = flatten(scene, pols, include_xy, assignment, SplitLabel::Train, sc)?;
    let (train, val) = match flatten(scene, pols, include_xy, assignment, SplitLabel::Val, sc) {
        Ok(val) => (train_all, val),
        Err(TabularError::EmptySelection) => {
            let (f, h) = holdout_rows(train_all.rows(), 0.2, seed);
            (train_all.subset(&f), train_all.subset(&h))
        }
        Err(e) => return Err(e.into()),
    };
    let selection = select_model(candidates, &train, &val)?;
    let test = flatten(scene, pols, include_xy, assignment, SplitLabel::Test, sc)?;
    let pred = selection.regressor.predict(&test)?;
    let test_mae = mae(&pred, &test.y)?;
    let mean = train.y.iter().sum::<f64>() / train.rows() as f64;
    let baseline_test_mae = mae(&vec![mean; test.rows()], &test.y)?;
    Ok(TabularRun {
        selection,
        test_mae,
        baseline_test_mae,
    })
}

/// One row of the XY-ablation table: test MAE per (strategy, include_xy) for a pol set.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub pols: PolSet,
    /// `(strategy name, include_xy, test MAE)`.
    pub cells: Vec<(String, bool, f64)>,
    pub cnn_test_mae: Option<f64>,
}

/// Runs every (split, include_xy) combination for every pol set.
pub fn xy_ablation(
    scene: &AlignedScene,
    pol_sets: &[PolSet],
    splits: &[(String, SplitSpec)],
    candidates: &[RegressorKind],
    db: bool,
    seed: u64,
) -> Result<Vec<AblationRow>, Error> {
    let mut rows = Vec::new();
    for pols in pol_sets {
        let mut cells = Vec::new();
        for (name, spec) in splits {
            let assignment = make_split(scene.nx(), scene.ny(), spec)?;
            for include_xy in [true, false] {
                let run = run_tabular(scene, pols, include_xy, &assignment, candidates, db, seed)?;
                cells.push((name.clone(), include_xy, run.test_mae));
            }
        }
        rows.push(AblationRow {
            pols: pols.clone(),
            cells,
            cnn_test_mae: None,
        });
    }
    Ok(rows)
}

/// Pol rows × `{split}_xy`, `{split}_no_xy` columns, then `cnn_quadrant_no_xy`.
pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> std::io::Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut header = vec!["pol".to_string()];
    for (name, xy, _) in &first.cells {
        header.push(format!("{name}_{}", if *xy { "xy" } else { "no_xy" }));
    }
    header.push("cnn_quadrant_no_xy".into());
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut line = vec![r.pols.label()];
        line.extend(r.cells.iter().map(|c| format!("{:.4}", c.2)));
        line.push(r.cnn_test_mae.map(|v| format!("{v:.4}")).unwrap_or_default());
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BandId, Polarization};
    use crate::geosplit::QuadrantRoles;
    use crate::synth::{gen_scene, SceneParams};

    fn scene(n: usize) -> AlignedScene {
        let p = SceneParams {
            nx: n,
            ny: n,
            ..Default::default()
        };
        gen_scene(&p, BandId::P, &PolSet::union()).unwrap()
    }

    #[test]
    fn flatten_shapes_and_order() {
        let s = scene(16);
        let all = SplitAssignment::uniform(16, 16, SplitLabel::Train);
        let one = PolSet::single(Polarization::HV);
        let d = flatten(&s, &one, false, &all, SplitLabel::Train, None).unwrap();
        assert_eq!((d.rows(), d.cols()), (256 - s.chm.nodata_count(), 36));
        assert_eq!(d.pixels[0], (0, 0));
        assert_eq!(d.row(0), &s.cube.profile(1, 0, 0).iter().map(|&v| v as f64).collect::<Vec<_>>()[..]);
        let d = flatten(&s, &PolSet::union(), true, &all, SplitLabel::Train, None).unwrap();
        assert_eq!(d.cols(), 2 + 108);
        assert_eq!(&d.feature_names[..3], &["x", "y", "HH_z1"]);
        let last = d.rows() - 1;
        assert_eq!(d.row(last)[..2], [1.0, 1.0]);
        assert_eq!(flatten(&s, &one, false, &all, SplitLabel::Test, None), Err(TabularError::EmptySelection));
    }

    #[test]
    fn flatten_is_lossless() {
        let s = scene(16);
        let all = SplitAssignment::uniform(16, 16, SplitLabel::Train);
        let d = flatten(&s, &PolSet::union(), false, &all, SplitLabel::Train, None).unwrap();
        for (i, &(x, y)) in d.pixels.iter().enumerate() {
            for c in 0..3 {
                let prof: Vec<f64> = s.cube.profile(c, x, y).iter().map(|&v| v as f64).collect();
                assert_eq!(&d.row(i)[c * 36..(c + 1) * 36], &prof[..]);
            }
            assert_eq!(d.y[i], s.chm.get(x, y).unwrap() as f64);
        }
    }

    #[test]
    fn csv_export_has_target_column() {
        let s = scene(8);
        let all = SplitAssignment::uniform(8, 8, SplitLabel::Train);
        let d = flatten(&s, &PolSet::single(Polarization::HH), true, &all, SplitLabel::Train, None).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("x,y,HH_z1,"));
        assert!(header.ends_with(",HH_z36,target"));
        assert_eq!(text.lines().count(), d.rows() + 1);
    }

    #[test]
    fn permuted_schema_is_rejected() {
        let s = scene(16);
        let all = SplitAssignment::uniform(16, 16, SplitLabel::Train);
        let d = flatten(&s, &PolSet::union(), false, &all, SplitLabel::Train, None).unwrap();
        let r = fit(RegressorKind::Ridge { lambda: 1.0 }, &d).unwrap();
        let mut permuted = d.clone();
        permuted.feature_names.swap(0, 1);
        assert!(matches!(r.predict(&permuted), Err(TabularError::SchemaMismatch(_))));
    }

    #[test]
    fn too_few_rows() {
        let d = TabularDataset {
            feature_names: vec!["a".into()],
            x: vec![1.0; 5],
            y: vec![1.0; 5],
            pixels: vec![(0, 0); 5],
        };
        assert_eq!(
            fit(RegressorKind::Knn { k: 3 }, &d),
            Err(TabularError::TooFewRows { need: 10, have: 5 })
        );
    }

    #[test]
    fn selection_is_argmin_of_recomputed_maes() {
        let s = scene(16);
        let all = SplitAssignment::uniform(16, 16, SplitLabel::Train);
        let d = flatten(&s, &PolSet::union(), false, &all, SplitLabel::Train, None).unwrap();
        let (f, h) = holdout_rows(d.rows(), 0.2, 3);
        let (train, val) = (d.subset(&f), d.subset(&h));
        let cands = [RegressorKind::Knn { k: 1 }, RegressorKind::Ridge { lambda: 1.0 }];
        let sel = select_model(&cands, &train, &val).unwrap();
        let maes: Vec<f64> = cands
            .iter()
            .map(|&k| mae(&fit(k, &train).unwrap().predict(&val).unwrap(), &val.y).unwrap())
            .collect();
        let want = if maes[0] < maes[1] { 0 } else { 1 };
        assert_eq!(sel.chosen, want);
        assert_eq!(sel.scores.iter().map(|c| c.val_mae).collect::<Vec<_>>(), maes);
        let single = select_model(&cands[..1], &train, &val).unwrap();
        assert_eq!(single.chosen, 0);
    }

    #[test]
    fn ties_prefer_simpler_models() {
        let d = TabularDataset {
            feature_names: vec!["a".into()],
            x: (0..20).map(|i| i as f64).collect(),
            y: vec![7.0; 20],
            pixels: vec![(0, 0); 20],
        };
        let cands = [
            RegressorKind::Gbt(GbtParams {
                n_trees: 3,
                max_depth: 2,
                learning_rate: 0.1,
                min_leaf: 1,
            }),
            RegressorKind::Knn { k: 2 },
            RegressorKind::Ridge { lambda: 1.0 },
        ];
        let sel = select_model(&cands, &d, &d).unwrap();
        assert_eq!(sel.chosen, 2);
    }

    #[test]
    fn holdout_is_disjoint_and_seeded() {
        let (a, b) = holdout_rows(100, 0.2, 9);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(holdout_rows(100, 0.2, 9), (a, b));
    }

    #[test]
    fn gbt_beats_mean_baseline_on_small_scene() {
        let s = scene(32);
        let split = make_split(32, 32, &SplitSpec::quadrant(QuadrantRoles::CNN)).unwrap();
        let cands = [RegressorKind::Gbt(GbtParams {
            n_trees: 60,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        })];
        let scaler = fit_scaler(&s, &split, &PolSet::union(), false).unwrap();
        let sc = Some((&scaler, false));
        let train = flatten(&s, &PolSet::union(), false, &split, SplitLabel::Train, sc).unwrap();
        let val = flatten(&s, &PolSet::union(), false, &split, SplitLabel::Val, sc).unwrap();
        let sel = select_model(&cands, &train, &val).unwrap();
        let mean = train.y.iter().sum::<f64>() / train.rows() as f64;
        let baseline = mae(&vec![mean; val.rows()], &val.y).unwrap();
        assert!(sel.scores[0].val_mae <= 0.75 * baseline, "{} vs {baseline}", sel.scores[0].val_mae);
    }
}
