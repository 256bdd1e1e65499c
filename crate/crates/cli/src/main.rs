use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use tomoheight::domain::{BandId, PolSet, Polarization, SplitLabel};
use tomoheight::error::{FormatError, HpoError, SplitError};
use tomoheight::fileio::{read_scene, SCENE_CHM_FILE, SCENE_CUBE_FILE, read_split, write_scene, write_signed_grid, write_split};
use tomoheight::geosplit::{make_split, QuadrantRoles, SplitSpec, SwathOrientation};
use tomoheight::hpo::{self, ObjectiveSpec, SweepConfig, SweepSpec};
use tomoheight::metrics::{read_metrics_csv, write_metrics_csv};
use tomoheight::recon::{band_report, error_map, reconstruct, write_band_csv, write_heatmap};
use tomoheight::synth::{gen_scene, SceneParams};
use tomoheight::tabular::{run_tabular, write_ablation_csv, xy_ablation, RegressorKind};
use tomoheight::trainer::{run_experiment_on, write_history_csv, ExperimentSpec, ModelMeta, TrainConfig};
use tomoheight::volnet::{load_model, save_model, Backbone, CollapseKind, ModelSpec};
use tomoheight::{Error, ErrorClass};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "tomoheight", version, about = "Canopy height from tomographic SAR cubes")]
struct Cli {
    /// Root seed; overrides any seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (cube + CHM).
    Synth {
        /// JSON with `scene`, `band`, `pols` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a geographic train/val/test split for a scene.
    Split {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "quadrant")]
        strategy: StrategyArg,
        /// Train, val, test fractions; quadrant defaults to the role fractions.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "along-range")]
        orientation: OrientationArg,
        /// Quadrant roles.
        #[arg(long, value_enum, default_value = "cnn")]
        roles: RolesArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten profiles, select a tabular regressor, report test MAE.
    Tabular {
        #[arg(long)]
        scene: PathBuf,
        /// Split file; not used with --ablation.
        #[arg(long, required_unless_present = "ablation")]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        include_xy: IncludeXy,
        /// Polarization sets, e.g. `HH` or `HH,HV,VV`; repeatable.
        #[arg(long, default_values = ["HH", "HV", "VV", "HH,HV,VV"])]
        pols: Vec<String>,
        /// Run all three split strategies and write the XY-ablation table.
        #[arg(long)]
        ablation: bool,
        #[arg(long)]
        db: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a volumetric network on a scene and split.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value = "model2")]
        model: ModelArg,
        #[arg(long, value_enum, default_value = "gap")]
        collapse: CollapseArg,
        /// Patch size.
        #[arg(long = "W", default_value_t = 16)]
        w: usize,
        #[arg(long, default_value = "HH,HV,VV")]
        pols: String,
        /// Base channel width; defaults to the backbone's reference width.
        #[arg(long)]
        base_width: Option<usize>,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long)]
        no_batch_norm: bool,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 15)]
        patience: usize,
        /// Training stride; defaults to W/2.
        #[arg(long)]
        train_stride: Option<usize>,
        /// Evaluation stride; defaults to W.
        #[arg(long)]
        eval_stride: Option<usize>,
        #[arg(long)]
        db: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bayesian hyperparameter search.
    Sweep {
        /// Sweep spec JSON with `space` and `objective`.
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[arg(long, default_value_t = 0.2)]
        warmup_fraction: f64,
        /// Trials per synchronous batch.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stitch full-scene predictions from a checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Window stride; defaults to the checkpoint's W.
        #[arg(long)]
        stride: Option<usize>,
        /// Restrict the error report to one split label.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        label: LabelArg,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine metrics CSVs into a band comparison table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Swath,
    Square,
    Quadrant,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    AlongRange,
    AlongAzimuth,
}

#[derive(Clone, Copy, ValueEnum)]
enum RolesArg {
    Cnn,
    Tabular,
}

#[derive(Clone, Copy, ValueEnum)]
enum IncludeXy {
    True,
    False,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
    Model3,
}

#[derive(Clone, Copy, ValueEnum)]
enum CollapseArg {
    Conv,
    Gap,
    Progressive,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    #[serde(default)]
    scene: SceneParams,
    #[serde(default = "default_band")]
    band: BandId,
    #[serde(default = "PolSet::union")]
    pols: PolSet,
}

fn default_band() -> BandId {
    BandId::P
}

/// Tracks paths created by a command so they can be removed on failure.
#[derive(Default)]
struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    fn file(&mut self, path: &Path) -> Result<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        if !path.exists() {
            self.created.push(path.to_path_buf());
        }
        Ok(path.to_path_buf())
    }

    fn dir(&mut self, path: &Path) -> Result<PathBuf> {
        if !path.exists() {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                self.dir(parent)?;
            }
            fs::create_dir(path).map_err(FormatError::from)?;
            self.created.push(path.to_path_buf());
        }
        Ok(path.to_path_buf())
    }

    fn in_dir(&mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        self.dir(dir)?;
        self.file(&dir.join(name))
    }

    fn remove_all(&self) {
        for p in self.created.iter().rev() {
            if p.is_dir() {
                let _ = fs::remove_dir_all(p);
            } else {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn config_err(msg: impl std::fmt::Display) -> Error {
    Error::Config(msg.to_string())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(FormatError::Io(e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err)?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn parse_pols(s: &str) -> Result<PolSet> {
    if s.eq_ignore_ascii_case("union") {
        return Ok(PolSet::union());
    }
    let pols = s
        .split(',')
        .map(|p| {
            Polarization::ALL
                .into_iter()
                .find(|q| q.as_str().eq_ignore_ascii_case(p.trim()))
                .ok_or_else(|| config_err(format!("unknown polarization {p:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    PolSet::new(pols).map_err(config_err)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err)?))
}

fn synth(config: &Path, out: &Path, seed: Option<u64>, o: &mut Outputs) -> Result<()> {
    let mut cfg: SynthConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    let scene = gen_scene(&cfg.scene, cfg.band, &cfg.pols)?;
    o.dir(out)?;
    for name in [SCENE_CUBE_FILE, SCENE_CHM_FILE] {
        o.file(&out.join(name))?;
    }
    write_scene(&scene, out)?;
    Ok(())
}

fn split_spec(strategy: StrategyArg, ratios: Option<Vec<f64>>, orientation: OrientationArg, roles: RolesArg, seed: u64) -> Result<SplitSpec> {
    let ratios = match ratios.as_deref() {
        None => None,
        Some(&[a, b, c]) => Some((a, b, c)),
        Some(r) => return Err(SplitError::BadSpec(format!("--ratios needs 3 values, got {}", r.len())).into()),
    };
    let orientation = match orientation {
        OrientationArg::AlongRange => SwathOrientation::AlongRange,
        OrientationArg::AlongAzimuth => SwathOrientation::AlongAzimuth,
    };
    let default = (0.5, 0.25, 0.25);
    let mut spec = match strategy {
        StrategyArg::Swath => SplitSpec::swath(ratios.unwrap_or(default), orientation),
        StrategyArg::Square => SplitSpec::square(ratios.unwrap_or(default)),
        StrategyArg::Quadrant => {
            let roles = match roles {
                RolesArg::Cnn => QuadrantRoles::CNN,
                RolesArg::Tabular => QuadrantRoles::TABULAR,
            };
            let nominal = SplitSpec::quadrant(roles);
            match ratios {
                None => nominal,
                Some(r) if r == nominal.ratios => nominal,
                Some(r) if roles == QuadrantRoles::CNN => SplitSpec::quadrant_ratio_exact(r),
                Some(r) => {
                    return Err(SplitError::BadSpec(format!(
                        "tabular quadrant roles fix the ratios at {:?}, got {r:?}",
                        nominal.ratios
                    ))
                    .into())
                }
            }
        }
    };
    spec.seed = seed;
    spec.validate()?;
    Ok(spec)
}

fn tabular(
    scene_dir: &Path,
    split: Option<&Path>,
    include_xy: IncludeXy,
    pols: &[String],
    ablation: bool,
    db: bool,
    out: &Path,
    seed: u64,
    o: &mut Outputs,
) -> Result<()> {
    let scene = read_scene(scene_dir)?;
    let pol_sets = pols.iter().map(|p| parse_pols(p)).collect::<Result<Vec<_>>>()?;
    let grid = RegressorKind::default_grid();
    if ablation {
        let splits = vec![
            ("square".to_string(), SplitSpec::square((0.5, 0.25, 0.25))),
            ("swath".to_string(), SplitSpec::swath((0.5, 0.25, 0.25), SwathOrientation::AlongRange)),
            ("quadrant".to_string(), SplitSpec::quadrant(QuadrantRoles::TABULAR)),
        ];
        let rows = xy_ablation(&scene, &pol_sets, &splits, &grid, db, seed)?;
        let path = o.file(out)?;
        write_ablation_csv(create(&path)?, &rows).map_err(io_err)?;
        return Ok(());
    }
    let assignment = read_split(split.ok_or_else(|| config_err("--split is required"))?)?;
    let settings: &[bool] = match include_xy {
        IncludeXy::True => &[true],
        IncludeXy::False => &[false],
        IncludeXy::Both => &[true, false],
    };
    let mut lines = vec!["pol,include_xy,model,val_mae,test_mae,baseline_test_mae".to_string()];
    for pols in &pol_sets {
        for &xy in settings {
            let run = run_tabular(&scene, pols, xy, &assignment, &grid, db, seed)?;
            let sel = &run.selection;
            lines.push(format!(
                "{},{xy},{},{:.4},{:.4},{:.4}",
                pols.label(),
                sel.regressor.kind.label(),
                sel.scores[sel.chosen].val_mae,
                run.test_mae,
                run.baseline_test_mae
            ));
        }
    }
    let path = o.file(out)?;
    fs::write(&path, lines.join("\n") + "\n").map_err(io_err)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    scene_dir: &Path,
    split: &Path,
    model: ModelArg,
    collapse: CollapseArg,
    w: usize,
    pols: &str,
    base_width: Option<usize>,
    dropout: f64,
    batch_norm: bool,
    train: TrainConfig,
    out: &Path,
    o: &mut Outputs,
) -> Result<()> {
    let scene = read_scene(scene_dir)?;
    let assignment = read_split(split)?;
    let pols = parse_pols(pols)?;
    let backbone = match model {
        ModelArg::Model1 => Backbone::Model1,
        ModelArg::Model2 => Backbone::Model2,
        ModelArg::Model3 => Backbone::Model3,
    };
    let collapse = match collapse {
        CollapseArg::Conv => CollapseKind::ConvZ,
        CollapseArg::Gap => CollapseKind::GapZ,
        CollapseArg::Progressive => CollapseKind::ProgressiveZ,
    };
    let mut spec = ModelSpec::new(backbone, collapse, pols.len());
    if let Some(b) = base_width {
        spec.base_width = b;
    }
    spec.dropout_rate = dropout;
    spec.batch_norm = batch_norm;
    spec.validate()?;
    let experiment = ExperimentSpec {
        model: spec,
        train: TrainConfig { patch_w: w, ..train },
        split: SplitSpec::default(),
    };
    let result = run_experiment_on(&scene, &pols, &experiment, assignment)?;
    let history = o.in_dir(out, "history.csv")?;
    write_history_csv(create(&history)?, &result.outcome.history).map_err(io_err)?;
    let metrics = o.in_dir(out, "metrics.csv")?;
    write_metrics_csv(create(&metrics)?, &result.reports).map_err(io_err)?;
    let ckpt = o.in_dir(out, "model.tmdl")?;
    save_model(&result.net, &result.meta.to_json(), &ckpt)?;
    let cfg = o.in_dir(out, "experiment.json")?;
    fs::write(&cfg, serde_json::to_string_pretty(&experiment).expect("spec serializes") + "\n").map_err(io_err)?;
    Ok(())
}

fn sweep_cmd(space: &Path, cfg: SweepConfig, out: &Path, o: &mut Outputs) -> Result<()> {
    let spec: SweepSpec = read_json(space)?;
    let cfg = SweepConfig {
        budget: spec.budget.unwrap_or(cfg.budget),
        ..cfg
    };
    let result = match &spec.objective {
        ObjectiveSpec::LogQuadratic { param, center } => {
            let f = hpo::log_quadratic(&spec.space, param, *center)?;
            hpo::sweep(&spec.space, f, &cfg)?
        }
        ObjectiveSpec::Train { scene, pols, experiment } => {
            let base = space.parent().unwrap_or(Path::new("."));
            let scene = read_scene(base.join(scene))?;
            hpo::apply_point(experiment, &spec.space, &spec.space.sample(&mut tomoheight::seed::rng_for(0, "check")))?;
            let f = hpo::experiment_objective(&scene, pols, experiment, &spec.space);
            hpo::sweep(&spec.space, f, &cfg)?
        }
    };
    let log = o.in_dir(out, "trials.csv")?;
    hpo::write_sweep_log(create(&log)?, &spec.space, &result.trials)
        .map_err(|e| config_err(format!("writing sweep log: {e}")))?;
    let best = o.in_dir(out, "best.json")?;
    let doc = serde_json::json!({
        "trial_id": result.best.id,
        "params": spec.space.to_json(&result.best.point),
        "val_mae": result.best.value,
    });
    fs::write(&best, serde_json::to_string_pretty(&doc).expect("json") + "\n").map_err(io_err)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_cmd(
    checkpoint: &Path,
    scene_dir: &Path,
    stride: Option<usize>,
    split: Option<&Path>,
    label: LabelArg,
    batch_size: usize,
    out: &Path,
    o: &mut Outputs,
) -> Result<()> {
    let (mut net, meta) = load_model::<f32>(checkpoint)?;
    let meta = ModelMeta::from_json(&meta).map_err(|e| Error::Format(FormatError::HeaderParse(e)))?;
    let scene = read_scene(scene_dir)?;
    let scaler = meta.scaler()?;
    let w = meta.patch_w;
    let stride = stride.unwrap_or(w);
    let recon = reconstruct(&mut net, &scene, w, stride, &meta.pols, &scaler, meta.use_db_transform, batch_size)?;
    let assignment = split.map(read_split).transpose()?;
    let label = match label {
        LabelArg::Train => SplitLabel::Train,
        LabelArg::Val => SplitLabel::Val,
        LabelArg::Test => SplitLabel::Test,
    };
    let (err, report) = error_map(&recon, &scene.chm, meta.band, &meta.pols, assignment.as_ref().map(|a| (a, label)))?;
    let pred = recon.to_grid(scene.chm.az_spacing_m, scene.chm.rng_spacing_m);
    write_signed_grid(&pred, o.in_dir(out, "pred.chm")?)?;
    write_signed_grid(&err, o.in_dir(out, "error.chm")?)?;
    o.in_dir(out, "pred.mask.pgm")?;
    write_heatmap(&pred, o.in_dir(out, "pred.pgm")?)?;
    let mut abs_err = err.clone();
    abs_err.heights_m.iter_mut().for_each(|v| *v = v.abs());
    o.in_dir(out, "error.mask.pgm")?;
    write_heatmap(&abs_err, o.in_dir(out, "error.pgm")?)?;
    write_metrics_csv(create(&o.in_dir(out, "metrics.csv")?)?, &[report]).map_err(io_err)?;
    let info = serde_json::json!({
        "stitching": recon.stitching(),
        "w": recon.w,
        "stride": recon.stride,
        "uncovered_pixels": recon.uncovered_count(),
    });
    fs::write(o.in_dir(out, "recon.json")?, serde_json::to_string_pretty(&info).expect("json") + "\n").map_err(io_err)?;
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out: &Path, o: &mut Outputs) -> Result<()> {
    let mut reports = Vec::new();
    for p in inputs {
        let text = fs::read_to_string(p).map_err(io_err)?;
        let rows = read_metrics_csv(&text)
            .map_err(|e| Error::Format(FormatError::HeaderParse(format!("{}: {e}", p.display()))))?;
        reports.extend(rows);
    }
    let rows = band_report(&reports);
    let path = o.file(out)?;
    write_band_csv(create(&path)?, &rows).map_err(io_err)?;
    Ok(())
}

fn run(cli: Cli, o: &mut Outputs) -> Result<()> {
    let seed = cli.seed;
    let root = seed.unwrap_or(0);
    match cli.cmd {
        Command::Synth { config, out } => synth(&config, &out, seed, o),
        Command::Split {
            scene,
            strategy,
            ratios,
            orientation,
            roles,
            out,
        } => {
            let spec = split_spec(strategy, ratios, orientation, roles, root)?;
            let scene = read_scene(&scene)?;
            let split = make_split(scene.nx(), scene.ny(), &spec)?;
            write_split(&split, o.file(&out)?)?;
            Ok(())
        }
        Command::Tabular {
            scene,
            split,
            include_xy,
            pols,
            ablation,
            db,
            out,
        } => tabular(&scene, split.as_deref(), include_xy, &pols, ablation, db, &out, root, o),
        Command::Train {
            scene,
            split,
            model,
            collapse,
            w,
            pols,
            base_width,
            dropout,
            no_batch_norm,
            lr,
            batch_size,
            epochs,
            patience,
            train_stride,
            eval_stride,
            db,
            out,
        } => {
            let train = TrainConfig {
                learning_rate: lr,
                batch_size,
                max_epochs: epochs,
                patience_epochs: patience,
                seed: root,
                train_stride,
                eval_stride,
                use_db_transform: db,
                ..TrainConfig::default()
            };
            train_cmd(&scene, &split, model, collapse, w, &pols, base_width, dropout, !no_batch_norm, train, &out, o)
        }
        Command::Sweep {
            space,
            budget,
            warmup_fraction,
            jobs,
            out,
        } => {
            if jobs == 0 {
                return Err(HpoError::BadSpace("--jobs must be at least 1".into()).into());
            }
            let cfg = SweepConfig {
                budget,
                warmup_fraction,
                seed: root,
                jobs,
            };
            sweep_cmd(&space, cfg, &out, o)
        }
        Command::Reconstruct {
            checkpoint,
            scene,
            stride,
            split,
            label,
            batch_size,
            out,
        } => reconstruct_cmd(&checkpoint, &scene, stride, split.as_deref(), label, batch_size, &out, o),
        Command::Report { inputs, out } => report_cmd(&inputs, &out, o),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TOMOHEIGHT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| config_err(format!("TOMOHEIGHT_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_err)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut outputs = Outputs::default();
    match init_threads().and_then(|()| run(cli, &mut outputs)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.remove_all();
            let line = serde_json::json!({ "error": e.name(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
