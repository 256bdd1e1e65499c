//! Bayesian hyperparameter search: seeded warmup, then expected improvement
//! under a Gaussian-process surrogate.

pub mod gp;
pub mod space;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::PolSet;
use crate::error::HpoError;
use crate::fileio::AlignedScene;
use crate::seed::{derive_seed, rng_for};
use crate::trainer::{run_experiment, ExperimentSpec};

pub use gp::{expected_improvement, matern52, Gp};
pub use space::{Domain, ParamSpec, ParamValue, Point, Scale, SearchSpace};

pub const N_CANDIDATES: usize = 1024;
const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub point: Point,
    /// Objective value; `None` exactly when the trial failed.
    pub value: Option<f64>,
    pub status: TrialStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub budget: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Trials per synchronous batch.
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        SweepConfig {
            budget,
            warmup_fraction: 0.2,
            seed,
            jobs: 1,
        }
    }

    pub fn warmup_count(&self) -> usize {
        ((self.warmup_fraction * self.budget as f64).ceil() as usize).clamp(1, self.budget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

pub fn trial_seed(seed: u64, id: usize) -> u64 {
    derive_seed(seed, &format!("hpo.trial.{id}"))
}

pub fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let (mut f, mut out) = (inv, 0.0);
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// `n` Halton points in `[0, 1)^dims` under a Cranley-Patterson shift.
pub fn shifted_halton(n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (1..=n as u64)
        .map(|i| {
            shift
                .iter()
                .zip(PRIMES.iter().cycle())
                .map(|(&s, &p)| (radical_inverse(i, p) + s).fract())
                .collect()
        })
        .collect()
}

/// Lowest value among ok trials, first on ties.
pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter_map(|t| t.value.map(|v| (t, v)))
        .fold(None, |acc: Option<(&Trial, f64)>, (t, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((t, v)),
        })
        .map(|(t, _)| t)
}

fn observations(space: &SearchSpace, trials: &[Trial]) -> (Vec<Vec<f64>>, Vec<f64>) {
    trials
        .iter()
        .filter_map(|t| t.value.map(|v| (space.encode(&t.point).expect("trial points lie in the space"), v)))
        .unzip()
}

/// `k` points by expected-improvement argmax over shifted Halton candidates.
/// Later points in a batch treat earlier ones as observed at their posterior mean.
fn propose<R: Rng>(space: &SearchSpace, trials: &[Trial], k: usize, rng: &mut R) -> Vec<Point> {
    let (mut x, mut y) = observations(space, trials);
    let shift: Vec<f64> = (0..space.dims()).map(|_| rng.random::<f64>()).collect();
    let candidates: Vec<(Point, Vec<f64>)> = shifted_halton(N_CANDIDATES, &shift)
        .into_iter()
        .map(|u| {
            let p = space.from_latent(&u);
            let e = space.encode(&p).expect("decoded candidates lie in the space");
            (p, e)
        })
        .collect();
    let Some(mut gp) = Gp::fit(&x, &y) else {
        return (0..k).map(|_| space.sample(rng)).collect();
    };
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|(_, e)| {
                let (m, sd) = gp.predict(e);
                expected_improvement(m, sd, best)
            })
            .collect();
        let mut arg = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[arg] {
                arg = i;
            }
        }
        let (p, e) = &candidates[arg];
        out.push(p.clone());
        if out.len() < k {
            let (m, _) = gp.predict(e);
            x.push(e.clone());
            y.push(m);
            match Gp::fit_with(&x, &y, gp.length_scale) {
                Some((g, _)) => gp = g,
                None => {
                    while out.len() < k {
                        out.push(space.sample(rng));
                    }
                    break;
                }
            }
        }
    }
    out
}

/// Runs `budget` trials in batches of `jobs`; the surrogate is refit only between batches.
/// Deterministic in `seed` regardless of trial completion order.
pub fn sweep<F>(space: &SearchSpace, objective: F, cfg: &SweepConfig) -> Result<SweepResult, HpoError>
where
    F: Fn(&Point, u64) -> Result<f64, String> + Sync,
{
    space.validate()?;
    if cfg.budget < 5 {
        return Err(HpoError::BudgetTooSmall(cfg.budget));
    }
    if !(0.0..=1.0).contains(&cfg.warmup_fraction) {
        return Err(HpoError::BadSpace(format!("warmup_fraction {} outside [0, 1]", cfg.warmup_fraction)));
    }
    let warmup = cfg.warmup_count();
    let jobs = cfg.jobs.max(1);
    let mut sample_rng = rng_for(cfg.seed, "hpo.warmup");
    let mut cand_rng = rng_for(cfg.seed, "hpo.candidates");
    let mut trials: Vec<Trial> = Vec::with_capacity(cfg.budget);
    while trials.len() < cfg.budget {
        let start = trials.len();
        let n = jobs.min(cfg.budget - start);
        let n_warm = warmup.saturating_sub(start).min(n);
        let mut points: Vec<Point> = (0..n_warm).map(|_| space.sample(&mut sample_rng)).collect();
        if n > n_warm {
            if trials.iter().any(|t| t.value.is_some()) {
                points.extend(propose(space, &trials, n - n_warm, &mut cand_rng));
            } else {
                points.extend((n_warm..n).map(|_| space.sample(&mut sample_rng)));
            }
        }
        let results: Vec<Result<f64, String>> = points
            .par_iter()
            .enumerate()
            .map(|(j, p)| objective(p, trial_seed(cfg.seed, start + j)))
            .collect();
        for (j, (point, r)) in points.into_iter().zip(results).enumerate() {
            let r = r.and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("objective returned {v}")) });
            trials.push(match r {
                Ok(v) => Trial {
                    id: start + j,
                    point,
                    value: Some(v),
                    status: TrialStatus::Ok,
                    error: None,
                },
                Err(e) => Trial {
                    id: start + j,
                    point,
                    value: None,
                    status: TrialStatus::Failed,
                    error: Some(e),
                },
            });
        }
    }
    let best = best_trial(&trials).cloned().ok_or(HpoError::AllTrialsFailed)?;
    Ok(SweepResult { best, trials })
}

/// CSV with `trial_id`, one column per parameter, `val_mae`, `status`.
pub fn write_sweep_log<W: Write>(w: W, space: &SearchSpace, trials: &[Trial]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["trial_id".to_string()];
    header.extend(space.params.iter().map(|p| p.name.clone()));
    header.push("val_mae".into());
    header.push("status".into());
    wtr.write_record(&header)?;
    for t in trials {
        let mut rec = vec![t.id.to_string()];
        for (p, &v) in space.params.iter().zip(&t.point) {
            rec.push(match p.to_json(v) {
                Value::String(s) => s,
                other => other.to_string(),
            });
        }
        rec.push(t.value.map(|v| v.to_string()).unwrap_or_default());
        rec.push(t.status.as_str().into());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Sets each dotted-path parameter on a JSON copy of `base`.
pub fn apply_point<T>(base: &T, space: &SearchSpace, point: &[ParamValue]) -> Result<T, HpoError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut doc = serde_json::to_value(base).map_err(|e| HpoError::BadSpace(e.to_string()))?;
    for (name, v) in space.to_json(point) {
        let mut node = &mut doc;
        let mut parts = name.split('.').peekable();
        while let Some(key) = parts.next() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| HpoError::BadSpace(format!("{name}: {key} is not inside an object")))?;
            if parts.peek().is_none() {
                obj.insert(key.to_string(), v.clone());
                break;
            }
            node = obj
                .get_mut(key)
                .ok_or_else(|| HpoError::BadSpace(format!("{name}: no section {key}")))?;
        }
    }
    serde_json::from_value(doc).map_err(|e| HpoError::BadSpace(e.to_string()))
}

/// `(log10 v − center)²` on the named parameter.
pub fn log_quadratic(space: &SearchSpace, param: &str, center: f64) -> Result<impl Fn(&Point, u64) -> Result<f64, String> + Sync, HpoError> {
    let i = space
        .params
        .iter()
        .position(|p| p.name == param)
        .ok_or_else(|| HpoError::BadSpace(format!("no parameter {param}")))?;
    let param = param.to_string();
    Ok(move |p: &Point, _seed: u64| match p[i] {
        ParamValue::Real(v) => Ok((v.log10() - center).powi(2)),
        ParamValue::Int(v) => Ok(((v as f64).log10() - center).powi(2)),
        ParamValue::Choice(_) => Err(format!("{param} is categorical")),
    })
}

/// Best validation MAE of a full training run with the point applied to `base`.
/// Each trial trains under its own seed unless the space sets `train.seed`.
pub fn experiment_objective<'a>(
    scene: &'a AlignedScene,
    pols: &'a PolSet,
    base: &'a ExperimentSpec,
    space: &'a SearchSpace,
) -> impl Fn(&Point, u64) -> Result<f64, String> + Sync + 'a {
    let seeded = space.params.iter().any(|p| p.name == "train.seed");
    move |p: &Point, seed: u64| {
        let mut spec = apply_point(base, space, p).map_err(|e| e.to_string())?;
        if !seeded {
            spec.train.seed = seed;
        }
        run_experiment(scene, pols, &spec)
            .map(|r| r.outcome.best_val_mae)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    LogQuadratic {
        param: String,
        #[serde(default = "default_center")]
        center: f64,
    },
    Train {
        /// Scene directory, relative to the spec file.
        scene: String,
        pols: PolSet,
        experiment: ExperimentSpec,
    },
}

fn default_center() -> f64 {
    -3.0
}

fn default_warmup() -> f64 {
    0.2
}

/// Sweep document: space, objective, and optional run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub space: SearchSpace,
    pub objective: ObjectiveSpec,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default)]
    pub budget: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;
    use crate::volnet::{Backbone, CollapseKind, ModelSpec};

    fn lr_space() -> SearchSpace {
        serde_json::from_str(r#"[{"name":"lr","type":"continuous","lo":1e-5,"hi":0.1,"scale":"log"}]"#).unwrap()
    }

    #[test]
    fn warmup_count_is_ceiling() {
        let mut c = SweepConfig::new(10, 0);
        assert_eq!(c.warmup_count(), 2);
        c.budget = 11;
        assert_eq!(c.warmup_count(), 3);
    }

    #[test]
    fn quadratic_optimum_is_found() {
        let s = lr_space();
        let f = log_quadratic(&s, "lr", -3.0).unwrap();
        let r = sweep(&s, &f, &SweepConfig::new(30, 4)).unwrap();
        let ParamValue::Real(lr) = r.best.point[0] else { panic!() };
        assert!((10f64.powf(-3.5)..=10f64.powf(-2.5)).contains(&lr), "{lr}");
        assert_eq!(r.trials.len(), 30);
    }

    #[test]
    fn constant_objective() {
        let s = SearchSpace::default_cnn();
        let r = sweep(&s, |_: &Point, _| Ok(1.0), &SweepConfig::new(8, 0)).unwrap();
        assert_eq!(r.best.value, Some(1.0));
        assert_eq!(r.best.id, 0);
    }

    #[test]
    fn deterministic_and_batch_invariant_warmup() {
        let s = SearchSpace::default_cnn();
        let f = log_quadratic(&s, "train.learning_rate", -4.0).unwrap();
        let a = sweep(&s, &f, &SweepConfig::new(12, 7)).unwrap();
        let b = sweep(&s, &f, &SweepConfig::new(12, 7)).unwrap();
        assert_eq!(a, b);
        let c = sweep(&s, &f, &SweepConfig { jobs: 4, ..SweepConfig::new(12, 7) }).unwrap();
        assert_eq!(a.trials[..3], c.trials[..3]);
        assert_eq!(c, sweep(&s, &f, &SweepConfig { jobs: 4, ..SweepConfig::new(12, 7) }).unwrap());
    }

    #[test]
    fn failures_are_recorded_and_excluded() {
        let s = lr_space();
        let f = |p: &Point, _| match p[0] {
            ParamValue::Real(v) if v > 1e-2 => Err("boom".to_string()),
            ParamValue::Real(v) => Ok(v.log10().powi(2)),
            _ => unreachable!(),
        };
        let r = sweep(&s, f, &SweepConfig::new(15, 2)).unwrap();
        for t in &r.trials {
            assert_eq!(t.value.is_none(), t.status == TrialStatus::Failed);
        }
        let min = r.trials.iter().filter_map(|t| t.value).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best.value, Some(min));
        let all_fail = sweep(&s, |_: &Point, _| Err::<f64, _>("x".to_string()), &SweepConfig::new(5, 0));
        assert_eq!(all_fail, Err(HpoError::AllTrialsFailed));
        assert_eq!(
            sweep(&s, |_: &Point, _| Ok(0.0), &SweepConfig::new(4, 0)),
            Err(HpoError::BudgetTooSmall(4))
        );
    }

    #[test]
    fn running_best_is_monotone() {
        let s = SearchSpace::default_cnn();
        let f = log_quadratic(&s, "train.learning_rate", -4.2).unwrap();
        let r = sweep(&s, &f, &SweepConfig::new(20, 3)).unwrap();
        let bests: Vec<f64> = (1..=20).map(|b| best_trial(&r.trials[..b]).unwrap().value.unwrap()).collect();
        assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn halton_is_low_discrepancy() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
        let pts = shifted_halton(1024, &[0.3, 0.7]);
        for d in 0..2 {
            let below = pts.iter().filter(|p| p[d] < 0.5).count();
            assert!((below as i64 - 512).abs() <= 2);
        }
    }

    #[test]
    fn point_applies_to_experiment_spec() {
        let base = ExperimentSpec {
            model: ModelSpec::new(Backbone::Model2, CollapseKind::GapZ, 3),
            train: TrainConfig::default(),
            split: Default::default(),
        };
        let s = SearchSpace::default_cnn();
        let p = vec![ParamValue::Real(2e-5), ParamValue::Int(7), ParamValue::Choice(2)];
        let spec = apply_point(&base, &s, &p).unwrap();
        assert_eq!(spec.train.learning_rate, 2e-5);
        assert_eq!(spec.train.batch_size, 7);
        assert_eq!(spec.model.dropout_rate, 0.2);
        let bad: SearchSpace =
            serde_json::from_str(r#"[{"name":"train.nope","type":"integer","lo":1,"hi":3}]"#).unwrap();
        assert!(apply_point(&base, &bad, &[ParamValue::Int(2)]).is_err());
    }

    #[test]
    fn sweep_log_columns() {
        let s = lr_space();
        let trials = vec![
            Trial {
                id: 0,
                point: vec![ParamValue::Real(0.001)],
                value: Some(1.5),
                status: TrialStatus::Ok,
                error: None,
            },
            Trial {
                id: 1,
                point: vec![ParamValue::Real(0.01)],
                value: None,
                status: TrialStatus::Failed,
                error: Some("x".into()),
            },
        ];
        let mut buf = Vec::new();
        write_sweep_log(&mut buf, &s, &trials).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "trial_id,lr,val_mae,status\n0,0.001,1.5,ok\n1,0.01,,failed\n"
        );
    }

    #[test]
    fn sweep_spec_json() {
        let text = r#"{"space":[{"name":"lr","type":"continuous","lo":1e-5,"hi":0.1,"scale":"log"}],
                       "objective":{"kind":"log_quadratic","param":"lr"}}"#;
        let spec: SweepSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.warmup_fraction, 0.2);
        assert_eq!(spec.objective, ObjectiveSpec::LogQuadratic { param: "lr".into(), center: -3.0 });
        assert!(serde_json::from_str::<SweepSpec>(&text.replace("\"space\"", "\"spaces\"")).is_err());
    }
}
