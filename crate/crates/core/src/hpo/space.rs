use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HpoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Continuous { lo: f64, hi: f64, scale: Scale },
    Integer { lo: i64, hi: i64 },
    Categorical { choices: Vec<Value> },
}

/// One search dimension. `name` is a dotted path into the configured document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Real(f64),
    Int(i64),
    Choice(usize),
}

pub type Point = Vec<ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl ParamSpec {
    fn width(&self) -> usize {
        match &self.domain {
            Domain::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }

    fn validate(&self) -> Result<(), HpoError> {
        let bad = |why: &str| Err(HpoError::BadSpace(format!("{}: {why}", self.name)));
        match &self.domain {
            Domain::Continuous { lo, hi, scale } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("need finite lo < hi");
                }
                if *scale == Scale::Log && *lo <= 0.0 {
                    return bad("log scale needs lo > 0");
                }
            }
            Domain::Integer { lo, hi } => {
                if lo >= hi {
                    return bad("need lo < hi");
                }
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    return bad("no choices");
                }
            }
        }
        Ok(())
    }

    /// Maps `u` in `[0, 1]` to a value; categoricals take the bucket `⌊u·k⌋`.
    fn from_unit(&self, u: f64) -> ParamValue {
        let u = u.clamp(0.0, 1.0);
        match &self.domain {
            Domain::Continuous { lo, hi, scale: Scale::Linear } => ParamValue::Real(lo + u * (hi - lo)),
            Domain::Continuous { lo, hi, scale: Scale::Log } => {
                let (a, b) = (lo.ln(), hi.ln());
                ParamValue::Real((a + u * (b - a)).exp().clamp(*lo, *hi))
            }
            Domain::Integer { lo, hi } => ParamValue::Int((*lo as f64 + u * (hi - lo) as f64).round() as i64),
            Domain::Categorical { choices } => ParamValue::Choice(((u * choices.len() as f64) as usize).min(choices.len() - 1)),
        }
    }

    pub fn to_json(&self, v: ParamValue) -> Value {
        match (v, &self.domain) {
            (ParamValue::Real(x), _) => Value::from(x),
            (ParamValue::Int(i), _) => Value::from(i),
            (ParamValue::Choice(c), Domain::Categorical { choices }) => choices[c].clone(),
            (ParamValue::Choice(c), _) => Value::from(c),
        }
    }
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, HpoError> {
        let s = SearchSpace { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        if self.params.is_empty() {
            return Err(HpoError::BadSpace("no parameters".into()));
        }
        for (i, p) in self.params.iter().enumerate() {
            p.validate()?;
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(HpoError::BadSpace(format!("duplicate parameter {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    /// Length of the unit-cube encoding: one slot per numeric dim, one per category.
    pub fn encoded_len(&self) -> usize {
        self.params.iter().map(ParamSpec::width).sum()
    }

    pub fn encode(&self, point: &[ParamValue]) -> Result<Vec<f64>, HpoError> {
        if point.len() != self.params.len() {
            return Err(HpoError::OutOfSpace(format!("expected {} values, got {}", self.params.len(), point.len())));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        for (p, &v) in self.params.iter().zip(point) {
            let oos = || HpoError::OutOfSpace(format!("{} = {v:?}", p.name));
            match (&p.domain, v) {
                (Domain::Continuous { lo, hi, scale }, ParamValue::Real(x)) => {
                    if !(x >= *lo && x <= *hi) {
                        return Err(oos());
                    }
                    out.push(match scale {
                        Scale::Linear => (x - lo) / (hi - lo),
                        Scale::Log => (x.ln() - lo.ln()) / (hi.ln() - lo.ln()),
                    });
                }
                (Domain::Integer { lo, hi }, ParamValue::Int(i)) => {
                    if i < *lo || i > *hi {
                        return Err(oos());
                    }
                    out.push((i - lo) as f64 / (hi - lo) as f64);
                }
                (Domain::Categorical { choices }, ParamValue::Choice(c)) => {
                    if c >= choices.len() {
                        return Err(oos());
                    }
                    out.extend((0..choices.len()).map(|j| if j == c { 1.0 } else { 0.0 }));
                }
                _ => return Err(oos()),
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode); integers round, categoricals take the argmax
    /// (first on ties).
    pub fn decode(&self, v: &[f64]) -> Result<Point, HpoError> {
        if v.len() != self.encoded_len() {
            return Err(HpoError::OutOfSpace(format!("expected {} coordinates, got {}", self.encoded_len(), v.len())));
        }
        let mut at = 0;
        let mut point = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let w = p.width();
            let slot = &v[at..at + w];
            at += w;
            point.push(match &p.domain {
                Domain::Categorical { .. } => {
                    let mut best = 0;
                    for (j, &s) in slot.iter().enumerate() {
                        if s > slot[best] {
                            best = j;
                        }
                    }
                    ParamValue::Choice(best)
                }
                Domain::Continuous { lo, hi, scale } => {
                    let u = slot[0].clamp(0.0, 1.0);
                    ParamValue::Real(match scale {
                        Scale::Linear => (lo + u * (hi - lo)).clamp(*lo, *hi),
                        Scale::Log => (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi),
                    })
                }
                Domain::Integer { .. } => p.from_unit(slot[0]),
            });
        }
        Ok(point)
    }

    /// Maps one latent coordinate per dimension to a point.
    pub fn from_latent(&self, u: &[f64]) -> Point {
        self.params.iter().zip(u).map(|(p, &x)| p.from_unit(x)).collect()
    }

    /// Uniform draw: log-uniform for log dims, uniform integers and choices.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        self.params
            .iter()
            .map(|p| match &p.domain {
                Domain::Continuous { .. } => p.from_unit(rng.random::<f64>()),
                Domain::Integer { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
                Domain::Categorical { choices } => ParamValue::Choice(rng.random_range(0..choices.len())),
            })
            .collect()
    }

    pub fn to_json(&self, point: &[ParamValue]) -> serde_json::Map<String, Value> {
        self.params
            .iter()
            .zip(point)
            .map(|(p, &v)| (p.name.clone(), p.to_json(v)))
            .collect()
    }

    /// Default CNN sweep ranges.
    pub fn default_cnn() -> Self {
        SearchSpace {
            params: vec![
                ParamSpec {
                    name: "train.learning_rate".into(),
                    domain: Domain::Continuous {
                        lo: 1e-5,
                        hi: 10f64.powf(-3.5),
                        scale: Scale::Log,
                    },
                },
                ParamSpec {
                    name: "train.batch_size".into(),
                    domain: Domain::Integer { lo: 2, hi: 16 },
                },
                ParamSpec {
                    name: "model.dropout_rate".into(),
                    domain: Domain::Categorical {
                        choices: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5].into_iter().map(Value::from).collect(),
                    },
                },
            ],
        }
    }
}
