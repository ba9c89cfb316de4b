use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("context dim `{0}`: discrete dims need exactly two distinct finite settings")]
    BadSettings(String),
    #[error("context dim `{0}`: uniform dims need finite low < high")]
    BadRange(String),
    #[error("context spec has no dims")]
    Empty,
    #[error("unknown bundled context spec `{0}`")]
    UnknownBundle(String),
    #[error("context spec parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("context vector {values:?} does not match spec `{spec}`")]
    OutOfRange { spec: String, values: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Discrete,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDim {
    pub name: String,
    pub kind: ContextKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub settings: Vec<f64>,
}

impl ContextDim {
    /// Closed interval covering the dim: the two settings for discrete dims.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            ContextKind::Discrete => {
                let (a, b) = (self.settings[0], self.settings[1]);
                (a.min(b), a.max(b))
            }
            ContextKind::Uniform => (self.low.unwrap_or(0.0), self.high.unwrap_or(0.0)),
        }
    }

    fn validate(&self) -> Result<(), SpecError> {
        match self.kind {
            ContextKind::Discrete => {
                let ok = self.settings.len() == 2
                    && self.settings.iter().all(|v| v.is_finite())
                    && self.settings[0] != self.settings[1];
                if !ok {
                    return Err(SpecError::BadSettings(self.name.clone()));
                }
            }
            ContextKind::Uniform => match (self.low, self.high) {
                (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => {}
                _ => return Err(SpecError::BadRange(self.name.clone())),
            },
        }
        Ok(())
    }
}

/// Declarative description of a context space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub name: String,
    pub dims: Vec<ContextDim>,
}

/// One point in a context space, fixed for a whole episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("linerunner_dir", include_str!("../../specs/linerunner_dir.json")),
    ("linerunner_vel", include_str!("../../specs/linerunner_vel.json")),
    ("ballbounce32", include_str!("../../specs/ballbounce32.json")),
];

impl ContextSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let spec: ContextSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn bundled(name: &str) -> Result<Self, SpecError> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| SpecError::UnknownBundle(name.to_string()))?;
        Self::from_json(text)
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("context spec serializes")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.dims.is_empty() {
            return Err(SpecError::Empty);
        }
        self.dims.iter().try_for_each(ContextDim::validate)
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Training-time draw: one of the two settings for discrete dims, `U(low, high)` otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextVector {
        ContextVector(
            self.dims
                .iter()
                .map(|d| match d.kind {
                    ContextKind::Discrete => d.settings[rng.random_range(0..2)],
                    ContextKind::Uniform => {
                        let (lo, hi) = d.bounds();
                        rng.random_range(lo..hi)
                    }
                })
                .collect(),
        )
    }

    /// Novel-task draw: every dim uniform over its interval, so discrete dims
    /// take values between their two settings.
    pub fn sample_heldout<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextVector {
        ContextVector(
            self.dims
                .iter()
                .map(|d| {
                    let (lo, hi) = d.bounds();
                    rng.random_range(lo..hi)
                })
                .collect(),
        )
    }

    /// Every combination of discrete settings, in binary order with the first
    /// dim varying slowest. `None` if any dim is continuous.
    pub fn combinations(&self) -> Option<Vec<ContextVector>> {
        if self.dims.iter().any(|d| d.kind != ContextKind::Discrete) {
            return None;
        }
        let n = self.dims.len();
        Some(
            (0..1usize << n)
                .map(|mask| {
                    ContextVector(
                        self.dims
                            .iter()
                            .enumerate()
                            .map(|(i, d)| d.settings[(mask >> (n - 1 - i)) & 1])
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn contains(&self, c: &ContextVector) -> bool {
        c.0.len() == self.dims.len()
            && self.dims.iter().zip(&c.0).all(|(d, &v)| {
                let (lo, hi) = d.bounds();
                v.is_finite() && v >= lo && v <= hi
            })
    }

    pub fn check(&self, c: &ContextVector) -> Result<(), SpecError> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(SpecError::OutOfRange {
                spec: self.name.clone(),
                values: c.0.clone(),
            })
        }
    }
}
