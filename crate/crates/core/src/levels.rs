use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LevelError {
    #[error("a level schedule needs at least two thresholds, got {0}")]
    TooFew(usize),
    #[error("thresholds must be strictly increasing (position {0})")]
    NotIncreasing(usize),
    #[error("threshold at position {0} is NaN")]
    NotANumber(usize),
    #[error("{labels} labels given for {levels} thresholds")]
    LabelCount { labels: usize, levels: usize },
}

/// Thresholds `l_0 < l_1 < ... < l_K` of the reaction coordinate.
///
/// Stage `k` (for `k` in `0..K`) starts from states with coordinate at least
/// `l_k` and targets `l_{k+1}`. The top threshold is the failure set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct LevelSchedule {
    thresholds: Vec<f64>,
    labels: Vec<Option<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<String>,
}

impl TryFrom<RawSchedule> for LevelSchedule {
    type Error = LevelError;

    fn try_from(raw: RawSchedule) -> Result<Self, LevelError> {
        if raw.labels.is_empty() {
            Self::new(raw.thresholds)
        } else {
            Self::with_labels(raw.thresholds, raw.labels)
        }
    }
}

impl From<LevelSchedule> for RawSchedule {
    fn from(s: LevelSchedule) -> Self {
        let labels = if s.labels.iter().all(Option::is_none) {
            Vec::new()
        } else {
            s.labels.into_iter().map(Option::unwrap_or_default).collect()
        };
        RawSchedule {
            thresholds: s.thresholds,
            labels,
        }
    }
}

impl LevelSchedule {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, LevelError> {
        Self::check(&thresholds)?;
        let labels = vec![None; thresholds.len()];
        Ok(Self { thresholds, labels })
    }

    pub fn with_labels<S: Into<String>>(
        thresholds: Vec<f64>,
        labels: Vec<S>,
    ) -> Result<Self, LevelError> {
        Self::check(&thresholds)?;
        if labels.len() != thresholds.len() {
            return Err(LevelError::LabelCount {
                labels: labels.len(),
                levels: thresholds.len(),
            });
        }
        Ok(Self {
            thresholds,
            labels: labels.into_iter().map(|l| Some(l.into())).collect(),
        })
    }

    fn check(thresholds: &[f64]) -> Result<(), LevelError> {
        if thresholds.len() < 2 {
            return Err(LevelError::TooFew(thresholds.len()));
        }
        if let Some(i) = thresholds.iter().position(|t| t.is_nan()) {
            return Err(LevelError::NotANumber(i));
        }
        if let Some(i) = thresholds.windows(2).position(|w| w[0] >= w[1]) {
            return Err(LevelError::NotIncreasing(i + 1));
        }
        Ok(())
    }

    /// Resilience phases of the wireless use case:
    /// `0, 0.1, 1, 1.5, 2` with `K = 4`.
    pub fn resilience_default() -> Self {
        Self::with_labels(
            vec![0.0, 0.1, 1.0, 1.5, 2.0],
            vec![
                "nominal",
                "degradation onset",
                "critical affectation",
                "recovery mid-way lost",
                "non-recovery",
            ],
        )
        .expect("static schedule is valid")
    }

    /// Number of stages `K`.
    pub fn stages(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn threshold(&self, level: usize) -> f64 {
        self.thresholds[level]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn label(&self, level: usize) -> Option<&str> {
        self.labels.get(level).and_then(|l| l.as_deref())
    }

    /// Highest level index whose threshold is at or below `value`.
    pub fn level_of(&self, value: f64) -> Option<usize> {
        self.thresholds.iter().rposition(|&t| value >= t)
    }
}

impl Default for LevelSchedule {
    fn default() -> Self {
        Self::resilience_default()
    }
}
