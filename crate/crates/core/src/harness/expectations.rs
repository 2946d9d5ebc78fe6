use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{Metrics, MetricsReport};

const TEXT8: &str = include_str!("../../expectations/text8.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    #[default]
    Band,
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub model: String,
    pub steps: Option<usize>,
    pub metric: String,
    #[serde(default)]
    pub kind: CheckKind,
    pub value: f64,
    #[serde(default)]
    pub tolerance: f64,
}

impl Check {
    pub fn passes(&self, observed: f64) -> bool {
        match self.kind {
            CheckKind::Band => (observed - self.value).abs() <= self.tolerance,
            CheckKind::AtLeast => observed >= self.value,
            CheckKind::AtMost => observed <= self.value,
        }
    }

    pub fn describe(&self) -> String {
        let at = self.steps.map(|s| format!(" S={s}")).unwrap_or_default();
        let rule = match self.kind {
            CheckKind::Band => format!("{} ± {}", self.value, self.tolerance),
            CheckKind::AtLeast => format!(">= {}", self.value),
            CheckKind::AtMost => format!("<= {}", self.value),
        };
        format!("{}{at} {} {rule}", self.model, self.metric)
    }

    /// First report with matching model and steps.
    pub fn find<'a>(&self, reports: &'a [MetricsReport]) -> Option<&'a MetricsReport> {
        reports
            .iter()
            .find(|r| r.model == self.model && (self.steps.is_none() || r.steps == self.steps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub dataset: String,
    pub length: usize,
    pub count: usize,
    pub check: Vec<Check>,
}

impl Expectations {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let e: Self = toml::from_str(text).map_err(|e| HarnessError::Input(e.to_string()))?;
        for c in &e.check {
            if metric_value(&dummy(), &c.metric).is_none() {
                return Err(HarnessError::Input(format!("unknown metric {:?}", c.metric)));
            }
        }
        Ok(e)
    }

    /// The checked-in character-level reference table.
    pub fn text8() -> Self {
        Self::parse(TEXT8).expect("bundled expectations parse")
    }
}

fn dummy() -> Metrics {
    Metrics {
        nll_rate: 0.0,
        kl_rate: 0.0,
        tv_rate: 0.0,
        entropy_rate: 0.0,
        unigram_l1: 0.0,
        diversity_2gram: 0.0,
        diversity_3gram: 0.0,
        duplication_rate: 0.0,
        other_mass: 0.0,
        support_fraction: 0.0,
    }
}

/// Looks a metric up by its field name.
pub fn metric_value(m: &Metrics, name: &str) -> Option<f64> {
    Some(match name {
        "nll_rate" => m.nll_rate,
        "kl_rate" => m.kl_rate,
        "tv_rate" => m.tv_rate,
        "entropy_rate" => m.entropy_rate,
        "unigram_l1" => m.unigram_l1,
        "diversity_2gram" => m.diversity_2gram,
        "diversity_3gram" => m.diversity_3gram,
        "duplication_rate" => m.duplication_rate,
        "other_mass" => m.other_mass,
        "support_fraction" => m.support_fraction,
        _ => return None,
    })
}
