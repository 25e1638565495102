//! Online checkpoint selection by a weighted overall score.
//!
//! Each metric value is normalized by the best value seen for that metric so
//! far, and the weighted sum of the normalized values is the overall score of
//! a checkpoint. After every validation pass the bests are updated first,
//! then the current checkpoint and the champion are both scored against the
//! updated bests; the current checkpoint becomes champion when its score is
//! strictly higher.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// A quantity the selector can track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "B4")]
    Bleu4,
    #[serde(rename = "C")]
    Cider,
    #[serde(rename = "M")]
    Meteor,
    #[serde(rename = "R")]
    RougeL,
    /// Negated mean validation cross entropy.
    #[serde(rename = "neg_loss")]
    NegValidationLoss,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bleu4 => "B4",
            MetricKind::Cider => "C",
            MetricKind::Meteor => "M",
            MetricKind::RougeL => "R",
            MetricKind::NegValidationLoss => "neg_loss",
        }
    }

    pub fn read(self, report: &MetricReport, validation_loss: f64) -> f64 {
        match self {
            MetricKind::Bleu4 => report.bleu4,
            MetricKind::Cider => report.cider,
            MetricKind::Meteor => report.meteor,
            MetricKind::RougeL => report.rouge_l,
            MetricKind::NegValidationLoss => -validation_loss,
        }
    }
}

/// Metrics and weights of a selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub metrics: Vec<MetricKind>,
    pub weights: Vec<f64>,
    /// Optional per-metric bests carried over from an earlier run.
    #[serde(default)]
    pub warm_bests: Option<Vec<f64>>,
}

impl Default for SelectionConfig {
    /// B4, CIDEr, METEOR and ROUGE-L with weight 0.25 each.
    fn default() -> Self {
        SelectionConfig {
            metrics: vec![MetricKind::Bleu4, MetricKind::Cider, MetricKind::Meteor, MetricKind::RougeL],
            weights: vec![0.25; 4],
            warm_bests: None,
        }
    }
}

impl SelectionConfig {
    pub fn single(metric: MetricKind) -> Self {
        SelectionConfig {
            metrics: vec![metric],
            weights: vec![1.0],
            warm_bests: None,
        }
    }

    /// Selection by validation cross entropy alone.
    pub fn loss_only() -> Self {
        Self::single(MetricKind::NegValidationLoss)
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() || self.metrics.len() != self.weights.len() {
            return Err(Error::Config("selection needs one weight per metric".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("selection weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("selection weights must sum to 1, got {total}")));
        }
        if let Some(b) = &self.warm_bests {
            if b.len() != self.metrics.len() || b.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config("warm bests must give one finite value per metric".into()));
            }
        }
        Ok(())
    }
}

/// `Σ wᵢ·vᵢ/|bᵢ|`; for positive bests this is the plain weighted ratio sum.
pub fn overall_score(values: &[f64], bests: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != bests.len() || values.len() != weights.len() {
        return Err(Error::dim("overall_score", &[values.len(), bests.len()], &[weights.len()]));
    }
    if let Some(b) = bests.iter().find(|b| !b.is_finite() || **b == 0.0) {
        return Err(Error::Domain(format!("metric best must be finite and non-zero, got {b}")));
    }
    Ok(values
        .iter()
        .zip(bests)
        .zip(weights)
        .map(|((v, b), w)| w * v / b.abs())
        .sum())
}

/// Normalized value; a best of exactly zero can only be tied (ratio 1) by a
/// non-negative metric.
fn ratio(v: f64, b: f64) -> f64 {
    if b != 0.0 {
        v / b.abs()
    } else if v == 0.0 {
        1.0
    } else {
        v
    }
}

fn score(values: &[f64], bests: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(bests)
        .zip(weights)
        .map(|((&v, &b), w)| w * ratio(v, b))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    SaveChampion,
    Skip,
    /// The report contained a non-finite value and was ignored.
    Rejected,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::SaveChampion => "save",
            Decision::Skip => "skip",
            Decision::Rejected => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub values: Vec<f64>,
    pub overall: f64,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Champion {
    pub epoch: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub config: SelectionConfig,
    /// Running best per metric; `None` until first observed.
    pub bests: Vec<Option<f64>>,
    /// Champion's overall score against the current bests.
    pub best_overall: Option<f64>,
    pub champion: Option<Champion>,
    pub history: Vec<HistoryEntry>,
    pub rejected: usize,
}

impl SelectionState {
    pub fn new(config: SelectionConfig) -> Result<Self> {
        config.validate()?;
        let bests = match &config.warm_bests {
            Some(b) => b.iter().copied().map(Some).collect(),
            None => vec![None; config.metrics.len()],
        };
        Ok(SelectionState {
            config,
            bests,
            best_overall: None,
            champion: None,
            history: Vec::new(),
            rejected: 0,
        })
    }

    pub fn metric_names(&self) -> Vec<&'static str> {
        self.config.metrics.iter().map(|m| m.name()).collect()
    }

    /// Values of `report` for the configured metrics.
    pub fn values_of(&self, report: &MetricReport, validation_loss: f64) -> Vec<f64> {
        self.config
            .metrics
            .iter()
            .map(|m| m.read(report, validation_loss))
            .collect()
    }

    pub fn observe_report(&mut self, report: &MetricReport, validation_loss: f64, epoch: usize) -> Result<Decision> {
        let values = self.values_of(report, validation_loss);
        self.observe(&values, epoch)
    }

    /// Records one validation pass and decides whether it becomes champion.
    pub fn observe(&mut self, values: &[f64], epoch: usize) -> Result<Decision> {
        if values.len() != self.config.metrics.len() {
            return Err(Error::dim("observe", &[values.len()], &[self.config.metrics.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            log::warn!("epoch {epoch}: non-finite metric values {values:?}; epoch ignored for selection");
            self.rejected += 1;
            return Ok(Decision::Rejected);
        }
        for (b, &v) in self.bests.iter_mut().zip(values) {
            *b = Some(b.map_or(v, |old| old.max(v)));
        }
        let bests: Vec<f64> = self.bests.iter().map(|b| b.expect("set above")).collect();
        let w = &self.config.weights;
        let current = score(values, &bests, w);
        let incumbent = self.champion.as_ref().map(|c| score(&c.values, &bests, w));
        let decision = match incumbent {
            Some(o_b) if current <= o_b => {
                self.best_overall = Some(o_b);
                Decision::Skip
            }
            _ => {
                self.champion = Some(Champion {
                    epoch,
                    values: values.to_vec(),
                });
                self.best_overall = Some(current);
                Decision::SaveChampion
            }
        };
        self.history.push(HistoryEntry {
            epoch,
            values: values.to_vec(),
            overall: current,
            decision,
        });
        Ok(decision)
    }

    pub fn champion_epoch(&self) -> Option<usize> {
        self.champion.as_ref().map(|c| c.epoch)
    }

    /// Tab-separated history with a header line.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("epoch");
        for name in self.metric_names() {
            out.push('\t');
            out.push_str(name);
        }
        out.push_str("\toverall\tdecision\n");
        for h in &self.history {
            let _ = write!(out, "{}", h.epoch);
            for v in &h.values {
                let _ = write!(out, "\t{v:.6}");
            }
            let _ = writeln!(out, "\t{:.6}\t{}", h.overall, h.decision.as_str());
        }
        out
    }
}
