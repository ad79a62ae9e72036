use std::fmt::Write;

use super::Phase;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub phase: Phase,
    pub stage: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
    pub seconds: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "phase,stage,epoch,train_loss,valid_loss,valid_accuracy,seconds";

    pub fn train_perplexity(&self) -> f64 {
        self.train_loss.exp()
    }

    pub fn valid_perplexity(&self) -> Option<f64> {
        self.valid_loss.map(f64::exp)
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{},{},{:.3}",
            self.phase.name(),
            self.stage,
            self.epoch,
            self.train_loss,
            opt(self.valid_loss),
            opt(self.valid_accuracy),
            self.seconds
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn push(&mut self, m: EpochMetrics) {
        self.epochs.push(m);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.epochs.extend(other.epochs);
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", EpochMetrics::HEADER).unwrap();
        for e in &self.epochs {
            writeln!(s, "{}", e.csv_line()).unwrap();
        }
        s
    }

    /// Same as [`to_csv`](Self::to_csv) without the wall-clock column, so
    /// that identical runs give identical bytes.
    pub fn to_csv_untimed(&self) -> String {
        let strip = |line: &str| line.rsplit_once(',').map_or(String::new(), |(head, _)| head.to_string());
        let mut s = String::new();
        writeln!(s, "{}", strip(EpochMetrics::HEADER)).unwrap();
        for e in &self.epochs {
            writeln!(s, "{}", strip(&e.csv_line())).unwrap();
        }
        s
    }
}
