use std::fmt::Write;

/// Outcome of one (fraction, repeat) run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub fraction: f64,
    pub repeat: usize,
    pub seed: u64,
    pub n_train: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub test_checksum: String,
}

/// Repeat-averaged results for one training fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitRow {
    pub fraction: f64,
    pub n_train: usize,
    pub repeats: usize,
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    /// Relative to the full-data mean accuracy; `None` when that row is missing.
    pub degradation_pct: Option<f64>,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DegradationReport {
    pub rows: Vec<SplitRow>,
    /// Mean accuracy of the fraction-1.0 row.
    pub metric_full: Option<f64>,
    pub test_checksum: String,
    pub base_seed: u64,
    /// Configuration snapshot written as `# key=value` lines.
    pub config: Vec<(String, String)>,
}

impl DegradationReport {
    pub const CSV_HEADER: &'static str = "fraction,n_train,repeats,mean_accuracy,mean_loss,degradation_pct";

    pub fn metric_reduced(&self, fraction: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.fraction == fraction)
            .map(|r| r.mean_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# base_seed={}", self.base_seed).unwrap();
        writeln!(s, "# test_checksum={}", self.test_checksum).unwrap();
        for (k, v) in &self.config {
            writeln!(s, "# {k}={v}").unwrap();
        }
        writeln!(s, "{}", Self::CSV_HEADER).unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:.6},{:.6},{}",
                r.fraction,
                r.n_train,
                r.repeats,
                r.mean_accuracy,
                r.mean_loss,
                r.degradation_pct.map(|d| format!("{d:.4}")).unwrap_or_default()
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let header = ["Split", "n_train", "Accuracy (%)", "Min", "Max", "Loss", "Degradation (%)"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    format!("{:.0}%", r.fraction * 100.0),
                    r.n_train.to_string(),
                    format!("{:.2}", 100.0 * r.mean_accuracy),
                    format!("{:.2}", 100.0 * r.min_accuracy),
                    format!("{:.2}", 100.0 * r.max_accuracy),
                    format!("{:.4}", r.mean_loss),
                    r.degradation_pct.map(|d| format!("{d:.2}")).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap())
            .collect();
        let mut s = String::new();
        let line = |s: &mut String, cells: Vec<&str>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(s, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&mut s, header.to_vec());
        writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))).unwrap();
        for row in &body {
            line(&mut s, row.iter().map(String::as_str).collect());
        }
        s
    }
}
