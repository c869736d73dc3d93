//! Training diagnostics: per-interval rows and the CSV sink.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Result, TrainError};

pub const DIAG_HEADER: &str = "images_seen,critic_loss,d_bce,grad_mag,label_ce_real,label_ce_fake";

/// One diagnostics row: the Wasserstein critic loss, the monitored
/// discriminator binary cross-entropy, the mean interpolate gradient
/// magnitude, and the label cross-entropies on real and generated batches.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub images_seen: u64,
    pub critic_loss: f64,
    pub d_bce: f64,
    pub grad_mag: f64,
    pub label_ce_real: f64,
    pub label_ce_fake: f64,
}

impl DiagnosticsRow {
    /// Rows with any non-finite entry are flagged rather than trusted.
    pub fn is_flagged(&self) -> bool {
        ![self.critic_loss, self.d_bce, self.grad_mag, self.label_ce_real, self.label_ce_fake]
            .iter()
            .all(|v| v.is_finite())
    }

    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.images_seen,
            self.critic_loss,
            self.d_bce,
            self.grad_mag,
            self.label_ce_real,
            self.label_ce_fake
        )
    }
}

/// Append-oriented CSV writer; writes the header only on fresh files.
pub struct DiagnosticsWriter {
    out: BufWriter<std::fs::File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> Result<DiagnosticsWriter> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{DIAG_HEADER}")?;
        out.flush()?;
        Ok(DiagnosticsWriter { out })
    }

    pub fn append(path: &Path) -> Result<DiagnosticsWriter> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(DiagnosticsWriter { out: BufWriter::new(file) })
    }

    pub fn write_row(&mut self, row: &DiagnosticsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv_line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parse a diagnostics CSV back into rows.
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == DIAG_HEADER => {}
        other => {
            return Err(TrainError::Checkpoint(format!(
                "{}: unexpected diagnostics header {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(TrainError::Checkpoint(format!(
                "{}: line {} has {} fields",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| TrainError::Checkpoint(e.to_string()));
        rows.push(DiagnosticsRow {
            images_seen: fields[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| TrainError::Checkpoint(e.to_string()))?,
            critic_loss: parse(fields[1])?,
            d_bce: parse(fields[2])?,
            grad_mag: parse(fields[3])?,
            label_ce_real: parse(fields[4])?,
            label_ce_fake: parse(fields[5])?,
        });
    }
    Ok(rows)
}

/// Monitored discriminator binary cross-entropy: sigmoid is applied
/// to raw critic scores and probabilities are clamped away from {0, 1}.
/// This is a diagnostic, not a trained loss.
pub fn monitored_bce(real_scores: &[f32], fake_scores: &[f32]) -> f64 {
    const CLAMP: f64 = 1e-7;
    let sig = |s: f32| 1.0 / (1.0 + (-s as f64).exp());
    let mean_real: f64 = real_scores
        .iter()
        .map(|&s| sig(s).clamp(CLAMP, 1.0 - CLAMP).ln())
        .sum::<f64>()
        / real_scores.len() as f64;
    let mean_fake: f64 = fake_scores
        .iter()
        .map(|&s| (1.0 - sig(s)).clamp(CLAMP, 1.0 - CLAMP).ln())
        .sum::<f64>()
        / fake_scores.len() as f64;
    mean_real + mean_fake
}
