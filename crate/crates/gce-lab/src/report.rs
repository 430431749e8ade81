//! Robustness reports: one row per (model, attack, budget) cell.
//!
//! CSV is the source of truth; the aligned text table is a rendering of
//! the same rows. Every report header pins the config hash, seed, and
//! dataset checksum that produced it, so a report can be regenerated
//! bit-for-bit.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model_id: String,
    pub loss_kind: String,
    /// Guiding exponent of the model's training loss, if meaningful.
    pub alpha: Option<f64>,
    /// `clean` for the no-attack row.
    pub attack: String,
    /// Budget description, e.g. `eps=0.2` or `gamma=0.25`.
    pub budget: String,
    pub status: CellStatus,
    pub accuracy_pct: f64,
    pub mean_l2: f64,
    pub samples: usize,
    pub seed: u64,
    pub dataset_sha: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == CellStatus::Failed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed);
        out.push_str(
            "model_id,loss_kind,alpha,attack,budget,status,accuracy_pct,mean_l2,samples,seed,dataset_sha\n",
        );
        for r in &self.rows {
            let alpha = r.alpha.map(|a| format!("{a}")).unwrap_or_default();
            let (acc, l2) = match r.status {
                CellStatus::Ok => (format!("{:.2}", r.accuracy_pct), format!("{:.6}", r.mean_l2)),
                CellStatus::Failed => (String::new(), String::new()),
            };
            let status = match r.status {
                CellStatus::Ok => "ok",
                CellStatus::Failed => "failed",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.model_id,
                r.loss_kind,
                alpha,
                r.attack,
                r.budget,
                status,
                acc,
                l2,
                r.samples,
                r.seed,
                r.dataset_sha
            );
        }
        out
    }

    /// Aligned text rendering of the CSV rows.
    pub fn to_table(&self) -> String {
        let header = ["model", "loss", "attack", "budget", "acc%", "mean_l2", "n"];
        let mut cells: Vec<[String; 7]> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            cells.push([
                r.model_id.clone(),
                r.loss_kind.clone(),
                r.attack.clone(),
                r.budget.clone(),
                match r.status {
                    CellStatus::Ok => format!("{:.2}", r.accuracy_pct),
                    CellStatus::Failed => "failed".into(),
                },
                match r.status {
                    CellStatus::Ok => format!("{:.4}", r.mean_l2),
                    CellStatus::Failed => "-".into(),
                },
                r.samples.to_string(),
            ]);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for (w, h) in widths.iter().zip(header) {
            let _ = write!(out, "{h:<w$}  ");
        }
        out.push('\n');
        for row in &cells {
            for (w, c) in widths.iter().zip(row) {
                let _ = write!(out, "{c:<w$}  ");
            }
            out.push('\n');
        }
        out
    }
}
