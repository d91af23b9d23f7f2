//! Grid search over (network, learning rate, epoch budget).
//!
//! By default each (network, learning rate) pair is trained once at the
//! largest budget and every smaller budget reads the validation accuracy
//! and checkpoint recorded after that many epochs; this yields the same
//! cells as retraining per budget, since a run's first k epochs do not
//! depend on how many epochs follow. `exact_retraining` trains every cell
//! from scratch instead.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::DatasetSplit;
use crate::nets::{Checkpoint, NetworkSpec};

use super::train::{train_classifier, TrainConfig};
use super::{Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    pub specs: Vec<NetworkSpec>,
    pub learning_rates: Vec<f64>,
    pub epoch_budgets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: String,
    pub spec_index: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub val_accuracy: f64,
}

/// Ordering under which the best cell is the maximum: higher accuracy, then
/// fewer epochs, then larger learning rate, then earlier spec.
fn preference(a: &GridCell, b: &GridCell) -> Ordering {
    a.val_accuracy
        .total_cmp(&b.val_accuracy)
        .then(b.epochs.cmp(&a.epochs))
        .then(a.learning_rate.total_cmp(&b.learning_rate))
        .then(b.spec_index.cmp(&a.spec_index))
}

pub fn select_best(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().max_by(|a, b| preference(a, b))
}

/// Accuracy of every cell, ordered by spec, then learning rate, then budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub models: Vec<String>,
    pub learning_rates: Vec<f64>,
    pub epoch_budgets: Vec<usize>,
    pub cells: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub models: Vec<String>,
    pub learning_rates: Vec<f64>,
    pub epoch_budgets: Vec<usize>,
    pub cell_count: usize,
    pub best: GridCell,
}

impl GridReport {
    pub fn best(&self) -> Option<&GridCell> {
        select_best(&self.cells)
    }

    pub fn cell(&self, spec_index: usize, lr_index: usize, budget_index: usize) -> &GridCell {
        let per_spec = self.learning_rates.len() * self.epoch_budgets.len();
        &self.cells[spec_index * per_spec + lr_index * self.epoch_budgets.len() + budget_index]
    }

    /// One row per (model, learning rate), one column per epoch budget.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,learning_rate");
        for e in &self.epoch_budgets {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
        for (s, model) in self.models.iter().enumerate() {
            for (l, lr) in self.learning_rates.iter().enumerate() {
                let _ = write!(out, "{model},{lr:e}");
                for b in 0..self.epoch_budgets.len() {
                    let _ = write!(out, ",{}", self.cell(s, l, b).val_accuracy);
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the layout written by [`GridReport::to_csv`]. Rows of one
    /// model must list the same learning rates in the same order.
    pub fn from_csv(text: &str) -> Result<GridReport> {
        let bad = |m: String| TrainError::Table(m);
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "model" || &header[1] != "learning_rate" {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let epoch_budgets = header
            .iter()
            .skip(2)
            .map(|h| {
                h.parse::<usize>()
                    .map_err(|_| bad(format!("epoch column {h:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut models: Vec<String> = Vec::new();
        let mut rows: Vec<(String, f64, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let model = record[0].to_string();
            let lr: f64 = record[1]
                .parse()
                .map_err(|_| bad(format!("learning rate {:?}", &record[1])))?;
            let accs = record
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("accuracy {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if !models.contains(&model) {
                models.push(model.clone());
            }
            rows.push((model, lr, accs));
        }
        let learning_rates: Vec<f64> = rows
            .iter()
            .filter(|r| r.0 == models[0])
            .map(|r| r.1)
            .collect();
        let mut cells = Vec::new();
        for (s, model) in models.iter().enumerate() {
            let mine: Vec<_> = rows.iter().filter(|r| &r.0 == model).collect();
            if mine.iter().map(|r| r.1).collect::<Vec<_>>() != learning_rates {
                return Err(bad(format!("model {model} lists different learning rates")));
            }
            for (_, lr, accs) in mine {
                for (&epochs, &val_accuracy) in epoch_budgets.iter().zip(accs) {
                    cells.push(GridCell {
                        model: model.clone(),
                        spec_index: s,
                        learning_rate: *lr,
                        epochs,
                        val_accuracy,
                    });
                }
            }
        }
        if models.is_empty() {
            return Err(bad("no rows".into()));
        }
        Ok(GridReport {
            models,
            learning_rates,
            epoch_budgets,
            cells,
        })
    }

    pub fn summary(&self) -> Option<GridSummary> {
        Some(GridSummary {
            models: self.models.clone(),
            learning_rates: self.learning_rates.clone(),
            epoch_budgets: self.epoch_budgets.clone(),
            cell_count: self.cells.len(),
            best: self.best()?.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub report: GridReport,
    pub best: GridCell,
    pub best_spec: NetworkSpec,
    pub best_checkpoint: Checkpoint,
    /// Per-epoch training loss of the run that produced the best cell.
    pub best_loss_curve: Vec<f64>,
}

fn model_labels(specs: &[NetworkSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = s.family.name();
            if specs.iter().filter(|o| o.family == s.family).count() > 1 {
                format!("{name}#{i}")
            } else {
                name.to_string()
            }
        })
        .collect()
}

/// Trains every grid cell and selects the best by validation accuracy.
pub fn grid_search(
    split: &DatasetSplit,
    axes: &GridAxes,
    base: &TrainConfig,
    exact_retraining: bool,
) -> Result<GridOutcome> {
    if axes.specs.is_empty() || axes.learning_rates.is_empty() || axes.epoch_budgets.is_empty() {
        return Err(TrainError::Config("grid axes must be nonempty".into()));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptyPartition("validation"));
    }
    let models = model_labels(&axes.specs);
    let max_budget = *axes.epoch_budgets.iter().max().expect("nonempty");
    let mut cells = Vec::new();
    let mut best: Option<(GridCell, Checkpoint, Vec<f64>)> = None;
    for (s, spec) in axes.specs.iter().enumerate() {
        for &lr in &axes.learning_rates {
            let annotate = |epochs: usize| {
                let model = models[s].clone();
                move |e: TrainError| TrainError::Cell {
                    model,
                    learning_rate: lr,
                    epochs,
                    source: Box::new(e),
                }
            };
            let mut runs = Vec::new();
            if exact_retraining {
                for &budget in &axes.epoch_budgets {
                    let cfg = TrainConfig {
                        learning_rate: lr,
                        epochs: budget,
                        snapshot_epochs: Vec::new(),
                        ..base.clone()
                    };
                    let r = train_classifier(split, spec, &cfg).map_err(annotate(budget))?;
                    let acc = r.val_accuracy_curve[budget - 1];
                    runs.push((budget, acc, r.checkpoint, r.loss_curve));
                }
            } else {
                let cfg = TrainConfig {
                    learning_rate: lr,
                    epochs: max_budget,
                    snapshot_epochs: axes.epoch_budgets.clone(),
                    ..base.clone()
                };
                let r = train_classifier(split, spec, &cfg).map_err(annotate(max_budget))?;
                for &budget in &axes.epoch_budgets {
                    let acc = r.val_accuracy_curve[budget - 1];
                    let ckpt = r.snapshots[&budget].clone();
                    runs.push((budget, acc, ckpt, r.loss_curve[..budget].to_vec()));
                }
            }
            for (budget, acc, ckpt, curve) in runs {
                let cell = GridCell {
                    model: models[s].clone(),
                    spec_index: s,
                    learning_rate: lr,
                    epochs: budget,
                    val_accuracy: acc,
                };
                log::info!(
                    "grid {} lr {lr:e} epochs {budget}: val accuracy {acc:.4}",
                    cell.model
                );
                let better = best
                    .as_ref()
                    .is_none_or(|(b, _, _)| preference(&cell, b) == Ordering::Greater);
                if better {
                    best = Some((cell.clone(), ckpt, curve));
                }
                cells.push(cell);
            }
        }
    }
    let (best, best_checkpoint, best_loss_curve) = best.expect("at least one cell");
    Ok(GridOutcome {
        report: GridReport {
            models,
            learning_rates: axes.learning_rates.clone(),
            epoch_budgets: axes.epoch_budgets.clone(),
            cells,
        },
        best_spec: axes.specs[best.spec_index].clone(),
        best,
        best_checkpoint,
        best_loss_curve,
    })
}
