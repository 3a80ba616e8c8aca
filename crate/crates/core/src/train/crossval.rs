use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_case, format_table, write_reports_csv, MetricsReport};
use crate::seed;

use super::{predict_volume, train, Case, TrainOutputs};

pub struct FoldResult {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub reports: Vec<MetricsReport>,
    pub epoch_means: Vec<f64>,
}

pub struct CrossvalResult {
    pub folds: Vec<FoldResult>,
    /// Every held-out case, in fold order.
    pub pooled: Vec<MetricsReport>,
}

impl CrossvalResult {
    pub fn table(&self) -> String {
        let mut rows: Vec<_> = self.folds.iter().map(|f| (format!("fold {}", f.fold), aggregate(&f.reports))).collect();
        rows.push(("pooled".to_string(), aggregate(&self.pooled)));
        format_table(&rows)
    }
}

/// Trains on all folds but one and evaluates the held-out fold, for every
/// fold. `folds[i]` is the fold of `cases[i]`. Each fold trains from its own
/// derived seed so fold results do not depend on the order folds are run.
pub fn crossval(cfg: &TrainConfig, cases: &[Case], folds: &[usize], out_dir: Option<&Path>) -> Result<CrossvalResult> {
    if folds.len() != cases.len() {
        return Err(Error::Argument(format!("{} fold labels for {} cases", folds.len(), cases.len())));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    let mut result = CrossvalResult { folds: Vec::new(), pooled: Vec::new() };
    for fold in 0..k {
        let (mut train_set, mut test_set) = (Vec::new(), Vec::new());
        for (c, &f) in cases.iter().zip(folds) {
            if f == fold { test_set.push(c.clone()) } else { train_set.push(c.clone()) }
        }
        if test_set.is_empty() || train_set.is_empty() {
            return Err(Error::Argument(format!("fold {fold} leaves an empty train or test set")));
        }
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = seed::derive_str(cfg.seed, "fold", &[fold as u64]);
        let fold_dir = out_dir.map(|d| d.join(format!("fold_{fold}")));
        let outputs = fold_dir.as_deref().map(|d| TrainOutputs::in_dir(d, &fold_cfg)).unwrap_or_default();
        log::info!("fold {fold}: training on {} cases, testing on {}", train_set.len(), test_set.len());
        let outcome = train(&fold_cfg, &train_set, &outputs, None)?;
        let mut reports = Vec::with_capacity(test_set.len());
        for c in &test_set {
            let pred = predict_volume(&outcome.model, &c.volume, cfg.train.threshold, false)?;
            reports.push(evaluate_case(c.id(), &pred.mask, &c.mask)?);
        }
        if let Some(d) = &fold_dir {
            write_reports_csv(d.join("metrics.csv"), &reports)?;
        }
        result.pooled.extend(reports.iter().cloned());
        result.folds.push(FoldResult {
            fold,
            train_ids: train_set.iter().map(|c| c.id().to_string()).collect(),
            reports,
            epoch_means: outcome.epoch_means,
        });
    }
    if let Some(d) = out_dir {
        write_reports_csv(d.join("metrics_pooled.csv"), &result.pooled)?;
        let path = d.join("summary.txt");
        fs::write(&path, result.table()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}
