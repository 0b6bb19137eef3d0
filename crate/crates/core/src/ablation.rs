//! Grid over neighbour count and pooling: one model per cell, shared seed
//! and budget, validation and test accuracy per cell.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_windows, Dataset, SampleRecord};
use crate::egnn::{train, EgnnConfig, Pooling};
use crate::error::Result;
use crate::graph::GraphParams;
use crate::nn::{accuracy, TrainConfig};

pub const DEFAULT_KS: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub k: usize,
    pub pooling: Pooling,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub error: Option<String>,
}

pub struct AblationSetup<'a> {
    pub train: (&'a Dataset, &'a [SampleRecord]),
    pub test: Option<(&'a Dataset, &'a [SampleRecord])>,
    pub model: EgnnConfig,
    pub train_cfg: TrainConfig,
    pub theta_act: f64,
    pub stride: usize,
}

fn run_cell(setup: &AblationSetup<'_>, k: usize, pooling: Pooling) -> Result<(f64, Option<f64>)> {
    let graph = GraphParams {
        theta_act: setup.theta_act,
        k,
    };
    let cfg = EgnnConfig {
        pooling,
        ..setup.model
    };
    let (ds, samples) = setup.train;
    let train_set = load_windows(ds, samples, &graph, setup.stride, cfg.length_unit)?;
    let (model, history) = train(cfg, ds.skin.hash(), &train_set, &setup.train_cfg, |m| {
        log::info!("k={k} pooling={pooling} {m:?}")
    })?;
    let val = history.epochs.last().map_or(f64::NAN, |e| e.val_acc);
    let test = match setup.test {
        Some((tds, ts)) => {
            let set = load_windows(tds, ts, &graph, setup.stride, cfg.length_unit)?;
            let refs: Vec<_> = set.iter().map(|(w, c)| (w, *c)).collect();
            Some(accuracy(&model, &refs))
        }
        None => None,
    };
    Ok((val, test))
}

/// Cells run in grid order; a failing cell is recorded and the grid goes on.
pub fn ablation(setup: &AblationSetup<'_>, ks: &[usize], poolings: &[Pooling]) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for &k in ks {
        for &pooling in poolings {
            let cell = match run_cell(setup, k, pooling) {
                Ok((val, test)) => AblationCell {
                    k,
                    pooling,
                    val_acc: Some(val),
                    test_acc: test,
                    error: None,
                },
                Err(e) => {
                    log::warn!("ablation cell k={k} pooling={pooling} failed: {e}");
                    AblationCell {
                        k,
                        pooling,
                        val_acc: None,
                        test_acc: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            cells.push(cell);
        }
    }
    cells
}

/// `k,pooling,val_acc,test_acc`; missing values are written as `nan`.
pub fn cells_to_csv(cells: &[AblationCell]) -> String {
    let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut out = String::from("k,pooling,val_acc,test_acc\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{},{}", c.k, c.pooling, f(c.val_acc), f(c.test_acc));
    }
    out
}
