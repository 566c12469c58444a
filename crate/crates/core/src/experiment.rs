//! Training pipeline shared by the command line and the bindings: slot traces
//! in, trained policy out.

use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, window_len, Dataset};
use crate::error::{Error, Result};
use crate::nn::{train, History, ModelSpec, PolicyModel, TrainConfig};
use crate::phy::{LinkBudget, McsTable};
use crate::trace::SlotTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub budget: LinkBudget,
    pub mtxop_slots: Option<usize>,
    /// Slots between consecutive training examples.
    pub stride: usize,
    /// Tail share of each trace's examples held out for validation.
    pub val_fraction: f64,
    /// Hidden widths are divided by this (1 = full network).
    pub width_divisor: usize,
    pub model_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub class_weights: bool,
    pub max_examples_per_epoch: Option<usize>,
    pub max_val_examples: Option<usize>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            budget: LinkBudget::default(),
            mtxop_slots: None,
            stride: 8,
            val_fraction: 0.1,
            width_divisor: 1,
            model_seed: 0,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.lr,
            seed: 0,
            class_weights: false,
            max_examples_per_epoch: Some(16_384),
            max_val_examples: Some(8_192),
        }
    }
}

impl TrainPlan {
    pub fn mtxop(&self, table: &McsTable) -> usize {
        self.mtxop_slots.unwrap_or_else(|| self.budget.mtxop_slots(table))
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            class_weights: self.class_weights,
            max_examples_per_epoch: self.max_examples_per_epoch,
            max_val_examples: self.max_val_examples,
            ..TrainConfig::default()
        };
        cfg.adam.lr = self.learning_rate;
        cfg
    }

    pub fn model_spec(&self, table: &McsTable) -> ModelSpec {
        ModelSpec::scaled(window_len(self.mtxop(table)), self.width_divisor.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub model: PolicyModel<f32>,
    pub history: History,
    pub n_train: usize,
    pub n_val: usize,
}

/// Example sets from several traces (fusion = concatenation in argument
/// order). The last `val_fraction` of each trace's examples is held out.
pub fn training_sets(traces: &[SlotTrace], plan: &TrainPlan, table: &McsTable) -> Result<(Dataset, Dataset)> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("at least one training trace is needed".into()));
    }
    if !(0.0..1.0).contains(&plan.val_fraction) {
        return Err(Error::InvalidArgument("val_fraction must lie in [0, 1)".into()));
    }
    let mtxop = plan.mtxop(table);
    let mut train_parts = Vec::with_capacity(traces.len());
    let mut val_parts = Vec::with_capacity(traces.len());
    for trace in traces {
        let ds = build_dataset(trace, &plan.budget, table, mtxop, plan.stride)?;
        let n_val = (ds.len() as f64 * plan.val_fraction).round() as usize;
        let (a, b) = ds.split_at(ds.len() - n_val);
        train_parts.push(a);
        val_parts.push(b);
    }
    Ok((Dataset::concat(&train_parts)?, Dataset::concat(&val_parts)?))
}

pub fn train_policy(traces: &[SlotTrace], plan: &TrainPlan, table: &McsTable) -> Result<TrainedPolicy> {
    let (train_ds, val_ds) = training_sets(traces, plan, table)?;
    let init = PolicyModel::<f32>::init(plan.model_spec(table), plan.model_seed)?;
    let (model, history) = train(&init, &train_ds, &val_ds, &plan.train_config())?;
    Ok(TrainedPolicy {
        model,
        history,
        n_train: train_ds.len(),
        n_val: val_ds.len(),
    })
}
