//! Model-kind dispatch shared by `train` and `sweep`.

use dmf_core::baselines::{bpr_epoch, central_loss, mf_epoch, CentralModel, CentralParams};
use dmf_core::checkpoint::{Checkpoint, CheckpointBody, ModelKind};
use dmf_core::dataio::{Dataset, Rating};
use dmf_core::dmf::{EpochStats, HyperParams, Trainer};
use dmf_core::eval::RunLabels;
use dmf_core::geograph::AdjacencyGraph;
use dmf_core::simbus::{cost_report, CostMeter, CostReport};
use serde::Serialize;

use crate::error::Result;

/// Everything a run needs besides the data.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kind: ModelKind,
    /// Already rewritten by [`ModelKind::configure`].
    pub dmf: HyperParams<f64>,
    pub central: CentralParams<f64>,
}

impl RunSpec {
    pub fn labels(&self) -> RunLabels {
        if self.kind.is_decentralized() {
            RunLabels {
                model: self.kind.to_string(),
                k: self.dmf.k,
                d: self.dmf.walk.max_distance,
                beta: self.dmf.beta,
                gamma: self.dmf.gamma,
            }
        } else {
            RunLabels { model: self.kind.to_string(), k: self.central.k, d: 0, beta: 0.0, gamma: 0.0 }
        }
    }

    pub fn epochs(&self) -> usize {
        if self.kind.is_decentralized() {
            self.dmf.epochs
        } else {
            self.central.epochs
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub model_kind: ModelKind,
    pub epochs: usize,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub communication: CostReport,
}

pub struct RunOutput {
    pub checkpoint: Checkpoint<f64>,
    pub stats: Vec<EpochStats>,
    pub report: TrainReport,
}

/// Trains `spec` on `dataset`, calling `on_epoch` with the checkpoint after
/// every epoch for which `keep(epoch)` holds.
pub fn run(
    dataset: &Dataset,
    graph: Option<&AdjacencyGraph<f64>>,
    spec: &RunSpec,
    keep: impl Fn(usize) -> bool,
    mut on_epoch: impl FnMut(&Checkpoint<f64>) -> Result<()>,
) -> Result<RunOutput> {
    let (checkpoint, stats, initial, meter) = if spec.kind.is_decentralized() {
        let hp = &spec.dmf;
        let graph = if hp.walk.max_distance > 0 { graph } else { None };
        let mut trainer = Trainer::new(dataset, graph, hp)?;
        for epoch in 1..=hp.epochs {
            trainer.run_epoch(&mut ())?;
            if keep(epoch) {
                on_epoch(&Checkpoint::decentralized(spec.kind, epoch, hp.clone(), trainer.states().to_vec()))?;
            }
        }
        let outcome = trainer.finish();
        let meter = outcome.bus.meter().clone();
        let ckpt = Checkpoint::decentralized(spec.kind, hp.epochs, hp.clone(), outcome.states);
        (ckpt, outcome.stats, outcome.initial_train_loss, meter)
    } else {
        let hp = &spec.central;
        hp.validate()?;
        let mut model = CentralModel::random(dataset.n_users(), dataset.n_items(), hp.k, hp.seed);
        let initial = central_loss(&model, &dataset.train, hp.lambda);
        let mut stats = Vec::with_capacity(hp.epochs);
        for epoch in 1..=hp.epochs {
            let samples = match spec.kind {
                ModelKind::Bpr => bpr_epoch(&mut model, dataset, hp, epoch)?,
                _ => mf_epoch(&mut model, dataset, hp, epoch)?,
            };
            stats.push(EpochStats {
                epoch,
                train_loss: central_loss(&model, &dataset.train, hp.lambda),
                test_loss: central_test_loss(&model, &dataset.test),
                samples,
                messages: 0,
                bytes: 0,
                bytes_positive_only: 0,
            });
            if keep(epoch) {
                on_epoch(&Checkpoint::central(spec.kind, epoch, hp.clone(), model.clone()))?;
            }
        }
        (Checkpoint::central(spec.kind, hp.epochs, hp.clone(), model), stats, initial, CostMeter::new(hp.k))
    };
    let last = stats.last();
    let report = TrainReport {
        model_kind: spec.kind,
        epochs: stats.len(),
        initial_train_loss: initial,
        final_train_loss: last.map_or(initial, |s| s.train_loss),
        final_test_loss: last.map_or(0.0, |s| s.test_loss),
        communication: cost_report(&meter),
    };
    Ok(RunOutput { checkpoint, stats, report })
}

fn central_test_loss(model: &CentralModel<f64>, test: &[Rating]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let total: f64 = test
        .iter()
        .map(|r| {
            let e = r.value - model.score(r.user, r.item);
            0.5 * e * e
        })
        .sum();
    total / test.len() as f64
}

pub const STATS_HEADER: &str = "epoch,train_loss,test_loss,samples,messages,bytes,bytes_positive_only";

pub fn stats_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.epoch, s.train_loss, s.test_loss, s.samples, s.messages, s.bytes, s.bytes_positive_only
        ));
    }
    out
}

/// Labels recovered from a checkpoint's stored hyper-parameters.
pub fn checkpoint_labels(ckpt: &Checkpoint<f64>) -> RunLabels {
    match &ckpt.body {
        CheckpointBody::Decentralized { hp, .. } => RunLabels {
            model: ckpt.model_kind.to_string(),
            k: hp.k,
            d: hp.walk.max_distance,
            beta: hp.beta,
            gamma: hp.gamma,
        },
        CheckpointBody::Central { hp, .. } => {
            RunLabels { model: ckpt.model_kind.to_string(), k: hp.k, d: 0, beta: 0.0, gamma: 0.0 }
        }
    }
}
