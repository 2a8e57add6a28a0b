//! Training loop and the strategy matrix.
//!
//! | strategy          | heads      | objective                                    |
//! |-------------------|------------|----------------------------------------------|
//! | `lda`             | h, h', p   | `eps_u + alpha*eps_b + beta*(intra+inter)`, adaptive alpha |
//! | `lda_fixed_alpha` | h, h', p   | same, constant alpha                         |
//! | `ce`              | single     | `eps_u`                                      |
//! | `rw`              | single     | `eps_b`                                      |
//! | `ce_then_rw`      | single     | `eps_u`, then `eps_b` with the encoder frozen |
//! | `ce_then_rs`      | single     | `eps_u`, then `eps_u` on class-balanced batches, encoder frozen |

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balance::{AlphaSource, BalanceState};
use crate::data::{LongTailDataset, Sampler, SamplerMode};
use crate::losses::{self, ClassWeights, LossBreakdown};
use crate::metrics::{self, SplitSpec};
use crate::model::{Heads, LdaModel, ModelDims, Trainable};
use crate::optim::{sgd_step, LrSchedule, OptimizerState, Schedule, SgdParams};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Lda,
    Ce,
    Rw,
    CeThenRw,
    CeThenRs,
    LdaFixedAlpha,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Lda,
        Strategy::Ce,
        Strategy::Rw,
        Strategy::CeThenRw,
        Strategy::CeThenRs,
        Strategy::LdaFixedAlpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Lda => "lda",
            Strategy::Ce => "ce",
            Strategy::Rw => "rw",
            Strategy::CeThenRw => "ce_then_rw",
            Strategy::CeThenRs => "ce_then_rs",
            Strategy::LdaFixedAlpha => "lda_fixed_alpha",
        }
    }

    pub fn heads(self) -> Heads {
        match self {
            Strategy::Lda | Strategy::LdaFixedAlpha => Heads::Lda,
            _ => Heads::Single,
        }
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, Strategy::CeThenRw | Strategy::CeThenRs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub rep: usize,
    /// Defaults to twice `rep`.
    pub proj: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64],
            rep: 64,
            proj: None,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, input: usize, classes: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden.clone(),
            rep: self.rep,
            classes,
            proj: self.proj.unwrap_or(2 * self.rep),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub warmup_epochs: usize,
    /// Exponent of the adaptive balance factor.
    pub gamma: f64,
    /// Weight of the cosine regularizers.
    pub beta: f64,
    /// Hinge margin of the inter-class loss.
    pub margin: f64,
    /// Batches remembered by the adaptive balance factor.
    pub window: usize,
    /// Alpha used by `lda_fixed_alpha`.
    pub fixed_alpha: f64,
    pub seed: u64,
    /// First epoch of stage 2 for two-stage strategies; defaults to 80% of
    /// the run.
    pub stage_split_epoch: Option<usize>,
    /// Stage-2 learning rate as a fraction of `lr_base`.
    pub stage2_lr_factor: f64,
    pub model: ModelConfig,
    pub splits: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Lda,
            epochs: 60,
            batch_size: 64,
            lr_base: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Cosine,
            warmup_epochs: 5,
            gamma: 2.0,
            beta: 1.0,
            margin: 1.0,
            window: 32,
            fixed_alpha: 1.0,
            seed: 0,
            stage_split_epoch: None,
            stage2_lr_factor: 0.01,
            model: ModelConfig::default(),
            splits: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        TrainConfig {
            strategy,
            ..TrainConfig::default()
        }
    }

    pub fn stage_split(&self) -> usize {
        self.stage_split_epoch
            .unwrap_or_else(|| (self.epochs * 4).div_ceil(5).min(self.epochs.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        for (name, v) in [
            ("lr_base", self.lr_base),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("fixed_alpha", self.fixed_alpha),
            ("stage2_lr_factor", self.stage2_lr_factor),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        }
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return bad(format!("margin must be in (0, 2], got {}", self.margin));
        }
        if self.window == 0 {
            return bad("window must be ≥ 1".into());
        }
        if let Schedule::Step { milestones, factor } = &self.schedule {
            if !milestones.windows(2).all(|w| w[0] < w[1]) {
                return bad(format!("milestones must be strictly increasing: {milestones:?}"));
            }
            if milestones.last().is_some_and(|&m| m >= self.epochs) {
                return bad(format!("milestones must be < epochs ({})", self.epochs));
            }
            if !(*factor >= 0.0) {
                return bad("step factor must be ≥ 0".into());
            }
        }
        if self.strategy.is_two_stage() {
            let split = self.stage_split();
            if split == 0 || split >= self.epochs {
                return bad(format!(
                    "stage split epoch {split} must be in [1, {})",
                    self.epochs
                ));
            }
        } else if self.stage_split_epoch.is_some() {
            return bad(format!(
                "stage_split_epoch only applies to two-stage strategies, not {}",
                self.strategy
            ));
        }
        self.splits.validate()
    }
}

/// Learning rate at a global step of a single-stage run (or stage 1).
pub fn lr_at(config: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    stage_schedule(config, config.epochs, steps_per_epoch).lr_at(step)
}

fn stage_schedule(config: &TrainConfig, epochs: usize, steps_per_epoch: usize) -> LrSchedule {
    LrSchedule {
        base: config.lr_base,
        schedule: config.schedule.clone(),
        warmup_steps: config.warmup_epochs.min(epochs) * steps_per_epoch,
        total_steps: epochs * steps_per_epoch,
        steps_per_epoch,
    }
}

/// Per-epoch log line. Loss terms are means over the epoch's batches;
/// accuracies are measured on the test split after the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub lr: f64,
    pub eps_u: f64,
    pub eps_b: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub alpha: f64,
    pub total: f64,
    pub acc_overall: f64,
    pub acc_many: Option<f64>,
    pub acc_medium: Option<f64>,
    pub acc_few: Option<f64>,
}

impl RunRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "epoch",
        "lr",
        "eps_u",
        "eps_b",
        "l_intra",
        "l_inter",
        "alpha",
        "total",
        "acc_overall",
        "acc_many",
        "acc_medium",
        "acc_few",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Value of the objective as computed on the tape.
    pub tape_total: f64,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LdaModel,
    pub records: Vec<RunRecord>,
    pub steps: Vec<StepLog>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &RunRecord {
        self.records.last().expect("at least one epoch")
    }
}

enum Objective {
    Joint(AlphaSource),
    Ce,
    Rw,
}

struct Stage {
    epochs: Range<usize>,
    objective: Objective,
    sampler: SamplerMode,
    trainable: Trainable,
    lr: StageLr,
}

enum StageLr {
    Scheduled,
    Constant(f64),
}

fn sampler_seed(seed: u64, stage: usize) -> u64 {
    // splitmix64 finalizer, distinct per stage
    let mut z = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn plan(cfg: &TrainConfig) -> Result<Vec<Stage>> {
    let all = 0..cfg.epochs;
    let single = |objective| {
        vec![Stage {
            epochs: all.clone(),
            objective,
            sampler: SamplerMode::InstanceRandom,
            trainable: Trainable::ALL,
            lr: StageLr::Scheduled,
        }]
    };
    Ok(match cfg.strategy {
        Strategy::Lda => single(Objective::Joint(AlphaSource::Adaptive(BalanceState::new(
            cfg.window, cfg.gamma,
        )?))),
        Strategy::LdaFixedAlpha => single(Objective::Joint(AlphaSource::fixed(cfg.fixed_alpha)?)),
        Strategy::Ce => single(Objective::Ce),
        Strategy::Rw => single(Objective::Rw),
        Strategy::CeThenRw | Strategy::CeThenRs => {
            let split = cfg.stage_split();
            let (objective, sampler) = if cfg.strategy == Strategy::CeThenRw {
                (Objective::Rw, SamplerMode::InstanceRandom)
            } else {
                (Objective::Ce, SamplerMode::ClassBalanced)
            };
            vec![
                Stage {
                    epochs: 0..split,
                    objective: Objective::Ce,
                    sampler: SamplerMode::InstanceRandom,
                    trainable: Trainable::ALL,
                    lr: StageLr::Scheduled,
                },
                Stage {
                    epochs: split..cfg.epochs,
                    objective,
                    sampler,
                    trainable: Trainable::HEADS_ONLY,
                    lr: StageLr::Constant(cfg.lr_base * cfg.stage2_lr_factor),
                },
            ]
        }
    })
}

#[derive(Default)]
struct EpochAccumulator {
    sum: LossBreakdown,
    batches: usize,
}

impl EpochAccumulator {
    fn add(&mut self, b: &LossBreakdown) {
        self.sum.eps_u += b.eps_u;
        self.sum.eps_b += b.eps_b;
        self.sum.l_intra += b.l_intra;
        self.sum.l_inter += b.l_inter;
        self.sum.alpha += b.alpha;
        self.sum.total += b.total;
        self.batches += 1;
    }

    fn mean(&self) -> LossBreakdown {
        let n = self.batches.max(1) as f64;
        LossBreakdown {
            eps_u: self.sum.eps_u / n,
            eps_b: self.sum.eps_b / n,
            l_intra: self.sum.l_intra / n,
            l_inter: self.sum.l_inter / n,
            alpha: self.sum.alpha / n,
            beta: 0.0,
            total: self.sum.total / n,
        }
    }
}

/// Trains a fresh model. See [`train_observed`].
pub fn train(dataset: &LongTailDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(dataset, config, |_, _| {})
}

/// Trains a fresh model, calling `on_epoch` with each epoch's record and the
/// model as it stands after that epoch. Deterministic per `config.seed`.
pub fn train_observed(
    dataset: &LongTailDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&RunRecord, &LdaModel),
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = config.model.dims(dataset.dim(), dataset.num_classes());
    let mut model = LdaModel::init(dims, config.strategy.heads(), config.seed)?;
    let weights = ClassWeights::from_counts(dataset.class_counts())?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut global_step = 0;

    for (stage_idx, mut stage) in plan(config)?.into_iter().enumerate() {
        let mut sampler = Sampler::new(
            dataset,
            stage.sampler,
            config.batch_size,
            sampler_seed(config.seed, stage_idx),
        )?;
        let spe = sampler.batches_per_epoch();
        let schedule = stage_schedule(config, stage.epochs.len(), spe);
        let mut opt = OptimizerState::new();
        for epoch in stage.epochs.clone() {
            let mut acc = EpochAccumulator::default();
            let mut epoch_lr = None;
            for (b, batch) in sampler.next_epoch().into_iter().enumerate() {
                let lr = match stage.lr {
                    StageLr::Scheduled => {
                        schedule.lr_at((epoch - stage.epochs.start) * spe + b)
                    }
                    StageLr::Constant(v) => v,
                };
                epoch_lr.get_or_insert(lr);
                let hp = SgdParams {
                    lr,
                    momentum: config.momentum,
                    weight_decay: config.weight_decay,
                };
                let (x, y) = dataset.gather(&batch)?;
                let (breakdown, tape_total) = step(
                    &mut model,
                    &mut opt,
                    &mut stage,
                    &weights,
                    config,
                    &x,
                    &y,
                    hp,
                    global_step,
                )?;
                acc.add(&breakdown);
                steps.push(StepLog {
                    step: global_step,
                    epoch,
                    lr,
                    tape_total,
                    breakdown,
                });
                global_step += 1;
            }
            let eval = metrics::evaluate(&model, dataset, &config.splits)?;
            let m = acc.mean();
            let record = RunRecord {
                epoch,
                lr: epoch_lr.unwrap_or(0.0),
                eps_u: m.eps_u,
                eps_b: m.eps_b,
                l_intra: m.l_intra,
                l_inter: m.l_inter,
                alpha: m.alpha,
                total: m.total,
                acc_overall: eval.accuracy.overall,
                acc_many: eval.accuracy.many,
                acc_medium: eval.accuracy.medium,
                acc_few: eval.accuracy.few,
            };
            on_epoch(&record, &model);
            records.push(record);
        }
    }
    Ok(TrainOutcome {
        model,
        records,
        steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn step(
    model: &mut LdaModel,
    opt: &mut OptimizerState,
    stage: &mut Stage,
    weights: &ClassWeights,
    config: &TrainConfig,
    x: &Tensor,
    y: &[usize],
    hp: SgdParams,
    global_step: usize,
) -> Result<(LossBreakdown, f64)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, stage.trainable);
    let out = model.forward_train(&mut tape, &bound, x)?;
    let (total, breakdown) = match &mut stage.objective {
        Objective::Joint(alpha_src) => {
            let (logits_u, proj) = out
                .logits_u
                .zip(out.proj)
                .ok_or_else(|| Error::config("joint objective needs h' and p"))?;
            let eps_u = losses::unbalanced_risk(&mut tape, logits_u, y)?;
            let eps_b = losses::balanced_risk(&mut tape, out.logits_b, y, weights)?;
            let alpha = alpha_src.next(tape.value(out.logits_b), tape.value(logits_u), y)?;
            let centers = losses::compute_centers(&mut tape, proj, y)?;
            let intra = losses::intra_loss(&mut tape, &centers)?;
            let inter = losses::inter_loss(&mut tape, &centers, weights, config.margin)?;
            let total = losses::combine(&mut tape, eps_u, eps_b, intra, inter, alpha, config.beta)?;
            let v = |t: &Tape, var| t.value(var).item();
            let breakdown = losses::total_loss(
                v(&tape, eps_u),
                v(&tape, eps_b),
                v(&tape, intra),
                v(&tape, inter),
                alpha,
                config.beta,
            )?;
            (total, breakdown)
        }
        Objective::Ce => {
            let eps_u = losses::unbalanced_risk(&mut tape, out.logits_b, y)?;
            let b = losses::total_loss(tape.value(eps_u).item(), 0.0, 0.0, 0.0, 0.0, 0.0)?;
            (eps_u, b)
        }
        Objective::Rw => {
            let eps_b = losses::balanced_risk(&mut tape, out.logits_b, y, weights)?;
            let b = losses::total_loss(0.0, tape.value(eps_b).item(), 0.0, 0.0, 1.0, 0.0)?;
            (eps_b, b)
        }
    };
    let tape_total = tape.value(total).item();
    if !tape_total.is_finite() {
        return Err(Error::Divergence {
            step: global_step,
            what: format!("non-finite loss {tape_total}"),
        });
    }
    let grads = tape.backward(total)?;
    let vars = bound.named_vars();
    let mut params = model.named_params_mut();
    let mut updates = Vec::with_capacity(vars.len());
    for ((name, var), (pname, param)) in vars.into_iter().zip(params.iter_mut()) {
        debug_assert_eq!(&name, pname);
        if let Some(g) = grads.get(var) {
            updates.push((name, &mut **param, g));
        }
    }
    sgd_step(opt, &mut updates, hp).map_err(|e| match e {
        Error::Divergence { what, .. } => Error::Divergence {
            step: global_step,
            what,
        },
        other => other,
    })?;
    Ok((breakdown, tape_total))
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub epochs: usize,
    pub final_record: RunRecord,
    pub cv_balanced: f64,
    pub cv_unbalanced: Option<f64>,
    pub intra_over_inter: Option<f64>,
    pub cdd: Option<f64>,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

pub fn summarize(dataset: &LongTailDataset, config: &TrainConfig, outcome: &TrainOutcome) -> Result<RunSummary> {
    let norms = metrics::weight_norms(&outcome.model);
    let ratio = match metrics::intra_inter_ratio(&outcome.model, dataset) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let cdd = match metrics::model_cdd(&outcome.model, dataset) {
        Ok(r) => Some(r.value),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let alphas = outcome.steps.iter().map(|s| s.breakdown.alpha);
    Ok(RunSummary {
        strategy: config.strategy,
        epochs: config.epochs,
        final_record: *outcome.final_record(),
        cv_balanced: norms.balanced.cv,
        cv_unbalanced: norms.unbalanced.map(|n| n.cv),
        intra_over_inter: ratio,
        cdd,
        alpha_min: alphas.clone().fold(f64::INFINITY, f64::min),
        alpha_max: alphas.fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Axes of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationGrid {
    pub strategies: Vec<Strategy>,
    /// Used by `lda` cells.
    pub gammas: Vec<f64>,
    /// Used by `lda_fixed_alpha` cells.
    pub fixed_alphas: Vec<f64>,
    /// Used by both LDA variants; 0 disables the regularizers. The default
    /// nonzero value suits the synthetic benchmark, where the unnormalized
    /// inter-class weights sum to ~1e4.
    pub betas: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            strategies: vec![
                Strategy::Ce,
                Strategy::Rw,
                Strategy::CeThenRw,
                Strategy::CeThenRs,
                Strategy::Lda,
                Strategy::LdaFixedAlpha,
            ],
            gammas: vec![1.0, 2.0],
            fixed_alphas: vec![0.25, 0.5, 1.0, 2.0],
            betas: vec![0.0, 1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub config: TrainConfig,
}

impl AblationGrid {
    /// Expands the grid over `base`. Cells differ from `base` only in the
    /// swept fields.
    pub fn cells(&self, base: &TrainConfig) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            let cfg = TrainConfig {
                strategy,
                ..base.clone()
            };
            match strategy {
                Strategy::Lda => {
                    for &gamma in &self.gammas {
                        for &beta in &self.betas {
                            out.push(AblationCell {
                                label: format!("lda/gamma={gamma}/beta={beta}"),
                                config: TrainConfig {
                                    gamma,
                                    beta,
                                    ..cfg.clone()
                                },
                            });
                        }
                    }
                }
                Strategy::LdaFixedAlpha => {
                    for &fixed_alpha in &self.fixed_alphas {
                        for &beta in &self.betas {
                            out.push(AblationCell {
                                label: format!("lda_fixed_alpha/alpha={fixed_alpha}/beta={beta}"),
                                config: TrainConfig {
                                    fixed_alpha,
                                    beta,
                                    ..cfg.clone()
                                },
                            });
                        }
                    }
                }
                other => out.push(AblationCell {
                    label: String::from(other.name()),
                    config: cfg,
                }),
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: AblationCell,
    pub result: core::result::Result<RunSummary, Error>,
}

/// Runs every cell in order; a failing cell is recorded and the sweep
/// continues.
pub fn ablate(dataset: &LongTailDataset, grid: &AblationGrid, base: &TrainConfig) -> Vec<CellOutcome> {
    grid.cells(base)
        .into_iter()
        .map(|cell| {
            let result = train(dataset, &cell.config).and_then(|o| summarize(dataset, &cell.config, &o));
            CellOutcome { cell, result }
        })
        .collect()
}
