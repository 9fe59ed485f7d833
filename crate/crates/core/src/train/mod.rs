//! Training orchestration: source-class pretraining, the four transfer
//! regimes (knowledge propagation and the scratch / full-fine-tune / BSA
//! baselines), optional post-transfer fine-tuning, evaluation, and
//! checkpointing.

mod checkpoint;
mod driver;
mod model;
mod record;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{BsaRows, GParam, ModelState};
pub use record::{iterations_to_threshold, EvalPoint, MetricKind, RunRecord};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::condnet::{DiscriminatorSpec, GeneratorSpec, NetError};
use crate::gradcore::GradError;
use crate::metrics::{fit_gaussian, frechet_distance, kmmd, mode_metrics, MetricError, MetricRow};
use crate::synthdata::{derive_seed, sample_class, DataError, Dataset, Task};
use crate::transfer::{TransferBlock, TransferConfig, TransferError};

use driver::{trainables_for, Driver, SALT_EMBED_EXT, SALT_EVAL_REAL, SALT_EVAL_Z, SALT_INIT};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training aborted at iteration {iteration} in {step}: {detail}")]
    Aborted { iteration: u64, step: String, detail: String },
    #[error("source fingerprint mismatch: checkpoint {checkpoint}, task {task}")]
    FingerprintMismatch { checkpoint: String, task: String },
    #[error("wrong checkpoint provenance: need a propagate-mode transfer checkpoint, got {found}")]
    WrongProvenance { found: String },
    #[error("class {class} is absent")]
    ClassAbsent { class: usize },
    #[error("unknown metric name {0:?}")]
    UnknownMetric(String),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("record parse error at line {line}: {detail}")]
    RecordParse { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Transfer,
    Finetune,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Transfer => "transfer",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Scratch,
    TransferGan,
    Bsa,
    Propagate,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Scratch, Mode::TransferGan, Mode::Bsa, Mode::Propagate];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Scratch => "scratch",
            Mode::TransferGan => "transfergan",
            Mode::Bsa => "bsa",
            Mode::Propagate => "propagate",
        }
    }

    pub fn parse(s: &str) -> Result<Mode, TrainError> {
        match s {
            "scratch" => Ok(Mode::Scratch),
            "transfergan" => Ok(Mode::TransferGan),
            "bsa" => Ok(Mode::Bsa),
            "propagate" => Ok(Mode::Propagate),
            other => Err(TrainError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// One training phase's hyperparameters and ablation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub mode: Mode,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub prior_tunable: bool,
    pub residuals_enabled: bool,
    pub shared_scores: bool,
    pub use_l1: bool,
    pub use_l2: bool,
    pub seed: u64,
    pub eval_every: u64,
    pub d_steps_per_g_step: usize,
    pub eval_samples: usize,
    pub k_sigma: f64,
}

impl TrainConfig {
    pub fn pretrain_default(seed: u64) -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            mode: Mode::Propagate,
            iterations: 5000,
            batch_size: 64,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.0,
            beta2: 0.999,
            lambda_r: 1e-3,
            lambda_s: 1e-3,
            prior_tunable: true,
            residuals_enabled: true,
            shared_scores: false,
            use_l1: true,
            use_l2: true,
            seed,
            eval_every: 250,
            d_steps_per_g_step: 2,
            eval_samples: 256,
            k_sigma: 3.0,
        }
    }

    pub fn transfer_default(mode: Mode, seed: u64) -> Self {
        TrainConfig {
            phase: Phase::Transfer,
            mode,
            iterations: 3000,
            eval_every: 50,
            ..TrainConfig::pretrain_default(seed)
        }
    }

    pub fn finetune_default(seed: u64) -> Self {
        TrainConfig {
            phase: Phase::Finetune,
            mode: Mode::Propagate,
            iterations: 1000,
            eval_every: 50,
            ..TrainConfig::pretrain_default(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2 for batch statistics, got {}", self.batch_size));
        }
        if !(self.lr_g > 0.0) || !(self.lr_d > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.eval_every == 0 || self.d_steps_per_g_step == 0 {
            return bad("eval_every and d_steps_per_g_step must be >= 1".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be >= 2".into());
        }
        if self.lambda_r < 0.0 || self.lambda_s < 0.0 {
            return bad("lambdas must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn transfer_block_config(&self, n_old: usize, m_new: usize) -> TransferConfig {
        TransferConfig {
            lambda_r: self.lambda_r,
            lambda_s: self.lambda_s,
            prior_tunable: self.prior_tunable,
            residuals_enabled: self.residuals_enabled,
            shared_scores: self.shared_scores,
            n_old,
            m_new,
        }
    }
}

/// Result of a training phase: final and best checkpoints, the metric time
/// series, and the final in-memory state.
#[derive(Debug)]
pub struct TrainOutput {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub best_iteration: u64,
    pub record: RunRecord,
    pub state: ModelState,
}

/// Adversarial pretraining on the task's source classes with desk-default
/// network shapes.
pub fn pretrain(task: &Task, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    pretrain_with_spec(task, data, cfg, GeneratorSpec::default())
}

pub fn pretrain_with_spec(
    task: &Task,
    data: &Dataset,
    cfg: &TrainConfig,
    gen_spec: GeneratorSpec,
) -> Result<TrainOutput, TrainError> {
    if cfg.phase != Phase::Pretrain {
        return Err(TrainError::Config("pretrain needs phase = pretrain".into()));
    }
    let n = task.config.n_source;
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SALT_INIT));
    let state = ModelState::fresh(
        gen_spec,
        DiscriminatorSpec::desk_default(n),
        (0..n).collect(),
        &mut rng,
    );
    let trainable_g = trainables_for(&state, Phase::Pretrain, cfg.mode);
    Driver {
        train_locals: (0..n).collect(),
        target_globals: (0..n).collect(),
        trainable_g,
        run_id: format!("pretrain_seed{}", cfg.seed),
        state,
        cfg,
        task,
        data,
    }
    .run()
}

fn check_source_fingerprint(pretrained: &Checkpoint, task: &Task) -> Result<(), TrainError> {
    let want = format!("{:016x}", task.source_fingerprint());
    let got = pretrained.meta_str("source_fingerprint")?;
    if got != want {
        return Err(TrainError::FingerprintMismatch { checkpoint: got.to_string(), task: want });
    }
    Ok(())
}

/// Transfer to the task's target classes in the configured mode.
///
/// `propagate` and `bsa` freeze the generator affine weights and the
/// original BN rows, so old classes keep generating bitwise-identical
/// samples; `transfergan` fine-tunes everything; `scratch` trains fresh
/// networks on the target data only (the pretrained checkpoint supplies
/// just the architecture).
pub fn transfer_train(
    pretrained: &Checkpoint,
    task: &Task,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    if cfg.phase != Phase::Transfer {
        return Err(TrainError::Config("transfer_train needs phase = transfer".into()));
    }
    let n = task.config.n_source;
    let m = task.config.m_target;
    let target_globals = task.target_class_ids();

    let state = match cfg.mode {
        Mode::Scratch => {
            let base = model::state_from_checkpoint(pretrained)?;
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SALT_INIT));
            ModelState::fresh(
                base.gen_spec.clone(),
                DiscriminatorSpec { num_classes: m, ..base.disc_spec.clone() },
                target_globals.clone(),
                &mut rng,
            )
        }
        mode => {
            check_source_fingerprint(pretrained, task)?;
            let mut state = model::state_from_checkpoint(pretrained)?;
            if state.class_ids != (0..n).collect::<Vec<_>>() {
                return Err(TrainError::Config(format!(
                    "pretrained checkpoint covers classes {:?}, expected 0..{n}",
                    state.class_ids
                )));
            }
            match mode {
                Mode::Propagate => {
                    let block =
                        TransferBlock::new(&state.bank, cfg.transfer_block_config(n, m));
                    state.transfer = Some(block);
                }
                Mode::Bsa => {
                    state.bsa = Some(BsaRows::init(m, &state.gen_spec.hidden));
                }
                Mode::TransferGan => {
                    state.bank.extend_classes(m);
                }
                Mode::Scratch => unreachable!(),
            }
            let mut ext_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SALT_EMBED_EXT));
            state.disc.extend_embeddings(m, &mut ext_rng);
            state.disc_spec.num_classes = n + m;
            state.class_ids = (0..n + m).collect();
            state
        }
    };

    let train_locals: Vec<usize> = target_globals
        .iter()
        .map(|&g| state.local_class(g))
        .collect::<Result<_, _>>()?;
    let trainable_g = trainables_for(&state, Phase::Transfer, cfg.mode);
    Driver {
        train_locals,
        target_globals,
        trainable_g,
        run_id: format!("transfer_{}_seed{}", cfg.mode.name(), cfg.seed),
        state,
        cfg,
        task,
        data,
    }
    .run()
}

/// Post-transfer fine-tuning: scores and prior frozen, residuals plus the
/// generator affine weights and the discriminator trainable. Requires a
/// propagate-mode checkpoint.
pub fn finetune(
    transferred: &Checkpoint,
    task: &Task,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    if cfg.phase != Phase::Finetune {
        return Err(TrainError::Config("finetune needs phase = finetune".into()));
    }
    let found_mode = transferred.meta_str("mode")?.to_string();
    if found_mode != "propagate" {
        return Err(TrainError::WrongProvenance { found: found_mode });
    }
    check_source_fingerprint(transferred, task)?;
    let mut state = model::state_from_checkpoint(transferred)?;
    let Some(block) = state.transfer.as_mut() else {
        return Err(TrainError::WrongProvenance { found: "checkpoint without transfer block".into() });
    };
    if !block.residuals.enabled {
        // residuals become the trainable correction during fine-tuning;
        // they start at zero so the model is unchanged at iteration 0
        block.residuals.enabled = true;
        block.config.residuals_enabled = true;
    }

    let target_globals = task.target_class_ids();
    let train_locals: Vec<usize> = target_globals
        .iter()
        .map(|&g| state.local_class(g))
        .collect::<Result<_, _>>()?;
    let trainable_g = trainables_for(&state, Phase::Finetune, Mode::Propagate);
    Driver {
        train_locals,
        target_globals,
        trainable_g,
        run_id: format!("finetune_seed{}", cfg.seed),
        state,
        cfg,
        task,
        data,
    }
    .run()
}

/// Evaluates a checkpoint against a task: per class, generates
/// `n_samples` with a fixed derived seed and scores them against held-out
/// real samples. Deterministic per (checkpoint, task, n_samples, seed).
pub fn evaluate(
    checkpoint: &Checkpoint,
    task: &Task,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<MetricRow>, TrainError> {
    if n_samples < 100 {
        return Err(TrainError::Config(format!(
            "evaluation needs >= 100 samples per class, got {n_samples}"
        )));
    }
    let state = model::state_from_checkpoint(checkpoint)?;
    let run_id = checkpoint.meta_str("run_id").unwrap_or("eval").to_string();
    let iteration = checkpoint.meta_u64("iteration").unwrap_or(0);
    let mut rows = Vec::with_capacity(state.class_ids.len());
    for &global in &state.class_ids {
        if global >= task.num_classes() {
            return Err(TrainError::ClassAbsent { class: global });
        }
        let dist = task.distribution(global);
        let reals = sample_class(
            dist,
            n_samples,
            derive_seed(derive_seed(seed, SALT_EVAL_REAL), global as u64),
        );
        let gen_points = state.generate_class(
            global,
            n_samples,
            derive_seed(derive_seed(seed, SALT_EVAL_Z), global as u64),
        )?;
        let mm = mode_metrics(&gen_points, &[dist], 3.0);
        rows.push(MetricRow {
            run_id: run_id.clone(),
            iteration,
            class_id: global,
            frechet: frechet_distance(&fit_gaussian(&gen_points)?, &fit_gaussian(&reals)?)?,
            kmmd: kmmd(&gen_points, &reals, 1.0)?,
            coverage: mm.coverage,
            quality: mm.quality,
        });
    }
    Ok(rows)
}

/// Loads the model of a checkpoint (shared by the CLI and tests).
pub fn load_state(checkpoint: &Checkpoint) -> Result<ModelState, TrainError> {
    model::state_from_checkpoint(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::Tensor;
    use crate::transfer::export_scores;

    fn tiny_task() -> Task {
        Task::ring(4, 1, 2.0, 0.15, 3, 64, 32).unwrap()
    }

    fn tiny_gen_spec() -> GeneratorSpec {
        GeneratorSpec { latent_dim: 4, hidden: vec![16, 16], ..GeneratorSpec::default() }
    }

    fn tiny_cfg(iterations: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 16,
            eval_every: 10,
            eval_samples: 64,
            ..TrainConfig::pretrain_default(seed)
        }
    }

    fn tiny_pretrain(iterations: u64, seed: u64) -> (Task, Dataset, TrainOutput) {
        let task = tiny_task();
        let data = Dataset::generate(&task);
        let out =
            pretrain_with_spec(&task, &data, &tiny_cfg(iterations, seed), tiny_gen_spec())
                .unwrap();
        (task, data, out)
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let (_, _, out) = tiny_pretrain(0, 1);
        assert!(out.record.points.is_empty());
        assert_eq!(out.final_checkpoint, out.best_checkpoint);
        assert_eq!(out.final_checkpoint.meta_u64("iteration").unwrap(), 0);
    }

    #[test]
    fn same_seed_gives_byte_identical_checkpoints() {
        let (_, _, a) = tiny_pretrain(12, 9);
        let (_, _, b) = tiny_pretrain(12, 9);
        assert_eq!(a.final_checkpoint.to_bytes(), b.final_checkpoint.to_bytes());
        assert_eq!(a.best_checkpoint.to_bytes(), b.best_checkpoint.to_bytes());
        // records match except for wall-clock, which the CSV omits
        assert_eq!(a.record.to_csv(), b.record.to_csv());
    }

    #[test]
    fn different_seeds_differ() {
        let (_, _, a) = tiny_pretrain(5, 1);
        let (_, _, b) = tiny_pretrain(5, 2);
        assert_ne!(a.final_checkpoint.to_bytes(), b.final_checkpoint.to_bytes());
    }

    #[test]
    fn checkpoint_state_roundtrip() {
        let (_, _, out) = tiny_pretrain(3, 5);
        let loaded = load_state(&out.final_checkpoint).unwrap();
        assert_eq!(loaded, out.state);
        let bytes = out.final_checkpoint.to_bytes();
        let re = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(re.to_bytes(), bytes);
    }

    fn transfer_cfg(mode: Mode, iterations: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 16,
            eval_every: 10,
            eval_samples: 64,
            ..TrainConfig::transfer_default(mode, seed)
        }
    }

    #[test]
    fn propagate_preserves_old_classes_bitwise() {
        let (task, data, pre) = tiny_pretrain(15, 7);
        let cfg = transfer_cfg(Mode::Propagate, 12, 21);
        let out = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let before = load_state(&pre.final_checkpoint).unwrap();
        for class in 0..4usize {
            let a = before.generate_class(class, 32, 999).unwrap();
            let b = out.state.generate_class(class, 32, 999).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                assert_eq!(pa[0].to_bits(), pb[0].to_bits());
                assert_eq!(pa[1].to_bits(), pb[1].to_bits());
            }
        }
    }

    #[test]
    fn bsa_preserves_old_classes_bitwise() {
        let (task, data, pre) = tiny_pretrain(15, 7);
        let cfg = transfer_cfg(Mode::Bsa, 12, 22);
        let out = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let before = load_state(&pre.final_checkpoint).unwrap();
        for class in 0..4usize {
            let a = before.generate_class(class, 32, 999).unwrap();
            let b = out.state.generate_class(class, 32, 999).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn propagate_trains_scores_only_when_stripped() {
        // Table-2 row "Freezed Prior, w/o Res": trainables are exactly the
        // score matrices
        let (task, data, pre) = tiny_pretrain(5, 7);
        let cfg = TrainConfig {
            prior_tunable: false,
            residuals_enabled: false,
            ..transfer_cfg(Mode::Propagate, 4, 23)
        };
        let out = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let before = load_state(&pre.final_checkpoint).unwrap();
        let block = out.state.transfer.as_ref().unwrap();
        // prior untouched, residuals still zero, scores moved
        assert_eq!(block.prior.gamma_hat, before.bank.gamma);
        assert_eq!(block.prior.beta_hat, before.bank.beta);
        assert!(block.residuals.is_zero());
        assert_ne!(block.scores.gamma(0).data(), vec![0.25; 4].as_slice());
        // generator affine weights frozen
        assert_eq!(out.state.gen, before.gen);
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let (_, _, pre) = tiny_pretrain(3, 7);
        let other_task = Task::ring(4, 1, 2.5, 0.15, 3, 64, 32).unwrap();
        let data = Dataset::generate(&other_task);
        let cfg = transfer_cfg(Mode::Propagate, 2, 1);
        let err = transfer_train(&pre.final_checkpoint, &other_task, &data, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::FingerprintMismatch { .. }));
    }

    #[test]
    fn finetune_requires_propagate_checkpoint() {
        let (task, data, pre) = tiny_pretrain(3, 7);
        let cfg = transfer_cfg(Mode::Bsa, 3, 2);
        let bsa = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let ft_cfg = TrainConfig {
            iterations: 2,
            batch_size: 16,
            eval_every: 10,
            eval_samples: 64,
            ..TrainConfig::finetune_default(4)
        };
        let err = finetune(&bsa.final_checkpoint, &task, &data, &ft_cfg).unwrap_err();
        assert!(matches!(err, TrainError::WrongProvenance { .. }));
    }

    #[test]
    fn finetune_zero_iterations_keeps_model() {
        let (task, data, pre) = tiny_pretrain(6, 7);
        let cfg = transfer_cfg(Mode::Propagate, 6, 2);
        let tr = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let ft_cfg = TrainConfig {
            iterations: 0,
            batch_size: 16,
            eval_every: 10,
            eval_samples: 64,
            ..TrainConfig::finetune_default(4)
        };
        let ft = finetune(&tr.final_checkpoint, &task, &data, &ft_cfg).unwrap();
        assert_eq!(ft.state, tr.state);
        assert!(ft.record.points.is_empty());
    }

    #[test]
    fn finetune_freezes_scores_and_prior() {
        let (task, data, pre) = tiny_pretrain(8, 7);
        let cfg = transfer_cfg(Mode::Propagate, 8, 2);
        let tr = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let ft_cfg = TrainConfig {
            iterations: 6,
            batch_size: 16,
            eval_every: 10,
            eval_samples: 64,
            ..TrainConfig::finetune_default(4)
        };
        let ft = finetune(&tr.final_checkpoint, &task, &data, &ft_cfg).unwrap();
        let before = tr.state.transfer.as_ref().unwrap();
        let after = ft.state.transfer.as_ref().unwrap();
        assert_eq!(export_scores(before, 4).unwrap(), export_scores(after, 4).unwrap());
        assert_eq!(before.prior, after.prior);
        // residuals and generator weights moved
        assert_ne!(before.residuals, after.residuals);
        assert_ne!(tr.state.gen, ft.state.gen);
    }

    #[test]
    fn evaluate_deterministic_and_complete() {
        let (task, _, pre) = tiny_pretrain(5, 7);
        let a = evaluate(&pre.final_checkpoint, &task, 128, 50).unwrap();
        let b = evaluate(&pre.final_checkpoint, &task, 128, 50).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.frechet.is_finite()));
    }

    #[test]
    fn evaluate_rejects_small_sample_count() {
        let (task, _, pre) = tiny_pretrain(2, 7);
        assert!(evaluate(&pre.final_checkpoint, &task, 99, 0).is_err());
    }

    #[test]
    fn generate_unknown_class_rejected() {
        let (_, _, pre) = tiny_pretrain(2, 7);
        let state = load_state(&pre.final_checkpoint).unwrap();
        assert!(matches!(
            state.generate_class(17, 16, 0),
            Err(TrainError::ClassAbsent { class: 17 })
        ));
    }

    #[test]
    fn nan_seed_data_aborts_with_diagnostic() {
        let task = tiny_task();
        let mut data = Dataset::generate(&task);
        for pool in &mut data.per_class {
            for p in pool.iter_mut() {
                *p = [f64::NAN, 0.0];
            }
        }
        let err = pretrain_with_spec(&task, &data, &tiny_cfg(5, 1), tiny_gen_spec());
        match err {
            Err(TrainError::Aborted { step, .. }) => assert_eq!(step, "d_step"),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn transfergan_moves_generator_weights() {
        let (task, data, pre) = tiny_pretrain(5, 7);
        let cfg = transfer_cfg(Mode::TransferGan, 5, 31);
        let out = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        let before = load_state(&pre.final_checkpoint).unwrap();
        assert_ne!(out.state.gen, before.gen);
        assert_eq!(out.state.bank.num_classes(), 5);
    }

    #[test]
    fn scratch_covers_targets_only() {
        let (task, data, pre) = tiny_pretrain(3, 7);
        let cfg = transfer_cfg(Mode::Scratch, 4, 11);
        let out = transfer_train(&pre.final_checkpoint, &task, &data, &cfg).unwrap();
        assert_eq!(out.state.class_ids, task.target_class_ids());
        assert!(out.state.generate_class(0, 16, 0).is_err());
        assert!(out.state.generate_class(4, 16, 0).is_ok());
    }

    #[test]
    fn adam_state_saved_with_checkpoint() {
        let (_, _, out) = tiny_pretrain(4, 7);
        assert_eq!(out.final_checkpoint.meta_u64("adam_g.t").unwrap(), 4);
        assert_eq!(out.final_checkpoint.meta_u64("adam_d.t").unwrap(), 8);
        assert!(out.final_checkpoint.tensor("adam_g.m.gen.w0").is_ok());
        assert!(out.final_checkpoint.tensor("adam_d.v.disc.embed").is_ok());
        let _ = Tensor::scalar(0.0);
    }
}
