//! The adversarial training loop shared by pretraining, the four transfer
//! regimes, and post-transfer fine-tuning. A phase is fully described by
//! the model state, the list of trainable generator-side tensors, and the
//! set of classes whose data is sampled.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::condnet::{
    discriminator_forward, generator_forward, hinge_d_loss, hinge_g_loss, DiscVars,
};
use crate::gradcore::{AdamState, GradError, Tape, Tensor};
use crate::metrics::{fit_gaussian, kmmd, mode_metrics, frechet_distance, GaussianFit, MetricRow};
use crate::synthdata::{derive_seed, sample_class, Dataset, Point, Task};
use crate::train::model::{
    build_g_tape, disc_params_names, disc_params_vec, set_disc_params, state_into_checkpoint,
    GParam, ModelState,
};
use crate::train::{Checkpoint, EvalPoint, Mode, Phase, RunRecord, TrainConfig, TrainError, TrainOutput};

pub(crate) const SALT_INIT: u64 = 0x01;
pub(crate) const SALT_TRAIN: u64 = 0x02;
pub(crate) const SALT_EMBED_EXT: u64 = 0x03;
pub(crate) const SALT_EVAL_Z: u64 = 0x04;
pub(crate) const SALT_EVAL_REAL: u64 = 0x05;

pub(crate) struct Driver<'a> {
    pub state: ModelState,
    pub cfg: &'a TrainConfig,
    pub task: &'a Task,
    pub data: &'a Dataset,
    /// Local class ids sampled during training batches.
    pub train_locals: Vec<usize>,
    /// Global class ids defining the target metric (best-checkpoint choice).
    pub target_globals: Vec<usize>,
    pub trainable_g: Vec<GParam>,
    pub run_id: String,
}

struct EvalFixture {
    /// Per local class: (global id, held-out real points, their fit, z seed).
    per_class: Vec<(usize, Vec<Point>, GaussianFit, u64)>,
}

impl<'a> Driver<'a> {
    pub fn run(mut self) -> Result<TrainOutput, TrainError> {
        let cfg = self.cfg;
        cfg.validate()?;
        for &local in &self.train_locals {
            let global = self.state.class_ids[local];
            if self.data.per_class.get(global).map_or(true, Vec::is_empty) {
                return Err(TrainError::Config(format!("no samples for class {global}")));
            }
        }

        let started = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SALT_TRAIN));
        let g_names: Vec<String> = self.trainable_g.iter().map(GParam::name).collect();
        let g_tensors: Vec<Tensor> = self.trainable_g.iter().map(|p| p.get(&self.state)).collect();
        let mut adam_g = AdamState::new(&g_tensors, cfg.beta1, cfg.beta2);
        let d_tensors = disc_params_vec(&self.state.disc);
        let d_names = disc_params_names(&self.state.disc);
        let mut adam_d = AdamState::new(&d_tensors, cfg.beta1, cfg.beta2);

        let fixture = self.eval_fixture();
        let mut record = RunRecord::new(self.run_id.clone(), self.target_globals.clone());
        let mut last_d_loss = f64::NAN;
        #[allow(unused_assignments)]
        let mut last_g_loss = f64::NAN;

        let mut best_ckpt =
            self.build_checkpoint(&adam_g, &adam_d, &g_names, &d_names, 0, &rng);
        let mut best_metric = f64::INFINITY;
        let mut best_iteration = 0u64;

        for iteration in 1..=cfg.iterations {
            for _ in 0..cfg.d_steps_per_g_step {
                last_d_loss = self
                    .d_step(&mut rng, &mut adam_d)
                    .map_err(|e| abort(iteration, "d_step", e, &d_names))?;
            }
            last_g_loss = self
                .g_step(&mut rng, &mut adam_g)
                .map_err(|e| abort(iteration, "g_step", e, &g_names))?;

            if iteration % cfg.eval_every == 0 || iteration == cfg.iterations {
                let rows = self.eval_rows(&fixture, iteration)?;
                let point = EvalPoint {
                    iteration,
                    rows,
                    d_loss: last_d_loss,
                    g_loss: last_g_loss,
                    wall_secs: started.elapsed().as_secs_f64(),
                };
                let mean_fd = record_mean(&point, &self.target_globals);
                record.push(point);
                if mean_fd < best_metric {
                    best_metric = mean_fd;
                    best_iteration = iteration;
                    best_ckpt =
                        self.build_checkpoint(&adam_g, &adam_d, &g_names, &d_names, iteration, &rng);
                }
            }
        }

        let final_ckpt =
            self.build_checkpoint(&adam_g, &adam_d, &g_names, &d_names, cfg.iterations, &rng);
        Ok(TrainOutput {
            final_checkpoint: final_ckpt,
            best_checkpoint: best_ckpt,
            best_iteration,
            record,
            state: self.state,
        })
    }

    /// One discriminator update on a fresh batch: real target-class points
    /// against generated ones, hinge loss, Adam.
    fn d_step(&mut self, rng: &mut ChaCha20Rng, adam_d: &mut AdamState) -> Result<f64, GradError> {
        let b = self.cfg.batch_size;
        let ids = self.sample_ids(rng, b);
        let reals = self.sample_reals(rng, &ids);
        let z = self.sample_z(rng, b);
        let fakes = self
            .state
            .forward_values(&z, &ids)
            .map_err(|e| GradError::Domain { prim: "generator", detail: e.to_string() })?;

        let mut tape = Tape::new();
        let dv = DiscVars::register(&mut tape, &self.state.disc);
        let real_x = tape.constant(reals);
        let fake_x = tape.constant(fakes);
        let real_scores = discriminator_forward(&mut tape, &self.state.disc_spec, &dv, real_x, &ids)
            .map_err(net_to_grad)?;
        let fake_scores = discriminator_forward(&mut tape, &self.state.disc_spec, &dv, fake_x, &ids)
            .map_err(net_to_grad)?;
        let loss = hinge_d_loss(&mut tape, real_scores, fake_scores).map_err(net_to_grad)?;
        let loss_value = tape.value(loss).item();

        let leaf_list: Vec<_> = dv
            .weights
            .iter()
            .chain(&dv.biases)
            .copied()
            .chain([dv.embed, dv.head_w, dv.head_b])
            .collect();
        let grads_all = tape.backward(loss)?;
        let grads: Vec<Tensor> = leaf_list.iter().map(|&v| grads_all.grad(v)).collect();
        let mut params = disc_params_vec(&self.state.disc);
        adam_d.step(&mut params, &grads, self.cfg.lr_d)?;
        set_disc_params(&mut self.state.disc, params);
        Ok(loss_value)
    }

    /// One generator-side update: hinge loss through a frozen-constant
    /// discriminator plus any transfer regularization, Adam on the
    /// trainable list.
    fn g_step(&mut self, rng: &mut ChaCha20Rng, adam_g: &mut AdamState) -> Result<f64, GradError> {
        let b = self.cfg.batch_size;
        let ids = self.sample_ids(rng, b);
        let z = self.sample_z(rng, b);

        let mut tape = Tape::new();
        let build = build_g_tape(&mut tape, &self.state, &self.trainable_g)
            .map_err(|e| GradError::Domain { prim: "g_tape", detail: e.to_string() })?;
        let zv = tape.constant(z);
        let fake_x = generator_forward(
            &mut tape,
            &self.state.gen_spec,
            &build.gen_vars,
            &build.cbn_vars,
            zv,
            &ids,
        )
        .map_err(net_to_grad)?;
        let dv = DiscVars {
            weights: self.state.disc.weights.iter().map(|w| tape.constant(w.clone())).collect(),
            biases: self.state.disc.biases.iter().map(|t| tape.constant(t.clone())).collect(),
            embed: tape.constant(self.state.disc.embed.clone()),
            head_w: tape.constant(self.state.disc.head_w.clone()),
            head_b: tape.constant(self.state.disc.head_b.clone()),
        };
        let scores = discriminator_forward(&mut tape, &self.state.disc_spec, &dv, fake_x, &ids)
            .map_err(net_to_grad)?;
        let mut loss = hinge_g_loss(&mut tape, scores).map_err(net_to_grad)?;
        if let (Some(tv), Some(block)) = (&build.transfer_vars, &self.state.transfer) {
            // frozen scores make the l1 term a constant during fine-tuning
            let use_l1 = self.cfg.use_l1 && self.cfg.phase != Phase::Finetune;
            if let Some(reg) = tv.regularization_loss(
                &mut tape,
                &block.config,
                use_l1,
                self.cfg.use_l2,
                self.state.num_layers(),
            )? {
                loss = tape.add(loss, reg)?;
            }
        }
        let loss_value = tape.value(loss).item();
        let grads_all = tape.backward(loss)?;
        let grads: Vec<Tensor> = build.leaves.iter().map(|&v| grads_all.grad(v)).collect();
        let mut params: Vec<Tensor> =
            self.trainable_g.iter().map(|p| p.get(&self.state)).collect();
        adam_g.step(&mut params, &grads, self.cfg.lr_g)?;
        for (p, t) in self.trainable_g.iter().zip(params) {
            p.set(&mut self.state, t);
        }
        Ok(loss_value)
    }

    fn sample_ids(&self, rng: &mut ChaCha20Rng, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| self.train_locals[rng.random_range(0..self.train_locals.len())])
            .collect()
    }

    fn sample_reals(&self, rng: &mut ChaCha20Rng, local_ids: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(local_ids.len() * 2);
        for &local in local_ids {
            let pool = &self.data.per_class[self.state.class_ids[local]];
            let p = pool[rng.random_range(0..pool.len())];
            data.extend_from_slice(&p);
        }
        Tensor::matrix(local_ids.len(), 2, data).expect("sized data")
    }

    fn sample_z(&self, rng: &mut ChaCha20Rng, n: usize) -> Tensor {
        let d = self.state.gen_spec.latent_dim;
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
            .expect("sized data")
    }

    /// Held-out real samples, their Gaussian fits, and fixed latent seeds
    /// per class. Depends only on the task, so records are comparable
    /// across runs and modes.
    fn eval_fixture(&self) -> EvalFixture {
        let task_seed = self.task.config.seed;
        let per_class = (0..self.state.class_ids.len())
            .map(|local| {
                let global = self.state.class_ids[local];
                let dist = self.task.distribution(global);
                let reals = sample_class(
                    dist,
                    self.cfg.eval_samples,
                    derive_seed(derive_seed(task_seed, SALT_EVAL_REAL), global as u64),
                );
                let fit = fit_gaussian(&reals).expect("eval_samples >= 2");
                let z_seed = derive_seed(derive_seed(task_seed, SALT_EVAL_Z), global as u64);
                (global, reals, fit, z_seed)
            })
            .collect();
        EvalFixture { per_class }
    }

    fn eval_rows(
        &self,
        fixture: &EvalFixture,
        iteration: u64,
    ) -> Result<Vec<MetricRow>, TrainError> {
        let mut rows = Vec::with_capacity(fixture.per_class.len());
        for (global, reals, real_fit, z_seed) in &fixture.per_class {
            let gen_points = self.state.generate_class(*global, self.cfg.eval_samples, *z_seed)?;
            let gen_fit = fit_gaussian(&gen_points)?;
            let dist = self.task.distribution(*global);
            let mm = mode_metrics(&gen_points, &[dist], self.cfg.k_sigma);
            rows.push(MetricRow {
                run_id: self.run_id.clone(),
                iteration,
                class_id: *global,
                frechet: frechet_distance(&gen_fit, real_fit)?,
                kmmd: kmmd(&gen_points, reals, 1.0)?,
                coverage: mm.coverage,
                quality: mm.quality,
            });
        }
        Ok(rows)
    }

    fn build_checkpoint(
        &self,
        adam_g: &AdamState,
        adam_d: &AdamState,
        g_names: &[String],
        d_names: &[String],
        iteration: u64,
        rng: &ChaCha20Rng,
    ) -> Checkpoint {
        let cfg = self.cfg;
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("phase", cfg.phase.name());
        ckpt.set_meta("mode", cfg.mode.name());
        ckpt.set_meta("iteration", iteration);
        ckpt.set_meta("seed", cfg.seed);
        ckpt.set_meta("run_id", &self.run_id);
        ckpt.set_meta("task_fingerprint", format!("{:016x}", self.task.fingerprint()));
        ckpt.set_meta("source_fingerprint", format!("{:016x}", self.task.source_fingerprint()));
        ckpt.set_meta("rng.seed", derive_seed(cfg.seed, SALT_TRAIN));
        ckpt.set_meta("rng.word_pos", rng.get_word_pos());
        state_into_checkpoint(&self.state, &mut ckpt);
        save_adam(&mut ckpt, "adam_g", adam_g, g_names);
        save_adam(&mut ckpt, "adam_d", adam_d, d_names);
        ckpt
    }
}

fn record_mean(point: &EvalPoint, target_globals: &[usize]) -> f64 {
    let vals: Vec<f64> = point
        .rows
        .iter()
        .filter(|r| target_globals.contains(&r.class_id))
        .map(|r| r.frechet)
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn save_adam(ckpt: &mut Checkpoint, prefix: &str, adam: &AdamState, names: &[String]) {
    ckpt.set_meta(&format!("{prefix}.t"), adam.t);
    ckpt.set_meta_f64(&format!("{prefix}.beta1"), adam.beta1);
    ckpt.set_meta_f64(&format!("{prefix}.beta2"), adam.beta2);
    ckpt.set_meta(&format!("{prefix}.params"), names.join(","));
    for (name, (m, v)) in names.iter().zip(adam.m.iter().zip(&adam.v)) {
        ckpt.insert_tensor(format!("{prefix}.m.{name}"), m.clone());
        ckpt.insert_tensor(format!("{prefix}.v.{name}"), v.clone());
    }
}

fn net_to_grad(e: crate::condnet::NetError) -> GradError {
    match e {
        crate::condnet::NetError::Grad(g) => g,
        other => GradError::Domain { prim: "condnet", detail: other.to_string() },
    }
}

fn abort(iteration: u64, step: &str, e: GradError, names: &[String]) -> TrainError {
    let detail = match &e {
        GradError::NonFiniteGrad { index } => {
            let name = names.get(*index).map(String::as_str).unwrap_or("?");
            format!("non-finite gradient in parameter block {name}")
        }
        other => other.to_string(),
    };
    TrainError::Aborted { iteration, step: step.to_string(), detail }
}

/// Trainable generator-side tensors per phase/mode.
pub(crate) fn trainables_for(state: &ModelState, phase: Phase, mode: Mode) -> Vec<GParam> {
    let layers = state.num_layers();
    let mut list = Vec::new();
    match (phase, mode, &state.transfer, &state.bsa) {
        (Phase::Pretrain, _, _, _)
        | (Phase::Transfer, Mode::Scratch, _, _)
        | (Phase::Transfer, Mode::TransferGan, _, _) => {
            for l in 0..layers {
                list.push(GParam::GenWeight(l));
            }
            list.push(GParam::GenOutW);
            list.push(GParam::GenOutB);
            for l in 0..layers {
                list.push(GParam::BankGamma(l));
                list.push(GParam::BankBeta(l));
            }
        }
        (Phase::Transfer, Mode::Bsa, _, Some(_)) => {
            for l in 0..layers {
                list.push(GParam::BsaGamma(l));
                list.push(GParam::BsaBeta(l));
            }
        }
        (Phase::Transfer, Mode::Propagate, Some(block), _) => {
            for s in 0..block.scores.stored_pairs() {
                list.push(GParam::ScoreGamma(s));
                list.push(GParam::ScoreBeta(s));
            }
            if block.config.residuals_enabled {
                for l in 0..layers {
                    list.push(GParam::ResGamma(l));
                    list.push(GParam::ResBeta(l));
                }
            }
            if block.config.prior_tunable {
                for l in 0..layers {
                    list.push(GParam::PriorGamma(l));
                    list.push(GParam::PriorBeta(l));
                }
            }
        }
        (Phase::Finetune, Mode::Propagate, Some(_), _) => {
            for l in 0..layers {
                list.push(GParam::GenWeight(l));
            }
            list.push(GParam::GenOutW);
            list.push(GParam::GenOutB);
            for l in 0..layers {
                list.push(GParam::ResGamma(l));
                list.push(GParam::ResBeta(l));
            }
        }
        other => panic!("inconsistent phase/mode/state: {:?}", (other.0, other.1)),
    }
    list
}
