//! The trainable model bundle (generator, CBN bank, discriminator, and any
//! transfer-block or BSA extension) plus its checkpoint mapping.

use rand_chacha::ChaCha20Rng;

use crate::condnet::{
    generator_forward, CbnBank, DiscriminatorParams, DiscriminatorSpec, GenVars, GeneratorParams,
    GeneratorSpec,
};
use crate::gradcore::{Tape, Tensor, Var};
use crate::synthdata::Point;
use crate::train::{Checkpoint, TrainError};
use crate::transfer::{ResidualSet, ScoreSet, TransferBlock, TransferConfig, TransferVars};

/// Fresh per-new-class BN rows trained directly (the BSA baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct BsaRows {
    pub gamma: Vec<Tensor>,
    pub beta: Vec<Tensor>,
}

impl BsaRows {
    /// Standard BN init: gamma = 1, beta = 0.
    pub fn init(m: usize, widths: &[usize]) -> Self {
        BsaRows {
            gamma: widths.iter().map(|&w| Tensor::full(&[m, w], 1.0)).collect(),
            beta: widths.iter().map(|&w| Tensor::zeros(&[m, w])).collect(),
        }
    }
}

/// Complete model state. `bank` holds the rows trained in the current
/// regime (the frozen pretrained rows in transfer regimes); new-class rows
/// come from `transfer` or `bsa` when present.
///
/// `class_ids` maps local row index -> global class id; all network-facing
/// ids are local.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
    pub gen: GeneratorParams,
    pub bank: CbnBank,
    pub disc: DiscriminatorParams,
    pub transfer: Option<TransferBlock>,
    pub bsa: Option<BsaRows>,
    pub class_ids: Vec<usize>,
}

impl ModelState {
    pub fn fresh(
        gen_spec: GeneratorSpec,
        disc_spec: DiscriminatorSpec,
        class_ids: Vec<usize>,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        assert_eq!(disc_spec.num_classes, class_ids.len());
        let gen = GeneratorParams::init(&gen_spec, rng);
        let bank = CbnBank::init(class_ids.len(), &gen_spec.hidden);
        let disc = DiscriminatorParams::init(&disc_spec, rng);
        ModelState { gen_spec, disc_spec, gen, bank, disc, transfer: None, bsa: None, class_ids }
    }

    pub fn num_layers(&self) -> usize {
        self.gen_spec.hidden.len()
    }

    pub fn local_class(&self, global: usize) -> Result<usize, TrainError> {
        self.class_ids
            .iter()
            .position(|&g| g == global)
            .ok_or(TrainError::ClassAbsent { class: global })
    }

    /// Plain-value `(gamma, beta)` matrices covering every local class for
    /// one layer: pretrained rows first, then any propagated/BSA rows.
    pub fn layer_matrices(&self, layer: usize) -> (Tensor, Tensor) {
        match (&self.transfer, &self.bsa) {
            (Some(block), _) => {
                let mut g_rows: Vec<Vec<f64>> = (0..self.bank.num_classes())
                    .map(|y| self.bank.gamma[layer].row(y).to_vec())
                    .collect();
                let mut b_rows: Vec<Vec<f64>> = (0..self.bank.num_classes())
                    .map(|y| self.bank.beta[layer].row(y).to_vec())
                    .collect();
                for j in 0..block.config.m_new {
                    let (g, b) = block.propagate_params(layer, j).expect("in-range");
                    g_rows.push(g);
                    b_rows.push(b);
                }
                (
                    Tensor::from_rows(&g_rows).expect("uniform widths"),
                    Tensor::from_rows(&b_rows).expect("uniform widths"),
                )
            }
            (None, Some(bsa)) => {
                let mut g_rows: Vec<Vec<f64>> = (0..self.bank.num_classes())
                    .map(|y| self.bank.gamma[layer].row(y).to_vec())
                    .collect();
                let mut b_rows: Vec<Vec<f64>> = (0..self.bank.num_classes())
                    .map(|y| self.bank.beta[layer].row(y).to_vec())
                    .collect();
                for j in 0..bsa.gamma[layer].rows() {
                    g_rows.push(bsa.gamma[layer].row(j).to_vec());
                    b_rows.push(bsa.beta[layer].row(j).to_vec());
                }
                (
                    Tensor::from_rows(&g_rows).expect("uniform widths"),
                    Tensor::from_rows(&b_rows).expect("uniform widths"),
                )
            }
            (None, None) => (self.bank.gamma[layer].clone(), self.bank.beta[layer].clone()),
        }
    }

    /// Forward pass with every parameter taken as a constant.
    pub fn forward_values(&self, z: &Tensor, local_ids: &[usize]) -> Result<Tensor, TrainError> {
        let mut tape = Tape::new();
        let gen = GenVars {
            weights: self.gen.weights.iter().map(|w| tape.constant(w.clone())).collect(),
            out_w: tape.constant(self.gen.out_w.clone()),
            out_b: tape.constant(self.gen.out_b.clone()),
        };
        let cbn: Vec<(Var, Var)> = (0..self.num_layers())
            .map(|l| {
                let (g, b) = self.layer_matrices(l);
                (tape.constant(g), tape.constant(b))
            })
            .collect();
        let zv = tape.constant(z.clone());
        let out = generator_forward(&mut tape, &self.gen_spec, &gen, &cbn, zv, local_ids)?;
        Ok(tape.value(out).clone())
    }

    /// Generates `n` samples for one global class with a seeded latent
    /// batch; deterministic per (state, class, n, seed).
    pub fn generate_class(
        &self,
        global_class: usize,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Point>, TrainError> {
        use rand::Rng;
        use rand::SeedableRng;
        let local = self.local_class(global_class)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z = Tensor::matrix(
            n,
            self.gen_spec.latent_dim,
            (0..n * self.gen_spec.latent_dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        )
        .expect("sized data");
        let out = self.forward_values(&z, &vec![local; n])?;
        Ok((0..n).map(|i| [out.at2(i, 0), out.at2(i, 1)]).collect())
    }
}

/// Every generator-side tensor the trainer can select as trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GParam {
    GenWeight(usize),
    GenOutW,
    GenOutB,
    BankGamma(usize),
    BankBeta(usize),
    ScoreGamma(usize),
    ScoreBeta(usize),
    ResGamma(usize),
    ResBeta(usize),
    PriorGamma(usize),
    PriorBeta(usize),
    BsaGamma(usize),
    BsaBeta(usize),
}

impl GParam {
    pub fn name(&self) -> String {
        match self {
            GParam::GenWeight(l) => format!("gen.w{l}"),
            GParam::GenOutW => "gen.out_w".into(),
            GParam::GenOutB => "gen.out_b".into(),
            GParam::BankGamma(l) => format!("bank.{l}.gamma"),
            GParam::BankBeta(l) => format!("bank.{l}.beta"),
            GParam::ScoreGamma(s) => format!("transfer.scores.{s}.gamma"),
            GParam::ScoreBeta(s) => format!("transfer.scores.{s}.beta"),
            GParam::ResGamma(l) => format!("transfer.res.{l}.gamma"),
            GParam::ResBeta(l) => format!("transfer.res.{l}.beta"),
            GParam::PriorGamma(l) => format!("transfer.prior.{l}.gamma"),
            GParam::PriorBeta(l) => format!("transfer.prior.{l}.beta"),
            GParam::BsaGamma(l) => format!("bsa.{l}.gamma"),
            GParam::BsaBeta(l) => format!("bsa.{l}.beta"),
        }
    }

    pub fn get(&self, state: &ModelState) -> Tensor {
        match *self {
            GParam::GenWeight(l) => state.gen.weights[l].clone(),
            GParam::GenOutW => state.gen.out_w.clone(),
            GParam::GenOutB => state.gen.out_b.clone(),
            GParam::BankGamma(l) => state.bank.gamma[l].clone(),
            GParam::BankBeta(l) => state.bank.beta[l].clone(),
            GParam::ScoreGamma(s) => {
                state.transfer.as_ref().expect("transfer block").scores.gamma_slot(s).clone()
            }
            GParam::ScoreBeta(s) => {
                state.transfer.as_ref().expect("transfer block").scores.beta_slot(s).clone()
            }
            GParam::ResGamma(l) => {
                state.transfer.as_ref().expect("transfer block").residuals.r_gamma[l].clone()
            }
            GParam::ResBeta(l) => {
                state.transfer.as_ref().expect("transfer block").residuals.r_beta[l].clone()
            }
            GParam::PriorGamma(l) => {
                state.transfer.as_ref().expect("transfer block").prior.gamma_hat[l].clone()
            }
            GParam::PriorBeta(l) => {
                state.transfer.as_ref().expect("transfer block").prior.beta_hat[l].clone()
            }
            GParam::BsaGamma(l) => state.bsa.as_ref().expect("bsa rows").gamma[l].clone(),
            GParam::BsaBeta(l) => state.bsa.as_ref().expect("bsa rows").beta[l].clone(),
        }
    }

    pub fn set(&self, state: &mut ModelState, value: Tensor) {
        match *self {
            GParam::GenWeight(l) => state.gen.weights[l] = value,
            GParam::GenOutW => state.gen.out_w = value,
            GParam::GenOutB => state.gen.out_b = value,
            GParam::BankGamma(l) => state.bank.gamma[l] = value,
            GParam::BankBeta(l) => state.bank.beta[l] = value,
            GParam::ScoreGamma(s) => {
                *state.transfer.as_mut().expect("transfer block").scores.gamma_slot_mut(s) =
                    value;
            }
            GParam::ScoreBeta(s) => {
                *state.transfer.as_mut().expect("transfer block").scores.beta_slot_mut(s) = value;
            }
            GParam::ResGamma(l) => {
                state.transfer.as_mut().expect("transfer block").residuals.r_gamma[l] = value;
            }
            GParam::ResBeta(l) => {
                state.transfer.as_mut().expect("transfer block").residuals.r_beta[l] = value;
            }
            GParam::PriorGamma(l) => {
                state.transfer.as_mut().expect("transfer block").prior.gamma_hat[l] = value;
            }
            GParam::PriorBeta(l) => {
                state.transfer.as_mut().expect("transfer block").prior.beta_hat[l] = value;
            }
            GParam::BsaGamma(l) => state.bsa.as_mut().expect("bsa rows").gamma[l] = value,
            GParam::BsaBeta(l) => state.bsa.as_mut().expect("bsa rows").beta[l] = value,
        }
    }
}

/// Ordered discriminator parameter vector (weights, biases, embed, head).
pub fn disc_params_vec(disc: &DiscriminatorParams) -> Vec<Tensor> {
    let mut v: Vec<Tensor> = disc.weights.clone();
    v.extend(disc.biases.iter().cloned());
    v.push(disc.embed.clone());
    v.push(disc.head_w.clone());
    v.push(disc.head_b.clone());
    v
}

pub fn disc_params_names(disc: &DiscriminatorParams) -> Vec<String> {
    let mut names: Vec<String> =
        (0..disc.weights.len()).map(|l| format!("disc.w{l}")).collect();
    names.extend((0..disc.biases.len()).map(|l| format!("disc.b{l}")));
    names.push("disc.embed".into());
    names.push("disc.head_w".into());
    names.push("disc.head_b".into());
    names
}

pub fn set_disc_params(disc: &mut DiscriminatorParams, values: Vec<Tensor>) {
    let h = disc.weights.len();
    let mut it = values.into_iter();
    for w in disc.weights.iter_mut() {
        *w = it.next().expect("weights");
    }
    for b in disc.biases.iter_mut() {
        *b = it.next().expect("biases");
    }
    disc.embed = it.next().expect("embed");
    disc.head_w = it.next().expect("head_w");
    disc.head_b = it.next().expect("head_b");
    assert!(it.next().is_none());
    let _ = h;
}

/// Registers generator-side tape nodes: a leaf for each trainable tensor
/// (in list order), constants for everything else it touches.
pub struct GTapeBuild {
    pub leaves: Vec<Var>,
    pub gen_vars: GenVars,
    pub cbn_vars: Vec<(Var, Var)>,
    pub transfer_vars: Option<TransferVars>,
}

pub fn build_g_tape(
    tape: &mut Tape,
    state: &ModelState,
    trainable: &[GParam],
) -> Result<GTapeBuild, TrainError> {
    let leaves: Vec<Var> = trainable.iter().map(|p| tape.leaf(p.get(state))).collect();
    let var_of = |tape: &mut Tape, p: GParam| -> Var {
        match trainable.iter().position(|q| *q == p) {
            Some(i) => leaves[i],
            None => tape.constant(p.get(state)),
        }
    };

    let gen_vars = GenVars {
        weights: (0..state.num_layers())
            .map(|l| var_of(tape, GParam::GenWeight(l)))
            .collect(),
        out_w: var_of(tape, GParam::GenOutW),
        out_b: var_of(tape, GParam::GenOutB),
    };

    let mut cbn_vars = Vec::with_capacity(state.num_layers());
    let mut transfer_vars = None;
    match (&state.transfer, &state.bsa) {
        (Some(block), _) => {
            let slots = block.scores.stored_pairs();
            let tv = TransferVars::from_parts(
                (0..slots).map(|s| var_of(tape, GParam::ScoreGamma(s))).collect(),
                (0..slots).map(|s| var_of(tape, GParam::ScoreBeta(s))).collect(),
                (0..state.num_layers()).map(|l| var_of(tape, GParam::ResGamma(l))).collect(),
                (0..state.num_layers()).map(|l| var_of(tape, GParam::ResBeta(l))).collect(),
                (0..state.num_layers()).map(|l| var_of(tape, GParam::PriorGamma(l))).collect(),
                (0..state.num_layers()).map(|l| var_of(tape, GParam::PriorBeta(l))).collect(),
                block.scores.shared(),
            );
            for l in 0..state.num_layers() {
                let old_g = tape.constant(state.bank.gamma[l].clone());
                let old_b = tape.constant(state.bank.beta[l].clone());
                let (new_g, new_b) =
                    tv.propagate_layer(tape, l, block.config.residuals_enabled)?;
                let g = tape.concat_rows(old_g, new_g)?;
                let b = tape.concat_rows(old_b, new_b)?;
                cbn_vars.push((g, b));
            }
            transfer_vars = Some(tv);
        }
        (None, Some(_)) => {
            for l in 0..state.num_layers() {
                let old_g = tape.constant(state.bank.gamma[l].clone());
                let old_b = tape.constant(state.bank.beta[l].clone());
                let new_g = var_of(tape, GParam::BsaGamma(l));
                let new_b = var_of(tape, GParam::BsaBeta(l));
                let g = tape.concat_rows(old_g, new_g)?;
                let b = tape.concat_rows(old_b, new_b)?;
                cbn_vars.push((g, b));
            }
        }
        (None, None) => {
            for l in 0..state.num_layers() {
                cbn_vars.push((var_of(tape, GParam::BankGamma(l)), var_of(tape, GParam::BankBeta(l))));
            }
        }
    }

    Ok(GTapeBuild { leaves, gen_vars, cbn_vars, transfer_vars })
}

fn usize_list(values: &[usize]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Writes the full model into checkpoint meta + tensors.
pub fn state_into_checkpoint(state: &ModelState, ckpt: &mut Checkpoint) {
    let gs = &state.gen_spec;
    ckpt.set_meta("gen.latent_dim", gs.latent_dim);
    ckpt.set_meta("gen.hidden", usize_list(&gs.hidden));
    ckpt.set_meta("gen.output_dim", gs.output_dim);
    ckpt.set_meta_f64("gen.eps", gs.eps);
    ckpt.set_meta_f64("gen.leaky_slope", gs.leaky_slope);
    ckpt.set_meta_f64("gen.output_scale", gs.output_scale);
    let ds = &state.disc_spec;
    ckpt.set_meta("disc.input_dim", ds.input_dim);
    ckpt.set_meta("disc.hidden", usize_list(&ds.hidden));
    ckpt.set_meta("disc.num_classes", ds.num_classes);
    ckpt.set_meta_f64("disc.leaky_slope", ds.leaky_slope);
    ckpt.set_meta("classes", usize_list(&state.class_ids));
    ckpt.set_meta("bank.num_classes", state.bank.num_classes());

    for (l, w) in state.gen.weights.iter().enumerate() {
        ckpt.insert_tensor(format!("gen.w{l}"), w.clone());
    }
    ckpt.insert_tensor("gen.out_w", state.gen.out_w.clone());
    ckpt.insert_tensor("gen.out_b", state.gen.out_b.clone());
    for l in 0..state.bank.num_layers() {
        ckpt.insert_tensor(format!("bank.{l}.gamma"), state.bank.gamma[l].clone());
        ckpt.insert_tensor(format!("bank.{l}.beta"), state.bank.beta[l].clone());
    }
    for (l, w) in state.disc.weights.iter().enumerate() {
        ckpt.insert_tensor(format!("disc.w{l}"), w.clone());
    }
    for (l, b) in state.disc.biases.iter().enumerate() {
        ckpt.insert_tensor(format!("disc.b{l}"), b.clone());
    }
    ckpt.insert_tensor("disc.embed", state.disc.embed.clone());
    ckpt.insert_tensor("disc.head_w", state.disc.head_w.clone());
    ckpt.insert_tensor("disc.head_b", state.disc.head_b.clone());

    ckpt.set_meta("transfer.present", state.transfer.is_some());
    if let Some(block) = &state.transfer {
        let c = &block.config;
        ckpt.set_meta_f64("transfer.lambda_r", c.lambda_r);
        ckpt.set_meta_f64("transfer.lambda_s", c.lambda_s);
        ckpt.set_meta("transfer.prior_tunable", c.prior_tunable);
        ckpt.set_meta("transfer.residuals_enabled", c.residuals_enabled);
        ckpt.set_meta("transfer.shared_scores", c.shared_scores);
        ckpt.set_meta("transfer.n_old", c.n_old);
        ckpt.set_meta("transfer.m_new", c.m_new);
        for s in 0..block.scores.stored_pairs() {
            ckpt.insert_tensor(
                format!("transfer.scores.{s}.gamma"),
                block.scores.gamma_slot(s).clone(),
            );
            ckpt.insert_tensor(
                format!("transfer.scores.{s}.beta"),
                block.scores.beta_slot(s).clone(),
            );
        }
        for l in 0..block.num_layers() {
            ckpt.insert_tensor(format!("transfer.res.{l}.gamma"), block.residuals.r_gamma[l].clone());
            ckpt.insert_tensor(format!("transfer.res.{l}.beta"), block.residuals.r_beta[l].clone());
            ckpt.insert_tensor(format!("transfer.prior.{l}.gamma"), block.prior.gamma_hat[l].clone());
            ckpt.insert_tensor(format!("transfer.prior.{l}.beta"), block.prior.beta_hat[l].clone());
        }
    }
    ckpt.set_meta("bsa.present", state.bsa.is_some());
    if let Some(bsa) = &state.bsa {
        for l in 0..bsa.gamma.len() {
            ckpt.insert_tensor(format!("bsa.{l}.gamma"), bsa.gamma[l].clone());
            ckpt.insert_tensor(format!("bsa.{l}.beta"), bsa.beta[l].clone());
        }
    }
}

/// Rebuilds a [`ModelState`] from a checkpoint.
pub fn state_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelState, TrainError> {
    let gen_spec = GeneratorSpec {
        latent_dim: ckpt.meta_usize("gen.latent_dim")?,
        hidden: ckpt.meta_usize_list("gen.hidden")?,
        output_dim: ckpt.meta_usize("gen.output_dim")?,
        eps: ckpt.meta_f64("gen.eps")?,
        leaky_slope: ckpt.meta_f64("gen.leaky_slope")?,
        output_scale: ckpt.meta_f64("gen.output_scale")?,
    };
    let disc_spec = DiscriminatorSpec {
        input_dim: ckpt.meta_usize("disc.input_dim")?,
        hidden: ckpt.meta_usize_list("disc.hidden")?,
        num_classes: ckpt.meta_usize("disc.num_classes")?,
        leaky_slope: ckpt.meta_f64("disc.leaky_slope")?,
    };
    let layers = gen_spec.hidden.len();
    let gen = GeneratorParams {
        weights: (0..layers)
            .map(|l| ckpt.tensor(&format!("gen.w{l}")).cloned())
            .collect::<Result<_, _>>()?,
        out_w: ckpt.tensor("gen.out_w")?.clone(),
        out_b: ckpt.tensor("gen.out_b")?.clone(),
    };
    let bank = CbnBank {
        gamma: (0..layers)
            .map(|l| ckpt.tensor(&format!("bank.{l}.gamma")).cloned())
            .collect::<Result<_, _>>()?,
        beta: (0..layers)
            .map(|l| ckpt.tensor(&format!("bank.{l}.beta")).cloned())
            .collect::<Result<_, _>>()?,
    };
    let disc = DiscriminatorParams {
        weights: (0..disc_spec.hidden.len())
            .map(|l| ckpt.tensor(&format!("disc.w{l}")).cloned())
            .collect::<Result<_, _>>()?,
        biases: (0..disc_spec.hidden.len())
            .map(|l| ckpt.tensor(&format!("disc.b{l}")).cloned())
            .collect::<Result<_, _>>()?,
        embed: ckpt.tensor("disc.embed")?.clone(),
        head_w: ckpt.tensor("disc.head_w")?.clone(),
        head_b: ckpt.tensor("disc.head_b")?.clone(),
    };
    let transfer = if ckpt.meta_bool("transfer.present")? {
        let config = TransferConfig {
            lambda_r: ckpt.meta_f64("transfer.lambda_r")?,
            lambda_s: ckpt.meta_f64("transfer.lambda_s")?,
            prior_tunable: ckpt.meta_bool("transfer.prior_tunable")?,
            residuals_enabled: ckpt.meta_bool("transfer.residuals_enabled")?,
            shared_scores: ckpt.meta_bool("transfer.shared_scores")?,
            n_old: ckpt.meta_usize("transfer.n_old")?,
            m_new: ckpt.meta_usize("transfer.m_new")?,
        };
        let slots = if config.shared_scores { 1 } else { layers };
        let scores = ScoreSet::from_parts(
            (0..slots)
                .map(|s| ckpt.tensor(&format!("transfer.scores.{s}.gamma")).cloned())
                .collect::<Result<_, _>>()?,
            (0..slots)
                .map(|s| ckpt.tensor(&format!("transfer.scores.{s}.beta")).cloned())
                .collect::<Result<_, _>>()?,
            config.shared_scores,
            layers,
        );
        let residuals = ResidualSet {
            r_gamma: (0..layers)
                .map(|l| ckpt.tensor(&format!("transfer.res.{l}.gamma")).cloned())
                .collect::<Result<_, _>>()?,
            r_beta: (0..layers)
                .map(|l| ckpt.tensor(&format!("transfer.res.{l}.beta")).cloned())
                .collect::<Result<_, _>>()?,
            enabled: config.residuals_enabled,
        };
        let prior = crate::transfer::PriorBank {
            gamma_hat: (0..layers)
                .map(|l| ckpt.tensor(&format!("transfer.prior.{l}.gamma")).cloned())
                .collect::<Result<_, _>>()?,
            beta_hat: (0..layers)
                .map(|l| ckpt.tensor(&format!("transfer.prior.{l}.beta")).cloned())
                .collect::<Result<_, _>>()?,
            tunable: config.prior_tunable,
        };
        Some(TransferBlock { prior, scores, residuals, config })
    } else {
        None
    };
    let bsa = if ckpt.meta_bool("bsa.present")? {
        Some(BsaRows {
            gamma: (0..layers)
                .map(|l| ckpt.tensor(&format!("bsa.{l}.gamma")).cloned())
                .collect::<Result<_, _>>()?,
            beta: (0..layers)
                .map(|l| ckpt.tensor(&format!("bsa.{l}.beta")).cloned())
                .collect::<Result<_, _>>()?,
        })
    } else {
        None
    };
    Ok(ModelState {
        gen_spec,
        disc_spec,
        gen,
        bank,
        disc,
        transfer,
        bsa,
        class_ids: ckpt.meta_usize_list("classes")?,
    })
}
