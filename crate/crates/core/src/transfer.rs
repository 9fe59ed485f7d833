//! Knowledge propagation across classes.
//!
//! New-class BN parameters are built as learned linear combinations of a
//! tunable copy of the source classes' BN parameters (the prior), scored
//! per layer and per parameter type, plus optional residual corrections:
//!
//! ```text
//! gamma[new j, layer l] = S_gamma[l][j, :] . gamma_hat[l] + r_gamma[l][j, :]
//! ```
//!
//! The original pretrained rows are never touched; old classes always
//! resolve to them. The scores carry an l1 penalty and the residuals an l2
//! penalty, both returned by [`transfer_regularization`].

use thiserror::Error;

use crate::condnet::CbnBank;
use crate::gradcore::{Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("new-class index {index} out of range (M = {m})")]
    NewClassOutOfRange { index: usize, m: usize },
    #[error("class id {class} out of range (N + M = {total})")]
    ClassOutOfRange { class: usize, total: usize },
    #[error("layer {layer} out of range ({layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("top-k of {k} exceeds source count {n}")]
    TopKTooLarge { k: usize, n: usize },
}

/// Tunable copy of the pretrained per-layer BN rows (the pseudo-classes).
///
/// Initialized as an exact copy of the pretrained bank; the original rows
/// stay untouched no matter how the copy is updated.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBank {
    pub gamma_hat: Vec<Tensor>,
    pub beta_hat: Vec<Tensor>,
    pub tunable: bool,
}

impl PriorBank {
    pub fn from_bank(bank: &CbnBank, tunable: bool) -> Self {
        PriorBank { gamma_hat: bank.gamma.clone(), beta_hat: bank.beta.clone(), tunable }
    }
}

/// Per-layer similarity scores, one `[M x N]` matrix per parameter type.
///
/// In shared mode a single matrix pair is stored and every layer resolves
/// to it, so an update through any layer is an update through all.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    s_gamma: Vec<Tensor>,
    s_beta: Vec<Tensor>,
    shared_across_layers: bool,
    num_layers: usize,
}

impl ScoreSet {
    /// Uniform init: every entry 1/N, making each new class start as the
    /// mean pseudo-class.
    pub fn uniform(n: usize, m: usize, num_layers: usize, shared: bool) -> Self {
        let stored = if shared { 1 } else { num_layers };
        let fill = || Tensor::full(&[m, n], 1.0 / n as f64);
        ScoreSet {
            s_gamma: (0..stored).map(|_| fill()).collect(),
            s_beta: (0..stored).map(|_| fill()).collect(),
            shared_across_layers: shared,
            num_layers,
        }
    }

    pub fn from_parts(
        s_gamma: Vec<Tensor>,
        s_beta: Vec<Tensor>,
        shared: bool,
        num_layers: usize,
    ) -> Self {
        assert_eq!(s_gamma.len(), if shared { 1 } else { num_layers });
        assert_eq!(s_gamma.len(), s_beta.len());
        ScoreSet { s_gamma, s_beta, shared_across_layers: shared, num_layers }
    }

    pub fn shared(&self) -> bool {
        self.shared_across_layers
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Number of distinct stored matrix pairs (1 when shared).
    pub fn stored_pairs(&self) -> usize {
        self.s_gamma.len()
    }

    fn slot(&self, layer: usize) -> usize {
        if self.shared_across_layers {
            0
        } else {
            layer
        }
    }

    pub fn gamma(&self, layer: usize) -> &Tensor {
        &self.s_gamma[self.slot(layer)]
    }

    pub fn beta(&self, layer: usize) -> &Tensor {
        &self.s_beta[self.slot(layer)]
    }

    pub fn gamma_mut(&mut self, layer: usize) -> &mut Tensor {
        let s = self.slot(layer);
        &mut self.s_gamma[s]
    }

    pub fn beta_mut(&mut self, layer: usize) -> &mut Tensor {
        let s = self.slot(layer);
        &mut self.s_beta[s]
    }

    /// Storage-slot accessors used by the trainer and checkpointing
    /// (slot 0 is the only slot in shared mode).
    pub fn gamma_slot(&self, slot: usize) -> &Tensor {
        &self.s_gamma[slot]
    }

    pub fn beta_slot(&self, slot: usize) -> &Tensor {
        &self.s_beta[slot]
    }

    pub fn gamma_slot_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.s_gamma[slot]
    }

    pub fn beta_slot_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.s_beta[slot]
    }
}

/// Additive per-new-class corrections to the propagated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub r_gamma: Vec<Tensor>,
    pub r_beta: Vec<Tensor>,
    pub enabled: bool,
}

impl ResidualSet {
    pub fn zeros(m: usize, widths: &[usize], enabled: bool) -> Self {
        ResidualSet {
            r_gamma: widths.iter().map(|&w| Tensor::zeros(&[m, w])).collect(),
            r_beta: widths.iter().map(|&w| Tensor::zeros(&[m, w])).collect(),
            enabled,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.r_gamma.iter().chain(&self.r_beta).all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

/// Flag set selecting one variant of the transfer block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferConfig {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub prior_tunable: bool,
    pub residuals_enabled: bool,
    pub shared_scores: bool,
    pub n_old: usize,
    pub m_new: usize,
}

impl TransferConfig {
    /// The full method: tunable prior, residuals, per-layer scores.
    pub fn full(n_old: usize, m_new: usize) -> Self {
        TransferConfig {
            lambda_r: 1e-3,
            lambda_s: 1e-3,
            prior_tunable: true,
            residuals_enabled: true,
            shared_scores: false,
            n_old,
            m_new,
        }
    }
}

/// The whole transfer block: prior copy, scores, residuals, flags.
///
/// After training, the block can be baked into plain extended BN rows and
/// discarded; see [`bake_extended_bank`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferBlock {
    pub prior: PriorBank,
    pub scores: ScoreSet,
    pub residuals: ResidualSet,
    pub config: TransferConfig,
}

impl TransferBlock {
    /// Builds a fresh block over a pretrained bank: prior = exact copy,
    /// scores uniform at 1/N, residuals zero.
    pub fn new(bank: &CbnBank, config: TransferConfig) -> Self {
        assert_eq!(bank.num_classes(), config.n_old, "bank row count vs config N");
        let widths: Vec<usize> = bank.gamma.iter().map(Tensor::cols).collect();
        TransferBlock {
            prior: PriorBank::from_bank(bank, config.prior_tunable),
            scores: ScoreSet::uniform(
                config.n_old,
                config.m_new,
                bank.num_layers(),
                config.shared_scores,
            ),
            residuals: ResidualSet::zeros(config.m_new, &widths, config.residuals_enabled),
            config,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.prior.gamma_hat.len()
    }

    /// Propagated `(gamma, beta)` rows for new class `j` at `layer`:
    /// scores dot prior, plus the residual when enabled.
    pub fn propagate_params(
        &self,
        layer: usize,
        j: usize,
    ) -> Result<(Vec<f64>, Vec<f64>), TransferError> {
        if layer >= self.num_layers() {
            return Err(TransferError::LayerOutOfRange { layer, layers: self.num_layers() });
        }
        if j >= self.config.m_new {
            return Err(TransferError::NewClassOutOfRange { index: j, m: self.config.m_new });
        }
        let gamma = propagate_row(
            self.scores.gamma(layer),
            &self.prior.gamma_hat[layer],
            self.residuals.enabled.then(|| &self.residuals.r_gamma[layer]),
            j,
        );
        let beta = propagate_row(
            self.scores.beta(layer),
            &self.prior.beta_hat[layer],
            self.residuals.enabled.then(|| &self.residuals.r_beta[layer]),
            j,
        );
        Ok((gamma, beta))
    }
}

fn propagate_row(scores: &Tensor, prior: &Tensor, residual: Option<&Tensor>, j: usize) -> Vec<f64> {
    let n = prior.rows();
    let c = prior.cols();
    let mut out = vec![0.0; c];
    for k in 0..n {
        let s = scores.at2(j, k);
        for (slot, &p) in out.iter_mut().zip(prior.row(k)) {
            *slot += s * p;
        }
    }
    if let Some(r) = residual {
        for (slot, &rv) in out.iter_mut().zip(r.row(j)) {
            *slot += rv;
        }
    }
    out
}

/// Resolves any class id to its per-layer `(gamma, beta)` rows.
///
/// Old classes (`id < N`) return the original pretrained rows, never the
/// tunable copies; new classes return the propagated rows.
pub fn resolve_class(
    bank: &CbnBank,
    block: &TransferBlock,
    class_id: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, TransferError> {
    let n = block.config.n_old;
    let total = n + block.config.m_new;
    if class_id >= total {
        return Err(TransferError::ClassOutOfRange { class: class_id, total });
    }
    let mut out = Vec::with_capacity(block.num_layers());
    for layer in 0..block.num_layers() {
        if class_id < n {
            out.push((
                bank.gamma[layer].row(class_id).to_vec(),
                bank.beta[layer].row(class_id).to_vec(),
            ));
        } else {
            out.push(block.propagate_params(layer, class_id - n)?);
        }
    }
    Ok(out)
}

/// Bakes the block into an extended bank with `N + M` rows per layer.
///
/// The first `N` rows are the original pretrained rows; the last `M` are
/// the propagated new-class rows. Scores and prior can be discarded after.
pub fn bake_extended_bank(bank: &CbnBank, block: &TransferBlock) -> CbnBank {
    let mut gamma = Vec::with_capacity(block.num_layers());
    let mut beta = Vec::with_capacity(block.num_layers());
    for layer in 0..block.num_layers() {
        let mut g_rows: Vec<Vec<f64>> =
            (0..bank.num_classes()).map(|y| bank.gamma[layer].row(y).to_vec()).collect();
        let mut b_rows: Vec<Vec<f64>> =
            (0..bank.num_classes()).map(|y| bank.beta[layer].row(y).to_vec()).collect();
        for j in 0..block.config.m_new {
            let (g, b) = block.propagate_params(layer, j).expect("in-range");
            g_rows.push(g);
            b_rows.push(b);
        }
        gamma.push(Tensor::from_rows(&g_rows).expect("uniform widths"));
        beta.push(Tensor::from_rows(&b_rows).expect("uniform widths"));
    }
    CbnBank { gamma, beta }
}

/// Regularization terms of the transfer loss: `L_r` sums squared l2 norms
/// of every residual row, `L_s` sums l1 norms of every score row, both
/// over all layers and new classes.
pub fn transfer_regularization(block: &TransferBlock) -> (f64, f64) {
    let mut l_r = 0.0;
    for t in block.residuals.r_gamma.iter().chain(&block.residuals.r_beta) {
        l_r += t.data().iter().map(|v| v * v).sum::<f64>();
    }
    let mut l_s = 0.0;
    for layer in 0..block.num_layers() {
        l_s += block.scores.gamma(layer).data().iter().map(|v| v.abs()).sum::<f64>();
        l_s += block.scores.beta(layer).data().iter().map(|v| v.abs()).sum::<f64>();
    }
    (l_r, l_s)
}

/// One named trainable tensor of the block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableParam {
    pub name: String,
    pub count: usize,
}

/// The trainable tensors a block exposes under its flags: scores always,
/// residuals when enabled, the prior copy when tunable.
///
/// Returns the list plus the per-new-class score+residual parameter count,
/// which grows linearly in the number of new classes.
pub fn trainable_parameters(block: &TransferBlock) -> (Vec<TrainableParam>, usize) {
    let mut list = Vec::new();
    for slot in 0..block.scores.stored_pairs() {
        list.push(TrainableParam {
            name: format!("scores.{slot}.gamma"),
            count: block.scores.gamma_slot(slot).len(),
        });
        list.push(TrainableParam {
            name: format!("scores.{slot}.beta"),
            count: block.scores.beta_slot(slot).len(),
        });
    }
    if block.residuals.enabled {
        for (layer, (g, b)) in
            block.residuals.r_gamma.iter().zip(&block.residuals.r_beta).enumerate()
        {
            list.push(TrainableParam { name: format!("res.{layer}.gamma"), count: g.len() });
            list.push(TrainableParam { name: format!("res.{layer}.beta"), count: b.len() });
        }
    }
    if block.prior.tunable {
        for (layer, (g, b)) in
            block.prior.gamma_hat.iter().zip(&block.prior.beta_hat).enumerate()
        {
            list.push(TrainableParam { name: format!("prior.{layer}.gamma"), count: g.len() });
            list.push(TrainableParam { name: format!("prior.{layer}.beta"), count: b.len() });
        }
    }
    (list, per_new_class_count(block))
}

/// Score + residual parameters attributable to a single new class.
pub fn per_new_class_count(block: &TransferBlock) -> usize {
    let n = block.config.n_old;
    let layers = block.num_layers();
    let score_part = if block.scores.shared() { 2 * n } else { layers * 2 * n };
    let residual_part: usize = if block.residuals.enabled {
        block.residuals.r_gamma.iter().map(|t| 2 * t.cols()).sum()
    } else {
        0
    };
    score_part + residual_part
}

/// Total trainable parameter count for the block (scores + residuals
/// scale with M; a tunable prior adds an M-independent offset).
pub fn total_trainable_count(block: &TransferBlock) -> usize {
    trainable_parameters(block).0.iter().map(|p| p.count).sum()
}

/// One exported score entry: new class `new_class` ranks source class
/// `source_class` at `rank` (0-based) by absolute score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreExport {
    pub layer: usize,
    pub param_type: &'static str,
    pub new_class: usize,
    pub rank: usize,
    pub source_class: usize,
    pub score: f64,
}

/// Top-k source classes per (layer, parameter type, new class), ordered by
/// descending |score| with ties broken toward the lower source index.
pub fn export_scores(block: &TransferBlock, k: usize) -> Result<Vec<ScoreExport>, TransferError> {
    let n = block.config.n_old;
    if k > n {
        return Err(TransferError::TopKTooLarge { k, n });
    }
    let mut out = Vec::new();
    for layer in 0..block.num_layers() {
        for (param_type, scores) in
            [("gamma", block.scores.gamma(layer)), ("beta", block.scores.beta(layer))]
        {
            for j in 0..block.config.m_new {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    scores.at2(j, b).abs().total_cmp(&scores.at2(j, a).abs()).then(a.cmp(&b))
                });
                for (rank, &src) in order.iter().take(k).enumerate() {
                    out.push(ScoreExport {
                        layer,
                        param_type,
                        new_class: j,
                        rank,
                        source_class: src,
                        score: scores.at2(j, src),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// CSV rows for the score export interface:
/// `layer,param_type,new_class,rank,source_class,score`.
pub fn export_scores_csv(block: &TransferBlock, k: usize) -> Result<String, TransferError> {
    let mut s = String::from("layer,param_type,new_class,rank,source_class,score\n");
    for row in export_scores(block, k)? {
        s.push_str(&format!(
            "{},{},{},{},{},{:?}\n",
            row.layer, row.param_type, row.new_class, row.rank, row.source_class, row.score
        ));
    }
    Ok(s)
}

/// Tape handles for a block's tensors. Frozen tensors are still recorded
/// as leaves; the trainer simply never reads their gradients.
pub struct TransferVars {
    pub s_gamma: Vec<Var>,
    pub s_beta: Vec<Var>,
    pub r_gamma: Vec<Var>,
    pub r_beta: Vec<Var>,
    pub gamma_hat: Vec<Var>,
    pub beta_hat: Vec<Var>,
    shared: bool,
}

impl TransferVars {
    pub fn register(tape: &mut Tape, block: &TransferBlock) -> Self {
        TransferVars {
            s_gamma: block.scores.s_gamma.iter().map(|t| tape.leaf(t.clone())).collect(),
            s_beta: block.scores.s_beta.iter().map(|t| tape.leaf(t.clone())).collect(),
            r_gamma: block.residuals.r_gamma.iter().map(|t| tape.leaf(t.clone())).collect(),
            r_beta: block.residuals.r_beta.iter().map(|t| tape.leaf(t.clone())).collect(),
            gamma_hat: block.prior.gamma_hat.iter().map(|t| tape.leaf(t.clone())).collect(),
            beta_hat: block.prior.beta_hat.iter().map(|t| tape.leaf(t.clone())).collect(),
            shared: block.scores.shared(),
        }
    }

    pub fn from_parts(
        s_gamma: Vec<Var>,
        s_beta: Vec<Var>,
        r_gamma: Vec<Var>,
        r_beta: Vec<Var>,
        gamma_hat: Vec<Var>,
        beta_hat: Vec<Var>,
        shared: bool,
    ) -> Self {
        TransferVars { s_gamma, s_beta, r_gamma, r_beta, gamma_hat, beta_hat, shared }
    }

    fn slot(&self, layer: usize) -> usize {
        if self.shared {
            0
        } else {
            layer
        }
    }

    /// Propagated `[M x C]` new-class rows for one layer, on tape.
    pub fn propagate_layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        residuals_enabled: bool,
    ) -> Result<(Var, Var), crate::gradcore::GradError> {
        let s = self.slot(layer);
        let mut gamma = tape.matmul(self.s_gamma[s], self.gamma_hat[layer])?;
        let mut beta = tape.matmul(self.s_beta[s], self.beta_hat[layer])?;
        if residuals_enabled {
            gamma = tape.add(gamma, self.r_gamma[layer])?;
            beta = tape.add(beta, self.r_beta[layer])?;
        }
        Ok((gamma, beta))
    }

    /// `lambda_r * L_r + lambda_s * L_s` on tape, honoring the use flags.
    pub fn regularization_loss(
        &self,
        tape: &mut Tape,
        config: &TransferConfig,
        use_l1: bool,
        use_l2: bool,
        num_layers: usize,
    ) -> Result<Option<Var>, crate::gradcore::GradError> {
        let mut total: Option<Var> = None;
        if use_l2 && config.residuals_enabled && config.lambda_r > 0.0 {
            for r in self.r_gamma.iter().chain(&self.r_beta) {
                let sq = tape.square(*r)?;
                let s = tape.sum(sq)?;
                let term = tape.scale(s, config.lambda_r)?;
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
        }
        if use_l1 && config.lambda_s > 0.0 {
            for layer in 0..num_layers {
                let s = self.slot(layer);
                for scores in [self.s_gamma[s], self.s_beta[s]] {
                    let a = tape.abs(scores)?;
                    let sum = tape.sum(a)?;
                    let term = tape.scale(sum, config.lambda_s)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, term)?,
                        None => term,
                    });
                }
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn bank_from_rows(gamma_rows: &[Vec<f64>], beta_rows: &[Vec<f64>]) -> CbnBank {
        CbnBank {
            gamma: vec![Tensor::from_rows(gamma_rows).unwrap()],
            beta: vec![Tensor::from_rows(beta_rows).unwrap()],
        }
    }

    fn random_bank(rng: &mut ChaCha20Rng, n: usize, widths: &[usize]) -> CbnBank {
        CbnBank {
            gamma: widths
                .iter()
                .map(|&w| {
                    Tensor::matrix(n, w, (0..n * w).map(|_| rng.random_range(-1.0..2.0)).collect())
                        .unwrap()
                })
                .collect(),
            beta: widths
                .iter()
                .map(|&w| {
                    Tensor::matrix(n, w, (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .unwrap()
                })
                .collect(),
        }
    }

    fn randomize_block(block: &mut TransferBlock, rng: &mut ChaCha20Rng, range: f64) {
        for slot in 0..block.scores.stored_pairs() {
            for v in block.scores.gamma_slot_mut(slot).data_mut() {
                *v = rng.random_range(-range..range);
            }
            for v in block.scores.beta_slot_mut(slot).data_mut() {
                *v = rng.random_range(-range..range);
            }
        }
        if block.residuals.enabled {
            for t in block.residuals.r_gamma.iter_mut().chain(block.residuals.r_beta.iter_mut())
            {
                for v in t.data_mut() {
                    *v = rng.random_range(-range..range);
                }
            }
        }
    }

    #[test]
    fn one_hot_selection_plus_residual() {
        let bank = bank_from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]],
            &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]],
        );
        let mut block = TransferBlock::new(&bank, TransferConfig::full(3, 1));
        let s = block.scores.gamma_mut(0);
        s.set2(0, 0, 0.0);
        s.set2(0, 1, 0.0);
        s.set2(0, 2, 1.0);
        block.residuals.r_gamma[0].set2(0, 0, 0.1);
        block.residuals.r_gamma[0].set2(0, 1, -0.1);
        let (gamma, _) = block.propagate_params(0, 0).unwrap();
        assert!((gamma[0] - 2.1).abs() < 1e-15);
        assert!((gamma[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn convex_combination_of_two_sources() {
        let bank = bank_from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]],
            &vec![vec![0.0; 2]; 3],
        );
        let mut cfg = TransferConfig::full(3, 1);
        cfg.residuals_enabled = false;
        let mut block = TransferBlock::new(&bank, cfg);
        let s = block.scores.gamma_mut(0);
        s.set2(0, 0, 0.5);
        s.set2(0, 1, 0.5);
        s.set2(0, 2, 0.0);
        let (gamma, _) = block.propagate_params(0, 0).unwrap();
        assert_eq!(gamma, vec![0.5, 0.5]);
    }

    #[test]
    fn propagation_matches_double_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let bank = random_bank(&mut rng, 5, &[4, 4]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(5, 3));
        randomize_block(&mut block, &mut rng, 1.0);
        for layer in 0..2 {
            for j in 0..3 {
                let (gamma, beta) = block.propagate_params(layer, j).unwrap();
                for c in 0..4 {
                    let mut eg = block.residuals.r_gamma[layer].at2(j, c);
                    let mut eb = block.residuals.r_beta[layer].at2(j, c);
                    for k in 0..5 {
                        eg += block.scores.gamma(layer).at2(j, k)
                            * block.prior.gamma_hat[layer].at2(k, c);
                        eb += block.scores.beta(layer).at2(j, k)
                            * block.prior.beta_hat[layer].at2(k, c);
                    }
                    assert!((gamma[c] - eg).abs() < 1e-12);
                    assert!((beta[c] - eb).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn old_classes_resolve_to_original_rows_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let bank = random_bank(&mut rng, 4, &[3, 5]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(4, 2));
        // mangle the tunable copy; originals must be unaffected
        for t in block.prior.gamma_hat.iter_mut().chain(block.prior.beta_hat.iter_mut()) {
            for v in t.data_mut() {
                *v += 100.0;
            }
        }
        for class in 0..4 {
            let resolved = resolve_class(&bank, &block, class).unwrap();
            for (layer, (g, b)) in resolved.iter().enumerate() {
                assert_eq!(g.as_slice(), bank.gamma[layer].row(class));
                assert_eq!(b.as_slice(), bank.beta[layer].row(class));
            }
        }
    }

    #[test]
    fn identity_transfer_reproduces_source_rows_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let bank = random_bank(&mut rng, 6, &[7]);
        let mut cfg = TransferConfig::full(6, 1);
        cfg.residuals_enabled = false;
        let mut block = TransferBlock::new(&bank, cfg);
        let source = 4usize;
        for k in 0..6 {
            block.scores.gamma_mut(0).set2(0, k, if k == source { 1.0 } else { 0.0 });
            block.scores.beta_mut(0).set2(0, k, if k == source { 1.0 } else { 0.0 });
        }
        let resolved = resolve_class(&bank, &block, 6).unwrap();
        let (g, b) = &resolved[0];
        for c in 0..7 {
            assert_eq!(g[c].to_bits(), bank.gamma[0].at2(source, c).to_bits());
            assert_eq!(b[c].to_bits(), bank.beta[0].at2(source, c).to_bits());
        }
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let bank = bank_from_rows(&[vec![1.0]], &[vec![0.0]]);
        let block = TransferBlock::new(&bank, TransferConfig::full(1, 1));
        assert!(matches!(
            block.propagate_params(0, 1),
            Err(TransferError::NewClassOutOfRange { .. })
        ));
        assert!(matches!(
            block.propagate_params(1, 0),
            Err(TransferError::LayerOutOfRange { .. })
        ));
        assert!(matches!(
            resolve_class(&bank, &block, 2),
            Err(TransferError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn regularization_trivial_cases() {
        let bank = bank_from_rows(&[vec![1.0, 1.0]], &[vec![0.0, 0.0]]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(1, 1));
        for v in block.scores.gamma_mut(0).data_mut() {
            *v = 0.0;
        }
        for v in block.scores.beta_mut(0).data_mut() {
            *v = 0.0;
        }
        assert_eq!(transfer_regularization(&block), (0.0, 0.0));

        // single layer, single new class: r_gamma = [3,4], S_gamma = [1,-2]
        let bank2 = bank_from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]], &vec![vec![0.0; 2]; 2]);
        let mut block2 = TransferBlock::new(&bank2, TransferConfig::full(2, 1));
        block2.residuals.r_gamma[0].set2(0, 0, 3.0);
        block2.residuals.r_gamma[0].set2(0, 1, 4.0);
        block2.scores.gamma_mut(0).set2(0, 0, 1.0);
        block2.scores.gamma_mut(0).set2(0, 1, -2.0);
        for v in block2.scores.beta_mut(0).data_mut() {
            *v = 0.0;
        }
        let (l_r, l_s) = transfer_regularization(&block2);
        assert_eq!(l_r, 25.0);
        assert_eq!(l_s, 3.0);
    }

    #[test]
    fn regularization_matches_summation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let bank = random_bank(&mut rng, 4, &[3, 6]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(4, 2));
        randomize_block(&mut block, &mut rng, 2.0);
        let (l_r, l_s) = transfer_regularization(&block);
        let mut er = 0.0;
        let mut es = 0.0;
        for layer in 0..2 {
            for j in 0..2 {
                for c in 0..block.residuals.r_gamma[layer].cols() {
                    er += block.residuals.r_gamma[layer].at2(j, c).powi(2);
                    er += block.residuals.r_beta[layer].at2(j, c).powi(2);
                }
                for k in 0..4 {
                    es += block.scores.gamma(layer).at2(j, k).abs();
                    es += block.scores.beta(layer).at2(j, k).abs();
                }
            }
        }
        assert!((l_r - er).abs() < 1e-10);
        assert!((l_s - es).abs() < 1e-10);
        assert!(l_r >= 0.0 && l_s >= 0.0);
    }

    #[test]
    fn trainable_count_formula() {
        // L = 3 layers of width 64, N = 8, M = 2, residuals on, per-layer
        // scores: score+residual params = 2*(3*(2*8) + 3*(2*64)) = 864
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let bank = random_bank(&mut rng, 8, &[64, 64, 64]);
        let mut cfg = TransferConfig::full(8, 2);
        cfg.prior_tunable = false;
        let block = TransferBlock::new(&bank, cfg);
        let (_, per_class) = trainable_parameters(&block);
        assert_eq!(per_class * 2, 864);
        assert_eq!(total_trainable_count(&block), 864);
    }

    #[test]
    fn per_class_count_doubles_with_m() {
        let mut rng = ChaCha20Rng::seed_from_u64(38);
        let bank = random_bank(&mut rng, 5, &[8, 8]);
        let mut cfg1 = TransferConfig::full(5, 1);
        cfg1.prior_tunable = false;
        let mut cfg2 = cfg1;
        cfg2.m_new = 2;
        let c1 = total_trainable_count(&TransferBlock::new(&bank, cfg1));
        let c2 = total_trainable_count(&TransferBlock::new(&bank, cfg2));
        assert_eq!(c2, 2 * c1);
    }

    #[test]
    fn residuals_disabled_excluded_from_list() {
        let mut rng = ChaCha20Rng::seed_from_u64(39);
        let bank = random_bank(&mut rng, 3, &[4]);
        let mut cfg = TransferConfig::full(3, 1);
        cfg.residuals_enabled = false;
        let block = TransferBlock::new(&bank, cfg);
        let (list, _) = trainable_parameters(&block);
        assert!(list.iter().all(|p| !p.name.starts_with("res.")));
    }

    #[test]
    fn frozen_prior_without_residuals_trains_scores_only() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let bank = random_bank(&mut rng, 3, &[4, 4]);
        let mut cfg = TransferConfig::full(3, 2);
        cfg.residuals_enabled = false;
        cfg.prior_tunable = false;
        let block = TransferBlock::new(&bank, cfg);
        let (list, _) = trainable_parameters(&block);
        assert!(list.iter().all(|p| p.name.starts_with("scores.")));
        assert_eq!(list.len(), 4); // gamma + beta per layer, 2 layers
    }

    #[test]
    fn shared_scores_store_one_pair() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let bank = random_bank(&mut rng, 3, &[4, 4, 4]);
        let mut cfg = TransferConfig::full(3, 1);
        cfg.shared_scores = true;
        let mut block = TransferBlock::new(&bank, cfg);
        assert_eq!(block.scores.stored_pairs(), 1);
        block.scores.gamma_mut(2).set2(0, 1, 9.0);
        // visible through every layer
        assert_eq!(block.scores.gamma(0).at2(0, 1), 9.0);
        assert_eq!(block.scores.gamma(1).at2(0, 1), 9.0);
    }

    #[test]
    fn export_scores_orders_by_magnitude() {
        let bank = bank_from_rows(
            &[vec![1.0], vec![1.0], vec![1.0]],
            &[vec![0.0], vec![0.0], vec![0.0]],
        );
        let mut block = TransferBlock::new(&bank, TransferConfig::full(3, 1));
        let s = block.scores.gamma_mut(0);
        s.set2(0, 0, 0.1);
        s.set2(0, 1, -0.9);
        s.set2(0, 2, 0.5);
        let rows = export_scores(&block, 2).unwrap();
        let gamma_rows: Vec<&ScoreExport> =
            rows.iter().filter(|r| r.param_type == "gamma").collect();
        assert_eq!(gamma_rows[0].source_class, 1);
        assert_eq!(gamma_rows[0].score, -0.9);
        assert_eq!(gamma_rows[1].source_class, 2);
        assert_eq!(gamma_rows[1].score, 0.5);
    }

    #[test]
    fn export_scores_tie_break_on_lower_index() {
        let bank = bank_from_rows(
            &[vec![1.0], vec![1.0], vec![1.0]],
            &[vec![0.0], vec![0.0], vec![0.0]],
        );
        let mut block = TransferBlock::new(&bank, TransferConfig::full(3, 1));
        for v in block.scores.gamma_mut(0).data_mut() {
            *v = 0.0;
        }
        for v in block.scores.beta_mut(0).data_mut() {
            *v = 0.0;
        }
        let rows = export_scores(&block, 2).unwrap();
        for r in rows {
            assert_eq!(r.source_class, r.rank);
            assert_eq!(r.score, 0.0);
        }
    }

    #[test]
    fn export_scores_matches_full_sort_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let bank = random_bank(&mut rng, 6, &[3]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(6, 2));
        randomize_block(&mut block, &mut rng, 1.0);
        let rows = export_scores(&block, 6).unwrap();
        for j in 0..2 {
            let got: Vec<usize> = rows
                .iter()
                .filter(|r| r.param_type == "gamma" && r.new_class == j)
                .map(|r| r.source_class)
                .collect();
            let mut oracle: Vec<usize> = (0..6).collect();
            oracle.sort_by(|&a, &b| {
                block
                    .scores
                    .gamma(0)
                    .at2(j, b)
                    .abs()
                    .total_cmp(&block.scores.gamma(0).at2(j, a).abs())
                    .then(a.cmp(&b))
            });
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn baked_bank_matches_resolve() {
        let mut rng = ChaCha20Rng::seed_from_u64(47);
        let bank = random_bank(&mut rng, 4, &[5, 5]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(4, 2));
        randomize_block(&mut block, &mut rng, 1.0);
        let baked = bake_extended_bank(&bank, &block);
        assert_eq!(baked.num_classes(), 6);
        for class in 0..6 {
            let resolved = resolve_class(&bank, &block, class).unwrap();
            for layer in 0..2 {
                assert_eq!(baked.gamma[layer].row(class), resolved[layer].0.as_slice());
                assert_eq!(baked.beta[layer].row(class), resolved[layer].1.as_slice());
            }
        }
    }

    #[test]
    fn on_tape_propagation_matches_plain_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(53);
        let bank = random_bank(&mut rng, 5, &[4]);
        let mut block = TransferBlock::new(&bank, TransferConfig::full(5, 2));
        randomize_block(&mut block, &mut rng, 1.0);
        let mut tape = Tape::new();
        let vars = TransferVars::register(&mut tape, &block);
        let (g, b) = vars.propagate_layer(&mut tape, 0, true).unwrap();
        for j in 0..2 {
            let (pg, pb) = block.propagate_params(0, j).unwrap();
            assert_eq!(tape.value(g).row(j), pg.as_slice());
            assert_eq!(tape.value(b).row(j), pb.as_slice());
        }
    }

    #[test]
    fn transfer_gradients_match_finite_differences_all_flag_combos() {
        use crate::gradcore::gradcheck::check_gradients;
        let mut rng = ChaCha20Rng::seed_from_u64(59);
        for combo in 0..8u8 {
            let tunable = combo & 1 != 0;
            let residuals = combo & 2 != 0;
            let shared = combo & 4 != 0;
            let bank = random_bank(&mut rng, 3, &[4, 4]);
            let mut cfg = TransferConfig::full(3, 2);
            cfg.prior_tunable = tunable;
            cfg.residuals_enabled = residuals;
            cfg.shared_scores = shared;
            let mut block = TransferBlock::new(&bank, cfg);
            randomize_block(&mut block, &mut rng, 0.8);
            let slots = block.scores.stored_pairs();
            let mut params: Vec<Tensor> = Vec::new();
            for s in 0..slots {
                params.push(block.scores.gamma_slot(s).clone());
            }
            for s in 0..slots {
                params.push(block.scores.beta_slot(s).clone());
            }
            params.extend(block.residuals.r_gamma.iter().cloned());
            params.extend(block.residuals.r_beta.iter().cloned());
            params.extend(block.prior.gamma_hat.iter().cloned());
            params.extend(block.prior.beta_hat.iter().cloned());
            let report = check_gradients(
                |tape, vars| {
                    let tv = TransferVars::from_parts(
                        vars[0..slots].to_vec(),
                        vars[slots..2 * slots].to_vec(),
                        vars[2 * slots..2 * slots + 2].to_vec(),
                        vars[2 * slots + 2..2 * slots + 4].to_vec(),
                        vars[2 * slots + 4..2 * slots + 6].to_vec(),
                        vars[2 * slots + 6..2 * slots + 8].to_vec(),
                        shared,
                    );
                    let mut loss = None;
                    for layer in 0..2 {
                        let (g, b) = tv.propagate_layer(tape, layer, residuals)?;
                        let gs = tape.square(g)?;
                        let bs = tape.square(b)?;
                        let gsum = tape.sum(gs)?;
                        let bsum = tape.sum(bs)?;
                        let t = tape.add(gsum, bsum)?;
                        loss = Some(match loss {
                            Some(l) => tape.add(l, t)?,
                            None => t,
                        });
                    }
                    let mut total = loss.unwrap();
                    if let Some(reg) = tv.regularization_loss(tape, &cfg, true, true, 2)? {
                        total = tape.add(total, reg)?;
                    }
                    Ok(total)
                },
                &params,
                1e-5,
                1e-4,
                1e-6,
            )
            .unwrap();
            assert_eq!(
                report.failed, 0,
                "combo tunable={tunable} residuals={residuals} shared={shared}, worst {}",
                report.worst_rel_err
            );
        }
    }
}
