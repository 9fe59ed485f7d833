//! Conditional generator with class-conditional batch normalization and a
//! projection discriminator, both as plain MLPs over 2D points, trained
//! with hinge losses.
//!
//! Class conditioning enters the generator only through the per-class BN
//! scale/shift rows; the discriminator is conditioned by the dot product
//! of its last feature layer with a learned class embedding.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::gradcore::{GradError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("batch of {got} is too small for batch statistics (need >= 2)")]
    BatchTooSmall { got: usize },
    #[error("unknown class id {class} (have {num_classes})")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("score list is empty")]
    EmptyScores,
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Generator shape: `latent -> [affine -> CBN -> leaky-relu]^L -> affine ->
/// output_scale * tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub eps: f64,
    pub leaky_slope: f64,
    /// Output range is `(-output_scale, output_scale)` per coordinate; must
    /// cover the task geometry.
    pub output_scale: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            latent_dim: 8,
            hidden: vec![64, 64, 64],
            output_dim: 2,
            eps: 1e-5,
            leaky_slope: 0.2,
            output_scale: 4.0,
        }
    }
}

impl GeneratorSpec {
    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }
}

/// Discriminator shape: `input -> [affine -> leaky-relu]^H = phi(x)`, score
/// `psi(phi(x)) + <embed[y], phi(x)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub leaky_slope: f64,
}

impl DiscriminatorSpec {
    pub fn desk_default(num_classes: usize) -> Self {
        DiscriminatorSpec { input_dim: 2, hidden: vec![64, 64], num_classes, leaky_slope: 0.2 }
    }

    /// Width of the last feature layer phi(x).
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("discriminator needs >= 1 hidden layer")
    }
}

/// Affine weights of the generator (CBN owns every bias-like term for the
/// hidden layers).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub weights: Vec<Tensor>,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl GeneratorParams {
    pub fn init(spec: &GeneratorSpec, rng: &mut ChaCha20Rng) -> Self {
        let mut weights = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = spec.latent_dim;
        for &w in &spec.hidden {
            weights.push(random_weight(fan_in, w, rng));
            fan_in = w;
        }
        GeneratorParams {
            weights,
            out_w: random_weight(fan_in, spec.output_dim, rng),
            out_b: Tensor::zeros(&[spec.output_dim]),
        }
    }
}

/// Per-layer class-conditional BN parameters; row `y` of layer `l` holds the
/// scale (gamma) or shift (beta) for class `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbnBank {
    pub gamma: Vec<Tensor>,
    pub beta: Vec<Tensor>,
}

impl CbnBank {
    /// Standard init: gamma = 1, beta = 0 for every class and layer.
    pub fn init(num_classes: usize, widths: &[usize]) -> Self {
        let gamma = widths.iter().map(|&w| Tensor::full(&[num_classes, w], 1.0)).collect();
        let beta = widths.iter().map(|&w| Tensor::zeros(&[num_classes, w])).collect();
        CbnBank { gamma, beta }
    }

    pub fn num_classes(&self) -> usize {
        self.gamma.first().map_or(0, Tensor::rows)
    }

    pub fn num_layers(&self) -> usize {
        self.gamma.len()
    }

    /// Appends `extra` rows per layer (gamma = 1, beta = 0).
    pub fn extend_classes(&mut self, extra: usize) {
        for g in &mut self.gamma {
            let mut rows: Vec<Vec<f64>> = (0..g.rows()).map(|i| g.row(i).to_vec()).collect();
            for _ in 0..extra {
                rows.push(vec![1.0; g.cols()]);
            }
            *g = Tensor::from_rows(&rows).expect("uniform widths");
        }
        for b in &mut self.beta {
            let mut rows: Vec<Vec<f64>> = (0..b.rows()).map(|i| b.row(i).to_vec()).collect();
            for _ in 0..extra {
                rows.push(vec![0.0; b.cols()]);
            }
            *b = Tensor::from_rows(&rows).expect("uniform widths");
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub embed: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl DiscriminatorParams {
    pub fn init(spec: &DiscriminatorSpec, rng: &mut ChaCha20Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = spec.input_dim;
        for &w in &spec.hidden {
            weights.push(random_weight(fan_in, w, rng));
            biases.push(Tensor::zeros(&[w]));
            fan_in = w;
        }
        let f = spec.feature_dim();
        let embed_std = (1.0 / f as f64).sqrt();
        let embed_data = (0..spec.num_classes * f).map(|_| embed_std * normal(rng)).collect();
        DiscriminatorParams {
            weights,
            biases,
            embed: Tensor::matrix(spec.num_classes, f, embed_data).expect("sized data"),
            head_w: random_weight(f, 1, rng),
            head_b: Tensor::zeros(&[1]),
        }
    }

    /// Appends `extra` embedding rows drawn from a zero-mean Gaussian whose
    /// std matches the spread of the existing rows.
    pub fn extend_embeddings(&mut self, extra: usize, rng: &mut ChaCha20Rng) {
        let std = matrix_std(&self.embed).max(1e-3);
        let cols = self.embed.cols();
        let mut rows: Vec<Vec<f64>> =
            (0..self.embed.rows()).map(|i| self.embed.row(i).to_vec()).collect();
        for _ in 0..extra {
            rows.push((0..cols).map(|_| std * normal(rng)).collect());
        }
        self.embed = Tensor::from_rows(&rows).expect("uniform widths");
    }
}

fn matrix_std(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let mean: f64 = t.data().iter().sum::<f64>() / n;
    let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn random_weight(fan_in: usize, fan_out: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let std = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| std * normal(rng)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized data")
}

/// Tape handles for generator affine weights.
pub struct GenVars {
    pub weights: Vec<Var>,
    pub out_w: Var,
    pub out_b: Var,
}

impl GenVars {
    pub fn register(tape: &mut Tape, p: &GeneratorParams) -> Self {
        GenVars {
            weights: p.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            out_w: tape.leaf(p.out_w.clone()),
            out_b: tape.leaf(p.out_b.clone()),
        }
    }
}

/// Tape handles for discriminator parameters.
pub struct DiscVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub embed: Var,
    pub head_w: Var,
    pub head_b: Var,
}

impl DiscVars {
    pub fn register(tape: &mut Tape, p: &DiscriminatorParams) -> Self {
        DiscVars {
            weights: p.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: p.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
            embed: tape.leaf(p.embed.clone()),
            head_w: tape.leaf(p.head_w.clone()),
            head_b: tape.leaf(p.head_b.clone()),
        }
    }
}

/// Class-conditional batch normalization.
///
/// Normalizes each feature by the moments of the whole (possibly
/// class-mixed) batch, then applies the scale/shift rows selected
/// per sample from `gamma`/`beta` (shape `[num_classes x C]`).
pub fn cbn_forward(
    tape: &mut Tape,
    features: Var,
    class_ids: &[usize],
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<Var, NetError> {
    let batch = tape.value(features).rows();
    if batch < 2 {
        return Err(NetError::BatchTooSmall { got: batch });
    }
    let num_classes = tape.value(gamma).rows();
    if let Some(&bad) = class_ids.iter().find(|&&c| c >= num_classes) {
        return Err(NetError::UnknownClass { class: bad, num_classes });
    }
    let mu = tape.mean_axis0(features)?;
    let var = tape.var_axis0(features)?;
    let mu_b = tape.broadcast_row(mu, batch)?;
    let centered = tape.sub(features, mu_b)?;
    let var_eps = tape.affine(var, 1.0, eps)?;
    let denom = tape.sqrt(var_eps)?;
    let denom_b = tape.broadcast_row(denom, batch)?;
    let normalized = tape.div(centered, denom_b)?;
    let g_rows = tape.gather_rows(gamma, class_ids)?;
    let b_rows = tape.gather_rows(beta, class_ids)?;
    let scaled = tape.mul(normalized, g_rows)?;
    Ok(tape.add(scaled, b_rows)?)
}

/// Full conditional generator pass: per hidden layer an affine map, CBN
/// with the layer's `(gamma, beta)` matrices from `cbn_layers`, and a
/// leaky-relu; then the output affine and `output_scale * tanh`.
pub fn generator_forward(
    tape: &mut Tape,
    spec: &GeneratorSpec,
    gen: &GenVars,
    cbn_layers: &[(Var, Var)],
    z: Var,
    class_ids: &[usize],
) -> Result<Var, NetError> {
    assert_eq!(cbn_layers.len(), spec.num_layers(), "one (gamma, beta) pair per hidden layer");
    assert_eq!(tape.value(z).rows(), class_ids.len(), "one class id per sample");
    let mut h = z;
    for (l, &(gamma, beta)) in cbn_layers.iter().enumerate() {
        h = tape.matmul(h, gen.weights[l])?;
        h = cbn_forward(tape, h, class_ids, gamma, beta, spec.eps)?;
        h = tape.leaky_relu(h, spec.leaky_slope)?;
    }
    let batch = tape.value(h).rows();
    h = tape.matmul(h, gen.out_w)?;
    let bias = tape.broadcast_row(gen.out_b, batch)?;
    h = tape.add(h, bias)?;
    let t = tape.tanh(h)?;
    Ok(tape.scale(t, spec.output_scale)?)
}

/// Projection-discriminator score `psi(phi(x)) + <embed[y], phi(x)>` per
/// sample; returns a rank-1 tensor of length batch.
pub fn discriminator_forward(
    tape: &mut Tape,
    spec: &DiscriminatorSpec,
    disc: &DiscVars,
    x: Var,
    class_ids: &[usize],
) -> Result<Var, NetError> {
    let num_classes = tape.value(disc.embed).rows();
    if let Some(&bad) = class_ids.iter().find(|&&c| c >= num_classes) {
        return Err(NetError::UnknownClass { class: bad, num_classes });
    }
    let batch = tape.value(x).rows();
    let mut h = x;
    for (w, b) in disc.weights.iter().zip(&disc.biases) {
        h = tape.matmul(h, *w)?;
        let bias = tape.broadcast_row(*b, batch)?;
        h = tape.add(h, bias)?;
        h = tape.leaky_relu(h, spec.leaky_slope)?;
    }
    let phi = h;
    let psi = tape.matmul(phi, disc.head_w)?;
    let head_bias = tape.broadcast_row(disc.head_b, batch)?;
    let psi = tape.add(psi, head_bias)?;
    let psi = tape.reshape(psi, &[batch])?;
    let picked = tape.gather_rows(disc.embed, class_ids)?;
    let prod = tape.mul(phi, picked)?;
    let proj = tape.sum_axis1(prod)?;
    Ok(tape.add(psi, proj)?)
}

/// Discriminator hinge loss `mean(max(0, 1 - real)) + mean(max(0, 1 + fake))`.
pub fn hinge_d_loss(tape: &mut Tape, real: Var, fake: Var) -> Result<Var, NetError> {
    if tape.value(real).is_empty() || tape.value(fake).is_empty() {
        return Err(NetError::EmptyScores);
    }
    let real_margin = tape.affine(real, -1.0, 1.0)?;
    let real_hinge = tape.relu(real_margin)?;
    let real_term = tape.mean_axis0(real_hinge)?;
    let fake_margin = tape.affine(fake, 1.0, 1.0)?;
    let fake_hinge = tape.relu(fake_margin)?;
    let fake_term = tape.mean_axis0(fake_hinge)?;
    Ok(tape.add(real_term, fake_term)?)
}

/// Generator hinge loss `-mean(fake)`.
pub fn hinge_g_loss(tape: &mut Tape, fake: Var) -> Result<Var, NetError> {
    if tape.value(fake).is_empty() {
        return Err(NetError::EmptyScores);
    }
    let mean = tape.mean_axis0(fake)?;
    Ok(tape.scale(mean, -1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::gradcheck::check_gradients;
    use rand::SeedableRng;

    fn tiny_gamma_beta(tape: &mut Tape, gamma: &[f64], beta: &[f64]) -> (Var, Var) {
        let c = gamma.len();
        let g = tape.leaf(Tensor::matrix(1, c, gamma.to_vec()).unwrap());
        let b = tape.leaf(Tensor::matrix(1, c, beta.to_vec()).unwrap());
        (g, b)
    }

    #[test]
    fn constant_batch_outputs_beta() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(3, 2, vec![1.5, -0.5].repeat(3)).unwrap());
        let (g, b) = tiny_gamma_beta(&mut tape, &[2.0, 3.0], &[0.25, -0.75]);
        let out = cbn_forward(&mut tape, x, &[0, 0, 0], g, b, 1e-5).unwrap();
        for row in 0..3 {
            assert_eq!(tape.value(out).row(row), &[0.25, -0.75]);
        }
    }

    #[test]
    fn two_point_batch_matches_closed_form() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
        let (g, b) = tiny_gamma_beta(&mut tape, &[2.0], &[1.0]);
        let out = cbn_forward(&mut tape, x, &[0, 0], g, b, 1e-5).unwrap();
        let got = tape.value(out).data();
        assert!((got[0] - -0.99999).abs() < 1e-4, "{got:?}");
        assert!((got[1] - 2.99999).abs() < 1e-4, "{got:?}");
    }

    #[test]
    fn identity_params_normalize_batch() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..8 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(8, 3, data.clone()).unwrap());
        let (g, b) = tiny_gamma_beta(&mut tape, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        let out = cbn_forward(&mut tape, x, &[0; 8], g, b, 1e-5).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..8).map(|r| tape.value(out).at2(r, c)).collect();
            let mean = col.iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            let var_out = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            let raw: Vec<f64> = (0..8).map(|r| data[r * 3 + c]).collect();
            let raw_mean = raw.iter().sum::<f64>() / 8.0;
            let raw_var =
                raw.iter().map(|v| (v - raw_mean) * (v - raw_mean)).sum::<f64>() / 8.0;
            let expect_std = (raw_var / (raw_var + 1e-5)).sqrt();
            assert!((var_out.sqrt() - expect_std).abs() < 1e-6);
        }
    }

    #[test]
    fn cbn_batch_of_one_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let (g, b) = tiny_gamma_beta(&mut tape, &[1.0, 1.0], &[0.0, 0.0]);
        let err = cbn_forward(&mut tape, x, &[0], g, b, 1e-5).unwrap_err();
        assert!(matches!(err, NetError::BatchTooSmall { got: 1 }));
    }

    #[test]
    fn cbn_unknown_class_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let (g, b) = tiny_gamma_beta(&mut tape, &[1.0, 1.0], &[0.0, 0.0]);
        let err = cbn_forward(&mut tape, x, &[0, 1], g, b, 1e-5).unwrap_err();
        assert!(matches!(err, NetError::UnknownClass { class: 1, num_classes: 1 }));
    }

    #[test]
    fn cbn_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let feats =
            Tensor::matrix(5, 3, (0..15).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        let gamma =
            Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
        let beta =
            Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let ids = [0usize, 1, 0, 1, 1];
        let report = check_gradients(
            |tape, vars| {
                let out = cbn_forward(tape, vars[0], &ids, vars[1], vars[2], 1e-5)
                    .map_err(|e| match e {
                        NetError::Grad(g) => g,
                        other => GradError::Domain { prim: "cbn", detail: other.to_string() },
                    })?;
                let sq = tape.square(out)?;
                tape.sum(sq)
            },
            &[feats, gamma, beta],
            1e-5,
            1e-4,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.failed, 0, "worst rel err {}", report.worst_rel_err);
        assert!(report.checked > 20);
    }

    fn desk_generator(seed: u64) -> (GeneratorSpec, GeneratorParams, CbnBank) {
        let spec = GeneratorSpec {
            latent_dim: 3,
            hidden: vec![5, 4],
            output_dim: 2,
            ..GeneratorSpec::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = GeneratorParams::init(&spec, &mut rng);
        let bank = CbnBank::init(3, &spec.hidden);
        (spec, params, bank)
    }

    fn run_generator(
        spec: &GeneratorSpec,
        params: &GeneratorParams,
        bank: &CbnBank,
        z: &Tensor,
        ids: &[usize],
    ) -> Tensor {
        let mut tape = Tape::new();
        let gen = GenVars::register(&mut tape, params);
        let cbn: Vec<(Var, Var)> = bank
            .gamma
            .iter()
            .zip(&bank.beta)
            .map(|(g, b)| (tape.leaf(g.clone()), tape.leaf(b.clone())))
            .collect();
        let zv = tape.leaf(z.clone());
        let out = generator_forward(&mut tape, spec, &gen, &cbn, zv, ids).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let (spec, params, bank) = desk_generator(9);
        let z = Tensor::matrix(4, 3, vec![0.3, -0.2, 0.9].repeat(4)).unwrap();
        let out = run_generator(&spec, &params, &bank, &z, &[1, 1, 1, 1]);
        for r in 1..4 {
            assert_eq!(out.row(0), out.row(r));
        }
    }

    #[test]
    fn resolver_indirection_is_transparent() {
        // two sources of bitwise-equal (gamma, beta) must generate
        // bitwise-equal outputs
        let (spec, params, bank) = desk_generator(10);
        let clone_bank = bank.clone();
        let z = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64) / 10.0).collect()).unwrap();
        let a = run_generator(&spec, &params, &bank, &z, &[0, 2, 1]);
        let b = run_generator(&spec, &params, &clone_bank, &z, &[0, 2, 1]);
        assert_eq!(a, b);
    }

    #[test]
    fn generator_matches_hand_traced_forward() {
        // independent straight-line trace of the same arithmetic
        let (spec, params, bank) = desk_generator(11);
        let batch = 2;
        let z = Tensor::matrix(batch, 3, vec![0.0; batch * 3]).unwrap();
        let out = run_generator(&spec, &params, &bank, &z, &[0, 0]);

        let mut h: Vec<Vec<f64>> = vec![vec![0.0; 3]; batch];
        for (l, w) in params.weights.iter().enumerate() {
            let width = w.cols();
            let mut next = vec![vec![0.0; width]; batch];
            for (i, row) in h.iter().enumerate() {
                for j in 0..width {
                    next[i][j] = row.iter().enumerate().map(|(k, &v)| v * w.at2(k, j)).sum();
                }
            }
            // batch moments
            for j in 0..width {
                let mean: f64 = next.iter().map(|r| r[j]).sum::<f64>() / batch as f64;
                let var: f64 =
                    next.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>()
                        / batch as f64;
                for row in next.iter_mut() {
                    let norm = (row[j] - mean) / (var + spec.eps).sqrt();
                    let v = bank.gamma[l].at2(0, j) * norm + bank.beta[l].at2(0, j);
                    row[j] = if v >= 0.0 { v } else { spec.leaky_slope * v };
                }
            }
            h = next;
        }
        for (i, row) in h.iter().enumerate() {
            for j in 0..spec.output_dim {
                let pre: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v * params.out_w.at2(k, j))
                    .sum::<f64>()
                    + params.out_b.data()[j];
                let expect = spec.output_scale * pre.tanh();
                assert!((out.at2(i, j) - expect).abs() < 1e-10);
            }
        }
    }

    fn desk_discriminator(seed: u64) -> (DiscriminatorSpec, DiscriminatorParams) {
        let spec = DiscriminatorSpec {
            input_dim: 2,
            hidden: vec![4, 3],
            num_classes: 2,
            leaky_slope: 0.2,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = DiscriminatorParams::init(&spec, &mut rng);
        (spec, params)
    }

    fn disc_scores(
        spec: &DiscriminatorSpec,
        params: &DiscriminatorParams,
        x: &Tensor,
        ids: &[usize],
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let d = DiscVars::register(&mut tape, params);
        let xv = tape.leaf(x.clone());
        let s = discriminator_forward(&mut tape, spec, &d, xv, ids).unwrap();
        tape.value(s).data().to_vec()
    }

    #[test]
    fn zero_embedding_row_leaves_unconditional_score() {
        let (spec, mut params) = desk_discriminator(21);
        for j in 0..params.embed.cols() {
            params.embed.set2(0, j, 0.0);
        }
        let x = Tensor::matrix(2, 2, vec![0.4, -0.3, 1.0, 0.2]).unwrap();
        let with_class0 = disc_scores(&spec, &params, &x, &[0, 0]);

        // unconditional head alone: recompute phi and psi by hand
        let mut tape = Tape::new();
        let d = DiscVars::register(&mut tape, &params);
        let xv = tape.leaf(x.clone());
        let mut h = xv;
        for (w, b) in d.weights.iter().zip(&d.biases) {
            h = tape.matmul(h, *w).unwrap();
            let bias = tape.broadcast_row(*b, 2).unwrap();
            h = tape.add(h, bias).unwrap();
            h = tape.leaky_relu(h, spec.leaky_slope).unwrap();
        }
        let psi = tape.matmul(h, d.head_w).unwrap();
        for (i, &s) in with_class0.iter().enumerate() {
            let expect = tape.value(psi).at2(i, 0) + params.head_b.data()[0];
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_weights_scores_head_bias() {
        let (spec, mut params) = desk_discriminator(22);
        for w in &mut params.weights {
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        params.head_b = Tensor::vector(vec![0.7]);
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let scores = disc_scores(&spec, &params, &x, &[0, 1]);
        for s in scores {
            assert!((s - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_score_matches_hand_computation() {
        let (spec, params) = desk_discriminator(23);
        let x = Tensor::matrix(2, 2, vec![0.9, -0.1, -0.6, 0.5]).unwrap();
        let ids = [1usize, 0];
        let scores = disc_scores(&spec, &params, &x, &ids);

        for (i, &score) in scores.iter().enumerate() {
            let mut h = vec![x.at2(i, 0), x.at2(i, 1)];
            for (w, b) in params.weights.iter().zip(&params.biases) {
                let mut next = vec![0.0; w.cols()];
                for (j, slot) in next.iter_mut().enumerate() {
                    let pre: f64 =
                        h.iter().enumerate().map(|(k, &v)| v * w.at2(k, j)).sum::<f64>()
                            + b.data()[j];
                    *slot = if pre >= 0.0 { pre } else { spec.leaky_slope * pre };
                }
                h = next;
            }
            let psi: f64 = h
                .iter()
                .enumerate()
                .map(|(k, &v)| v * params.head_w.at2(k, 0))
                .sum::<f64>()
                + params.head_b.data()[0];
            let proj: f64 =
                h.iter().enumerate().map(|(k, &v)| v * params.embed.at2(ids[i], k)).sum();
            assert!((score - (psi + proj)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_term_is_linear_in_embedding_row() {
        let (spec, mut params) = desk_discriminator(24);
        let x = Tensor::matrix(2, 2, vec![0.3, 0.8, -0.4, 0.1]).unwrap();
        let base = disc_scores(&spec, &params, &x, &[0, 0]);
        let zeroed = {
            let mut p = params.clone();
            for j in 0..p.embed.cols() {
                p.embed.set2(0, j, 0.0);
            }
            disc_scores(&spec, &p, &x, &[0, 0])
        };
        for j in 0..params.embed.cols() {
            let v = params.embed.at2(0, j);
            params.embed.set2(0, j, 2.0 * v);
        }
        let doubled = disc_scores(&spec, &params, &x, &[0, 0]);
        for i in 0..2 {
            let cond = base[i] - zeroed[i];
            let cond2 = doubled[i] - zeroed[i];
            assert_eq!((2.0 * cond).to_bits(), cond2.to_bits());
        }
    }

    fn loss_value(f: impl FnOnce(&mut Tape) -> Result<Var, NetError>) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).item()
    }

    #[test]
    fn hinge_examples() {
        let d = loss_value(|t| {
            let r = t.leaf(Tensor::vector(vec![2.0, 3.0]));
            let f = t.leaf(Tensor::vector(vec![-2.0, -3.0]));
            hinge_d_loss(t, r, f)
        });
        assert_eq!(d, 0.0);
        let g = loss_value(|t| {
            let f = t.leaf(Tensor::vector(vec![-2.0, -3.0]));
            hinge_g_loss(t, f)
        });
        assert_eq!(g, 2.5);

        let d0 = loss_value(|t| {
            let r = t.leaf(Tensor::vector(vec![0.0]));
            let f = t.leaf(Tensor::vector(vec![0.0]));
            hinge_d_loss(t, r, f)
        });
        assert_eq!(d0, 2.0);
        let g0 = loss_value(|t| {
            let f = t.leaf(Tensor::vector(vec![0.0]));
            hinge_g_loss(t, f)
        });
        assert_eq!(g0, 0.0);

        let d1 = loss_value(|t| {
            let r = t.leaf(Tensor::vector(vec![0.5, -0.5]));
            let f = t.leaf(Tensor::vector(vec![0.2]));
            hinge_d_loss(t, r, f)
        });
        assert!((d1 - 2.2).abs() < 1e-15);
    }

    #[test]
    fn hinge_d_zero_iff_margins_met() {
        let cases = [
            (vec![1.0, 5.0], vec![-1.0, -2.0], true),
            (vec![0.99, 5.0], vec![-1.0], false),
            (vec![1.0], vec![-0.99], false),
        ];
        for (real, fake, zero) in cases {
            let d = loss_value(|t| {
                let r = t.leaf(Tensor::vector(real.clone()));
                let f = t.leaf(Tensor::vector(fake.clone()));
                hinge_d_loss(t, r, f)
            });
            assert!(d >= 0.0);
            assert_eq!(d == 0.0, zero, "real {real:?} fake {fake:?} -> {d}");
        }
    }

    #[test]
    fn empty_scores_rejected() {
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::vector(vec![]));
        let f = tape.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(hinge_d_loss(&mut tape, r, f), Err(NetError::EmptyScores)));
    }
}
