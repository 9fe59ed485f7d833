//! Gradient checking: replays an arbitrary tape-building program once with
//! `backward` and once per coordinate with the finite-difference oracle,
//! then compares.
//!
//! Also hosts a seeded generator of random small tape programs covering the
//! whole primitive set, used by the unit and acceptance suites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::gradcore::{finite_difference_gradient, GradError, Tape, Tensor, Var};

/// Outcome of one gradient check: coordinate counts above the magnitude
/// floor and how many of those disagreed with the oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failed: usize,
    pub worst_rel_err: f64,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failed += other.failed;
        self.worst_rel_err = self.worst_rel_err.max(other.worst_rel_err);
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            1.0 - self.failed as f64 / self.checked as f64
        }
    }
}

/// Checks reverse-mode gradients of `program` against central differences.
///
/// `program` receives a tape plus the leaf handles for `params` (in order)
/// and must return the scalar loss node. Coordinates with both gradients
/// below `floor` in magnitude are skipped; the rest must agree within
/// `rel_tol` relative error.
pub fn check_gradients<F>(
    mut program: F,
    params: &[Tensor],
    h: f64,
    rel_tol: f64,
    floor: f64,
) -> Result<GradCheckReport, GradError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, GradError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = program(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let ad: Vec<Tensor> = vars.iter().map(|&v| grads.grad(v)).collect();

    let fd = finite_difference_gradient(
        |ps| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
            let l = program(&mut t, &vs)?;
            Ok(t.value(l).item())
        },
        params,
        h,
    )?;

    let mut report = GradCheckReport::default();
    for (a, f) in ad.iter().zip(&fd) {
        for (&av, &fv) in a.data().iter().zip(f.data()) {
            let mag = av.abs().max(fv.abs());
            if mag <= floor {
                continue;
            }
            report.checked += 1;
            let rel = (av - fv).abs() / mag;
            report.worst_rel_err = report.worst_rel_err.max(rel);
            if rel >= rel_tol {
                report.failed += 1;
            }
        }
    }
    Ok(report)
}

/// A randomly generated straight-line tape program plus its leaf tensors.
///
/// Values stay O(1) (tanh squashing between risky stages) so the
/// finite-difference oracle keeps its accuracy.
pub struct RandomProgram {
    pub params: Vec<Tensor>,
    ops: Vec<ProgramOp>,
    batch: usize,
    width: usize,
}

#[derive(Clone, Copy)]
enum ProgramOp {
    Add,
    Sub,
    MulPair,
    DivSafe,
    MatMulSquare,
    LeakyRelu,
    Tanh,
    Square,
    AbsThenMean,
    SqrtSafe,
    BatchNormish,
    BroadcastAdd,
    GatherShuffle,
    ConcatSelf,
    SumAxis1Mix,
}

const OP_POOL: [ProgramOp; 15] = [
    ProgramOp::Add,
    ProgramOp::Sub,
    ProgramOp::MulPair,
    ProgramOp::DivSafe,
    ProgramOp::MatMulSquare,
    ProgramOp::LeakyRelu,
    ProgramOp::Tanh,
    ProgramOp::Square,
    ProgramOp::AbsThenMean,
    ProgramOp::SqrtSafe,
    ProgramOp::BatchNormish,
    ProgramOp::BroadcastAdd,
    ProgramOp::GatherShuffle,
    ProgramOp::ConcatSelf,
    ProgramOp::SumAxis1Mix,
];

impl RandomProgram {
    /// Samples a program with batch <= 8 and width <= 16.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let batch = rng.random_range(2..=8usize);
        let width = rng.random_range(2..=16usize);
        let n_params = rng.random_range(2..=4usize);
        let params: Vec<Tensor> = (0..n_params)
            .map(|_| {
                let data = (0..batch * width)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                Tensor::matrix(batch, width, data).unwrap()
            })
            .collect();
        let n_ops = rng.random_range(3..=8usize);
        let ops = (0..n_ops)
            .map(|_| OP_POOL[rng.random_range(0..OP_POOL.len())])
            .collect();
        RandomProgram { params, ops, batch, width }
    }

    /// Builds the recorded computation; returns the scalar loss node.
    pub fn build(&self, tape: &mut Tape, leaves: &[Var]) -> Result<Var, GradError> {
        let mut cur = leaves[0];
        let mut next_leaf = 1usize;
        let pick = |next: &mut usize| {
            let v = leaves[*next % leaves.len()];
            *next += 1;
            v
        };
        for op in &self.ops {
            cur = match op {
                ProgramOp::Add => {
                    let o = pick(&mut next_leaf);
                    tape.add(cur, o)?
                }
                ProgramOp::Sub => {
                    let o = pick(&mut next_leaf);
                    tape.sub(cur, o)?
                }
                ProgramOp::MulPair => {
                    let o = pick(&mut next_leaf);
                    tape.mul(cur, o)?
                }
                ProgramOp::DivSafe => {
                    // denominator bounded away from zero
                    let o = pick(&mut next_leaf);
                    let sq = tape.square(o)?;
                    let denom = tape.affine(sq, 1.0, 1.0)?;
                    tape.div(cur, denom)?
                }
                ProgramOp::MatMulSquare => {
                    // mix features through a constant [w x w] matrix
                    let o = pick(&mut next_leaf);
                    let ot = tape.tanh(o)?;
                    let c = constant_mix(tape, self.width);
                    let m = tape.matmul(ot, c)?;
                    let mixed = tape.tanh(m)?;
                    tape.add(cur, mixed)?
                }
                ProgramOp::LeakyRelu => tape.leaky_relu(cur, 0.2)?,
                ProgramOp::Tanh => tape.tanh(cur)?,
                ProgramOp::Square => {
                    let t = tape.tanh(cur)?;
                    tape.square(t)?
                }
                ProgramOp::AbsThenMean => {
                    let a = tape.abs(cur)?;
                    let m = tape.mean_axis0(a)?;
                    tape.broadcast_row(m, self.batch)?
                }
                ProgramOp::SqrtSafe => {
                    let sq = tape.square(cur)?;
                    let pos = tape.affine(sq, 1.0, 0.5)?;
                    tape.sqrt(pos)?
                }
                ProgramOp::BatchNormish => {
                    let mu = tape.mean_axis0(cur)?;
                    let var = tape.var_axis0(cur)?;
                    let mu_b = tape.broadcast_row(mu, self.batch)?;
                    let centered = tape.sub(cur, mu_b)?;
                    let shifted = tape.affine(var, 1.0, 1e-3)?;
                    let denom = tape.sqrt(shifted)?;
                    let denom_b = tape.broadcast_row(denom, self.batch)?;
                    tape.div(centered, denom_b)?
                }
                ProgramOp::BroadcastAdd => {
                    let o = pick(&mut next_leaf);
                    let row = tape.mean_axis0(o)?;
                    let bo = tape.broadcast_row(row, self.batch)?;
                    tape.add(cur, bo)?
                }
                ProgramOp::GatherShuffle => {
                    let ids: Vec<usize> = (0..self.batch).map(|i| (i * 7 + 3) % self.batch).collect();
                    tape.gather_rows(cur, &ids)?
                }
                ProgramOp::ConcatSelf => {
                    let o = pick(&mut next_leaf);
                    let both = tape.concat_rows(cur, o)?;
                    let ids: Vec<usize> = (0..self.batch).collect();
                    tape.gather_rows(both, &ids)?
                }
                ProgramOp::SumAxis1Mix => {
                    let t = tape.tanh(cur)?;
                    let rows = tape.sum_axis1(t)?;
                    let back = tape.reshape(rows, &[self.batch, 1])?;
                    let ones = tape.constant(Tensor::matrix(1, self.width, vec![0.5; self.width]).unwrap());
                    tape.matmul(back, ones)?
                }
            };
        }
        let squashed = tape.tanh(cur)?;
        tape.sum(squashed)
    }
}

fn constant_mix(tape: &mut Tape, width: usize) -> Var {
    let data: Vec<f64> = (0..width * width)
        .map(|i| ((i % 7) as f64 - 3.0) / 10.0)
        .collect();
    tape.constant(Tensor::matrix(width, width, data).unwrap())
}
