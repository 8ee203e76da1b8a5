//! Central finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per parameter block; `None` checks every one.
    pub max_coords_per_block: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error. Entries whose analytic and
    /// numeric values are both below it are compared on an absolute scale,
    /// since central differences carry round-off of roughly
    /// `f64::EPSILON * |loss| / eps`.
    pub abs_floor: f64,
    /// Multiplies the analytic gradient of the named block. Only useful for
    /// exercising the detector.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, max_coords_per_block: None, seed: 0, abs_floor: 1e-6, corrupt: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tol: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(forward: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = forward(&mut tape, &bound)?;
    let v = tape.value(loss);
    if v.shape() != [1, 1] {
        return Err(Error::NonScalarLoss((v.rows(), v.cols())));
    }
    Ok(v.item())
}

/// Compares tape gradients of `forward` against central differences for
/// every block of `params`.
///
/// `forward` must build a scalar loss from the bound parameters; it is called
/// once for the analytic pass, once more to confirm it is deterministic, and
/// twice per probed coordinate.
pub fn check_gradients<F>(forward: F, params: &ParamSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss_var = forward(&mut tape, &bound)?;
    let loss = tape.value(loss_var).item();
    let grads = tape.backward(loss_var)?;
    let analytic: Vec<Tensor> = bound
        .vars()
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(0, 0)))
        .collect();
    drop(grads);
    drop(tape);

    if evaluate(&forward, params)?.to_bits() != loss.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut blocks = Vec::with_capacity(params.len());
    for id in 0..params.len() {
        let name = params.name(id);
        let n = params.tensor(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_block {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let factor = match &opts.corrupt {
            Some((block, f)) if block == name => *f,
            _ => 1.0,
        };
        let mut report = BlockReport {
            name: String::from(name),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: coords.len(),
            passed: true,
        };
        for &j in &coords {
            let orig = params.tensor(id).data()[j];
            work.tensor_mut(id).data_mut()[j] = orig + opts.eps;
            let up = evaluate(&forward, &work)?;
            work.tensor_mut(id).data_mut()[j] = orig - opts.eps;
            let down = evaluate(&forward, &work)?;
            work.tensor_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[id].data()[j] * factor;
            let err = relative_error(a, numeric, opts.abs_floor);
            if err > report.max_rel_err || (report.max_rel_err == 0.0 && j == coords[0]) {
                report.max_rel_err = err;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report.passed = report.max_rel_err <= opts.tol;
        blocks.push(report);
    }
    Ok(GradCheckReport { loss, tol: opts.tol, blocks })
}
