//! Parameter initialization and the handful of layer shapes the model reuses.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::numerics::{BoundParams, ParamSet, Tape, Tensor, Var};

pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::from_vec(rows, cols, data).expect("sized")
    }

    /// `fan_in x fan_out` weight with variance `1 / fan_in`.
    pub fn weight(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.normal(fan_in, fan_out, 1.0 / libm::sqrt(fan_in as f64))
    }

    /// Registers `{name}.w` and, when `bias` is set, a zero `{name}.b`.
    pub fn linear(&mut self, ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<()> {
        ps.insert(format!("{name}.w"), self.weight(fan_in, fan_out))?;
        if bias {
            ps.insert(format!("{name}.b"), Tensor::zeros(1, fan_out))?;
        }
        Ok(())
    }
}

/// Registers unit gain `{name}.g` and zero bias `{name}.b`.
pub fn add_layer_norm(ps: &mut ParamSet, name: &str, d: usize) -> Result<()> {
    ps.insert(format!("{name}.g"), Tensor::row(alloc::vec![1.0; d]))?;
    ps.insert(format!("{name}.b"), Tensor::zeros(1, d))?;
    Ok(())
}

/// `x · {name}.w (+ {name}.b)`.
pub fn linear(tape: &mut Tape, bp: &BoundParams<'_>, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, bp.var(&format!("{name}.w"))?)?;
    let bias = format!("{name}.b");
    if bp.has(&bias) {
        tape.add_row(y, bp.var(&bias)?)
    } else {
        Ok(y)
    }
}

pub fn layer_norm(tape: &mut Tape, bp: &BoundParams<'_>, name: &str, x: Var, eps: f64) -> Result<Var> {
    let g = bp.var(&format!("{name}.g"))?;
    let b = bp.var(&format!("{name}.b"))?;
    tape.layer_norm_rows(x, g, b, eps)
}

/// Sinusoidal position code for position `pos` at width `d`.
pub fn sinusoidal(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let rate = libm::pow(10000.0, (2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            }
        })
        .collect()
}

/// Column vector with `1/n_valid` at valid positions; its transpose mean-pools rows.
pub fn mean_pool_row(valid: &[bool]) -> Tensor {
    let n = valid.iter().filter(|v| **v).count().max(1) as f64;
    Tensor::row(valid.iter().map(|&v| if v { 1.0 / n } else { 0.0 }).collect())
}
