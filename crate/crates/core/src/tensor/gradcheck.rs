//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Number of coordinates to probe; `None` probes every coordinate.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Skip coordinates whose value is exactly zero (ReLU kinks).
    pub skip_zero: bool,
    /// Skip coordinates whose ±h probe crosses a kink of the function, detected
    /// as disagreement between the differences at `h` and `h/10` beyond
    /// [`KINK_TOLERANCE`]. On smooth coordinates the two agree far more closely.
    pub kink_guard: bool,
}

/// Relative disagreement between step sizes that marks a probe as non-smooth.
pub const KINK_TOLERANCE: f64 = 1e-6;

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples: None,
            seed: 0,
            skip_zero: false,
            kink_guard: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probed: usize,
    /// Probes dropped by the kink guard.
    pub kinks: usize,
}

impl GradCheck {
    /// Compares reverse-mode gradients of `f` at `params` with central
    /// differences. Relative error is `|g_ad − g_fd| / max(1e-8, |g_fd|)`.
    pub fn run<T, F>(&self, f: F, params: &[Tensor<T>]) -> Result<GradCheckReport>
    where
        T: Scalar,
        F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
    {
        if self.h <= 0.0 {
            return Err(Error::Contract("finite-difference step must be positive".into()));
        }
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Tensor<T>> = vars
            .iter()
            .zip(params)
            .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();

        let mut coords: Vec<(usize, usize)> = params
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| {
                (0..p.numel())
                    .filter(move |&i| !(self.skip_zero && p.data()[i] == T::zero()))
                    .map(move |i| (pi, i))
            })
            .collect();
        if let Some(n) = self.samples {
            if n < coords.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut picked: Vec<usize> = sample(&mut rng, coords.len(), n).into_vec();
                picked.sort_unstable();
                coords = picked.into_iter().map(|i| coords[i]).collect();
            }
        }

        let eval = |values: &[Tensor<T>]| -> Result<f64> {
            let tape = Tape::new();
            let vars: Vec<_> = values.iter().map(|p| tape.constant(p.clone())).collect();
            Ok(f(&tape, &vars)?.item().to_f64_lossless())
        };
        let mut work = params.to_vec();
        let mut central = |pi: usize, i: usize, h: f64| -> Result<f64> {
            let orig = work[pi].data()[i];
            let h = T::of(h);
            work[pi].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let step = (orig + h).to_f64_lossless() - (orig - h).to_f64_lossless();
            Ok((up - down) / step)
        };
        let mut max_err = 0.0f64;
        let mut kinks = 0;
        for &(pi, i) in &coords {
            let fd = central(pi, i, self.h)?;
            if self.kink_guard {
                let fine = central(pi, i, self.h / 10.0)?;
                if (fd - fine).abs() > KINK_TOLERANCE * fd.abs().max(fine.abs()).max(1e-8) {
                    kinks += 1;
                    continue;
                }
            }
            let ad = analytic[pi].data()[i].to_f64_lossless();
            let err = (ad - fd).abs() / fd.abs().max(1e-8);
            max_err = max_err.max(err);
        }
        Ok(GradCheckReport {
            max_relative_error: max_err,
            probed: coords.len() - kinks,
            kinks,
        })
    }
}
