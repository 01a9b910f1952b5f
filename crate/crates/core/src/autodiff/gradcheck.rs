//! Central finite-difference gradient checking in double precision.
//!
//! The numerical side only ever evaluates forward passes, so it stays
//! independent of the reverse-mode rules it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Skip coordinates whose `±step` perturbation moves some `abs` or
    /// `leaky_relu` input across zero; the central difference is not a
    /// derivative estimate there.
    pub skip_kinks: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-4,
            max_coords: None,
            seed: 0,
            skip_kinks: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per input: `max|analytic - numeric| / max(|analytic|, |numeric|)`
    /// over the checked coordinates, with the denominator taken tensor-wide.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
    /// Coordinates left out because their stencil straddled a kink.
    pub coords_skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok((g.value(loss).item()?, g.branch_pattern()))
}

impl GradCheck {
    pub fn sampled(max_coords: usize, seed: u64) -> Self {
        GradCheck {
            max_coords: Some(max_coords),
            seed,
            ..Default::default()
        }
    }

    /// Compares reverse-mode gradients of the scalar built by `f` against
    /// central differences, for every tensor in `inputs`.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let grads = g.backward(loss)?;
        let pattern = g.branch_pattern();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut per_input = Vec::with_capacity(inputs.len());
        let mut coords_checked = 0;
        let mut coords_skipped = 0;
        let mut work = inputs.to_vec();
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads
                .get(*var)
                .ok_or_else(|| Error::Numeric("missing leaf gradient".into()))?
                .data()
                .to_vec();
            let n = analytic.len();
            let quota = self.max_coords.unwrap_or(n);
            let coords: Vec<usize> = match self.max_coords {
                // Draw replacements for skipped coordinates from the same order.
                Some(m) if m < n && self.skip_kinks => sample(&mut rng, n, n).into_vec(),
                Some(m) if m < n => {
                    let mut c = sample(&mut rng, n, m).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            let mut max_err = 0.0f64;
            let mut scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let mut here = 0;
            for &i in &coords {
                if here == quota {
                    break;
                }
                let orig = work[k].data()[i];
                work[k].data_mut()[i] = orig + self.step;
                let (plus, p_plus) = eval(&work, &f)?;
                work[k].data_mut()[i] = orig - self.step;
                let (minus, p_minus) = eval(&work, &f)?;
                work[k].data_mut()[i] = orig;
                if self.skip_kinks && (p_plus != pattern || p_minus != pattern) {
                    coords_skipped += 1;
                    continue;
                }
                here += 1;
                let numeric = (plus - minus) / (2.0 * self.step);
                max_err = max_err.max((analytic[i] - numeric).abs());
                scale = scale.max(analytic[i].abs()).max(numeric.abs());
            }
            coords_checked += here;
            per_input.push(if scale > 0.0 { max_err / scale } else { max_err });
        }
        Ok(GradCheckReport {
            per_input,
            coords_checked,
            coords_skipped,
        })
    }
}
