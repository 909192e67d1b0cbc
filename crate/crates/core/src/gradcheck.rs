//! Finite-difference verification of reverse-mode gradients.

use crate::error::CoreError;
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::Rng;

/// Central-difference step; 64-bit only.
pub const FD_STEP: f64 = 1e-5;

/// Compares analytic gradients of a scalar-valued graph against central
/// finite differences and returns the maximum relative error over the
/// sampled coordinates.
///
/// `fragment` must be deterministic: it is re-evaluated many times with
/// perturbed parameters, and two unperturbed evaluations that disagree
/// bitwise are reported as an error. `samples_per_param` bounds how many
/// coordinates of each parameter are probed (all of them when the parameter
/// is at most that large); sampling is seeded and reproducible.
pub fn grad_check<F>(
    fragment: F,
    params: &[Tensor<f64>],
    samples_per_param: usize,
    seed: u64,
) -> Result<f64, CoreError>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, CoreError>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, CoreError> {
        let mut tape = Tape::inference();
        let leaves: Vec<Tensor<f64>> = ps.iter().map(|p| tape.leaf(p)).collect();
        let out = fragment(&mut tape, &leaves)?;
        if !out.is_scalar() {
            return Err(CoreError::NotScalar {
                op: "grad_check",
                shape: out.shape().to_vec(),
            });
        }
        Ok(out.item())
    };

    let base = eval(params)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(CoreError::NonDeterministic);
    }

    let mut tape = Tape::new();
    let leaves: Vec<Tensor<f64>> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = fragment(&mut tape, &leaves)?;
    let grads = tape.backward(&loss)?;

    let mut max_rel = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(&leaves[pi]);
        let coords: Vec<usize> = if p.len() <= samples_per_param {
            (0..p.len()).collect()
        } else {
            let mut rng = rng::stream(seed, &[rng::tag("gradchk"), pi as u64]);
            let mut picked: Vec<usize> = Vec::with_capacity(samples_per_param);
            while picked.len() < samples_per_param {
                let c = rng.gen_range(0..p.len());
                if !picked.contains(&c) {
                    picked.push(c);
                }
            }
            picked
        };
        for c in coords {
            let a = analytic
                .as_ref()
                .map(|t| t.values()[c])
                .unwrap_or(0.0);
            let mut plus = p.values().to_vec();
            plus[c] += FD_STEP;
            let mut minus = p.values().to_vec();
            minus[c] -= FD_STEP;
            let mut ps_plus = params.to_vec();
            ps_plus[pi] = Tensor::from_vec(p.shape().to_vec(), plus)?;
            let mut ps_minus = params.to_vec();
            ps_minus[pi] = Tensor::from_vec(p.shape().to_vec(), minus)?;
            let f_plus = eval(&ps_plus)?;
            let f_minus = eval(&ps_minus)?;
            // Central differences cannot resolve a secant below a few ulps
            // of the function value; such coordinates measure as zero.
            let secant = f_plus - f_minus;
            let resolution = 8.0 * f64::EPSILON * f_plus.abs().max(f_minus.abs());
            let numeric = if secant.abs() <= resolution {
                0.0
            } else {
                secant / (2.0 * FD_STEP)
            };
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
