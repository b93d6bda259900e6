use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loss value plus analytic gradients, as produced by one tape pass.
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
}

/// Compare analytic gradients against central finite differences.
///
/// `f` evaluates the scalar objective at the given parameter values and
/// returns its analytic gradients. Coordinates are sampled per parameter
/// (all of them when a tensor has at most `max_coords_per_param`); the
/// returned figure is max over sampled coordinates of
/// |analytic − cd| / (|analytic| + |cd| + 1e-12).
///
/// `f` must be deterministic; it is evaluated twice at the base point and a
/// mismatch is a contract error (e.g. unseeded dropout).
pub fn finite_difference_check<F>(
    mut f: F,
    params: &BTreeMap<String, Tensor>,
    eps: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&BTreeMap<String, Tensor>) -> Result<LossAndGrads>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-2]")));
    }
    let base = f(params)?;
    let again = f(params)?;
    if base.loss.to_bits() != again.loss.to_bits() {
        return Err(Error::Contract(
            "objective is not deterministic; seed all randomness before checking".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut max_rel = 0.0f64;

    let names: Vec<String> = params.keys().cloned().collect();
    for name in names {
        let n = params[&name].len();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            (0..max_coords_per_param).map(|_| rng.random_range(0..n)).collect()
        };
        let analytic = base
            .grads
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no gradient returned for {name}")))?
            .data()
            .to_vec();
        for c in coords {
            let orig = params[&name].data()[c];
            work.get_mut(&name).unwrap().data_mut()[c] = orig + eps;
            let up = f(&work)?.loss;
            work.get_mut(&name).unwrap().data_mut()[c] = orig - eps;
            let down = f(&work)?.loss;
            work.get_mut(&name).unwrap().data_mut()[c] = orig;
            let cd = (up - down) / (2.0 * eps);
            let a = analytic[c];
            let rel = (a - cd).abs() / (a.abs() + cd.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
