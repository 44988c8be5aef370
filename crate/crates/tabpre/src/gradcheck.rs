//! Central-finite-difference gradient verification. Used by the test suites
//! and the acceptance gate; kept independent of the backward pass it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TabError;
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;

/// Compares analytic gradients against central differences (h = 1e-5) for up
/// to `max_components` randomly sampled components of every parameter.
/// Returns the maximum relative error observed.
pub fn max_relative_error(
    graph: &Graph,
    loss: NodeId,
    params: &mut ParamSet,
    seed: u64,
    max_components: usize,
) -> Result<f64, TabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = graph.forward(params, &mut rng.clone(), false)?;
    let grads = graph.backward(&eval, loss, params)?;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for pid in 0..params.len() {
        let Some(g) = &grads[pid] else { continue };
        let n = params.tensor(pid).numel();
        let picks = if n <= max_components {
            (0..n).collect::<Vec<_>>()
        } else {
            sample(&mut rng, n, max_components).into_vec()
        };
        let analytic: Vec<f64> = picks.iter().map(|&c| g.data()[c]).collect();
        for (&c, &a) in picks.iter().zip(analytic.iter()) {
            let orig = params.tensor(pid).data()[c];
            params.tensor_mut(pid).data_mut()[c] = orig + h;
            let lp = graph
                .forward(params, &mut rng.clone(), false)?
                .value(loss)
                .item();
            params.tensor_mut(pid).data_mut()[c] = orig - h;
            let lm = graph
                .forward(params, &mut rng.clone(), false)?
                .value(loss)
                .item();
            params.tensor_mut(pid).data_mut()[c] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
