use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{GradientSet, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub parameter: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: Vec<ProbeResult>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// finite differences at `probe_count` coordinates drawn without replacement
/// (every coordinate when `probe_count` covers the whole store).
pub fn grad_check<F>(
    loss_fn: F,
    store: &ParameterStore,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(f64, GradientSet)>,
{
    let (loss, analytic) = loss_fn(store)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at gradient-check base point".into()));
    }
    let coords: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.value.data().len()).map(move |i| (p, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, coords.len(), probe_count.min(coords.len()));
    let mut picked: Vec<usize> = picks.into_vec();
    picked.sort_unstable();

    let mut work = store.clone();
    let mut probes = Vec::with_capacity(picked.len());
    let mut max_rel: f64 = 0.0;
    for k in picked {
        let (p, i) = coords[k];
        let original = work.value(p).data()[i];
        work.value_mut(p).data_mut()[i] = original + epsilon;
        let (up, _) = loss_fn(&work)?;
        work.value_mut(p).data_mut()[i] = original - epsilon;
        let (down, _) = loss_fn(&work)?;
        work.value_mut(p).data_mut()[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss while probing {}[{i}]",
                store.parameter(p).name
            )));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.get(p).data()[i];
        let rel = relative_error(a, numeric);
        max_rel = max_rel.max(rel);
        probes.push(ProbeResult {
            parameter: store.parameter(p).name.clone(),
            offset: i,
            analytic: a,
            numeric,
            relative_error: rel,
        });
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        probes,
    })
}
