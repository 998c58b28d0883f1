use log::warn;

use crate::error::{Error, Result};
use crate::nn::{ParamEntry, ParamSet, ParamTag};

/// Whether the server averages and broadcasts this entry.
pub fn is_shared(entry: &ParamEntry, bn_exclude: bool) -> bool {
    !(bn_exclude && entry.tag == ParamTag::Norm)
}

#[derive(Clone, Debug)]
pub struct Aggregated {
    /// Shared entries hold the weighted average; excluded entries are copied
    /// from the first client and must not be broadcast.
    pub params: ParamSet,
    /// Effective weights, normalized to sum to 1.
    pub weights: Vec<f64>,
}

fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Weighted parameter average `Σ_i w_i·θ_i / Σ_i w_i` over every shared entry.
///
/// Falls back to uniform weights when the weights sum to zero. Client order is
/// the order of `params_list`, which fixes the summation order.
pub fn aggregate(params_list: &[&ParamSet], weights: &[f64], bn_exclude: bool) -> Result<Aggregated> {
    let first = *params_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one client".into()))?;
    if weights.len() != params_list.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} clients",
            weights.len(),
            params_list.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("aggregation weight {w} is not a non-negative number")));
    }
    for p in &params_list[1..] {
        first.check_compatible(p)?;
    }
    let mut weights = weights.to_vec();
    let mut total = pairwise_sum(&weights);
    if total <= 0.0 {
        warn!("aggregation weights sum to zero; falling back to uniform averaging");
        weights.fill(1.0);
        total = weights.len() as f64;
    }

    let mut out = first.clone();
    let mut terms = vec![0.0; params_list.len()];
    for (ei, entry) in out.entries_mut().iter_mut().enumerate() {
        if !is_shared(entry, bn_exclude) {
            continue;
        }
        for (j, value) in entry.tensor.data_mut().iter_mut().enumerate() {
            for (k, (p, w)) in params_list.iter().zip(&weights).enumerate() {
                terms[k] = w * p.entries()[ei].tensor.data()[j];
            }
            *value = pairwise_sum(&terms) / total;
        }
    }
    Ok(Aggregated {
        params: out,
        weights: weights.iter().map(|w| w / total).collect(),
    })
}
