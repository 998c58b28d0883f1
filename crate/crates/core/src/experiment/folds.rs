use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Case indices of one client within one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `folds[f][c]` is client `c`'s split for fold `f`.
pub type FoldPlan = Vec<Vec<ClientSplit>>;

/// Shuffled k-fold partition of every client's cases.
///
/// Each client is shuffled with its own stream of `seed`; fold `f` tests on
/// the `f`-th chunk. When the count does not divide evenly, the first
/// `n mod k` folds hold one extra case.
pub fn kfold_split(case_counts: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold split needs k >= 2, got {k}")));
    }
    let mut chunks_per_client = Vec::with_capacity(case_counts.len());
    for (client, &n) in case_counts.iter().enumerate() {
        if n < k {
            return Err(Error::InvalidArgument(format!(
                "client {client} has {n} cases, fewer than k = {k}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(client as u64);
        order.shuffle(&mut rng);
        let (base, extra) = (n / k, n % k);
        let mut chunks = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            chunks.push(order[start..start + len].to_vec());
            start += len;
        }
        chunks_per_client.push(chunks);
    }
    Ok((0..k)
        .map(|f| {
            chunks_per_client
                .iter()
                .map(|chunks| {
                    let mut test = chunks[f].clone();
                    let mut train: Vec<usize> = chunks
                        .iter()
                        .enumerate()
                        .filter(|&(g, _)| g != f)
                        .flat_map(|(_, c)| c.iter().copied())
                        .collect();
                    test.sort_unstable();
                    train.sort_unstable();
                    ClientSplit { train, test }
                })
                .collect()
        })
        .collect())
}
