//! The two communication rules. Both read a frozen snapshot of every
//! agent's post-training parameters, so the result for agent `i` does not
//! depend on the order in which agents are processed.

use super::{Method, P2pError};
use crate::topology::Topology;

fn check_len(expected: usize, got: usize) -> Result<(), P2pError> {
    if expected != got {
        return Err(P2pError::LengthMismatch { expected, got });
    }
    Ok(())
}

/// Pull-gossip: `x_i <- sum_j w_ij x_j` over the weight row, which includes `i`.
///
/// Evaluated as `x_i + sum_j w_ij (x_j - x_i)` in ascending `j`; with a
/// row-stochastic row this is the same weighted sum, and it returns `x_i`
/// bit-exactly when every pulled model equals it.
pub fn pull_gossip_aggregate(own: &[f64], row: &[(usize, f64)], snapshot: &[Vec<f64>]) -> Result<Vec<f64>, P2pError> {
    let mut out = own.to_vec();
    let mut acc = vec![0.0; own.len()];
    for &(j, w) in row {
        let x = snapshot.get(j).ok_or(P2pError::UnknownAgent(j))?;
        check_len(own.len(), x.len())?;
        for ((a, xj), xi) in acc.iter_mut().zip(x).zip(own) {
            *a += w * (xj - xi);
        }
    }
    out.iter_mut().zip(&acc).for_each(|(o, a)| *o += a);
    Ok(out)
}

/// P2P-BN: for each received model in order, `x_i <- (x_i + x_j) / 2`.
pub fn p2p_bn_aggregate(own: &[f64], received: &[&[f64]]) -> Result<Vec<f64>, P2pError> {
    let mut out = own.to_vec();
    for x in received {
        check_len(own.len(), x.len())?;
        for (o, xj) in out.iter_mut().zip(x.iter()) {
            *o = (*o + xj) / 2.0;
        }
    }
    Ok(out)
}

/// New parameters for agent `i` under `method`, reading only `snapshot`.
pub fn aggregate(method: Method, topology: &Topology, snapshot: &[Vec<f64>], i: usize) -> Result<Vec<f64>, P2pError> {
    let own = snapshot.get(i).ok_or(P2pError::UnknownAgent(i))?;
    match method {
        Method::Central => Ok(own.clone()),
        Method::PullGossip => pull_gossip_aggregate(own, topology.weights(i), snapshot),
        Method::P2pBn => {
            let received: Vec<&[f64]> = topology
                .in_neighbors(i)
                .iter()
                .map(|&j| snapshot.get(j).map(Vec::as_slice).ok_or(P2pError::UnknownAgent(j)))
                .collect::<Result<_, _>>()?;
            p2p_bn_aggregate(own, &received)
        }
    }
}
