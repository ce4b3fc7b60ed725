//! Approximate SSSP: Bellman-Ford over a skeleton of marked nodes, where each
//! skeleton round is a broadcast among the marked nodes carried by token
//! dissemination.

use rand::Rng;
use thiserror::Error;

use crate::apsp::exploration_depth;
use crate::graph::{bellman_ford_k_sources, Dist, NodeId};
use crate::rng::purpose;
use crate::sim::Network;
use crate::tokens::{disseminate, Token, TokenError, TokenParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BccError {
    #[error("approximation parameter must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("marking parameter must be at least 1, got {0}")]
    BadSpread(f64),
    #[error("source {0} is not a node")]
    BadSource(usize),
    #[error(transparent)]
    Tokens(#[from] TokenError),
}

/// `min(n, n^(1/3) / eps^6)`.
pub fn bcc_spread(n: usize, eps: f64) -> f64 {
    ((n as f64).cbrt() * eps.powi(-6)).min(n as f64).max(1.0)
}

#[derive(Clone, Debug)]
pub struct BccOutput {
    pub dist: Vec<Dist>,
    pub marked: Vec<NodeId>,
    /// Skeleton distance from the source to each marked node, as broadcast.
    pub skeleton_dist: Vec<Dist>,
    pub depth: usize,
    /// Broadcast rounds of the skeleton Bellman-Ford, including the final quiet one.
    pub broadcast_rounds: usize,
    /// Broadcast rounds in which some marked node missed a broadcast.
    pub incomplete_broadcasts: usize,
    pub final_broadcast_complete: bool,
}

/// `spread` overrides the marking parameter x; `None` uses [`bcc_spread`].
pub fn sssp_bcc(
    net: &mut Network,
    source: NodeId,
    eps: f64,
    spread: Option<f64>,
    depth_factor: f64,
) -> Result<BccOutput, BccError> {
    if !(eps > 0.0) {
        return Err(BccError::BadEpsilon(eps));
    }
    let g = net.graph();
    let n = g.n();
    if source >= n {
        return Err(BccError::BadSource(source + 1));
    }
    let x = match spread {
        Some(x) if x >= 1.0 => x.min(n as f64),
        Some(x) => return Err(BccError::BadSpread(x)),
        None => bcc_spread(n, eps),
    };
    net.set_phase("construct_skeleton");
    let marked: Vec<NodeId> =
        (0..n).filter(|&v| v == source || net.node_rng(purpose::MARK, v, 0).random_bool(1.0 / x)).collect();
    let depth = exploration_depth(n, x, depth_factor);
    let labels = bellman_ford_k_sources(g, &marked, depth);
    for _ in 0..depth {
        net.local_step(2 * marked.len() as u64);
    }
    let mm = marked.len();
    let src = marked.binary_search(&source).expect("source is marked");
    // skeleton adjacency known locally by each marked node
    let adj: Vec<Vec<(usize, u64)>> = (0..mm)
        .map(|i| (0..mm).filter(|&j| j != i).filter_map(|j| labels.get(marked[i], j).value().map(|w| (j, w))).collect())
        .collect();

    net.set_phase("skeleton_bf");
    let mut est = vec![Dist::INF; mm];
    est[src] = Dist::ZERO;
    let mut broadcast_rounds = 0;
    let mut incomplete = 0;
    loop {
        broadcast_rounds += 1;
        let mut initial = vec![Vec::new(); n];
        for (i, &u) in marked.iter().enumerate() {
            initial[u].push(Token([u as u64, est[i].0, broadcast_rounds as u64]));
        }
        let (st, _) = disseminate(net, initial, &TokenParams::labelled("broadcast"))?;
        let mut heard: Vec<Vec<Option<Dist>>> = vec![vec![None; mm]; mm];
        let mut missed = false;
        for (i, &u) in marked.iter().enumerate() {
            for t in st.known_by(u) {
                let j = marked.binary_search(&(t.0[0] as usize)).expect("sender is marked");
                heard[i][j] = Some(Dist(t.0[1]));
            }
            missed |= heard[i].iter().any(Option::is_none);
        }
        incomplete += missed as usize;
        let next: Vec<Dist> = (0..mm)
            .map(|i| adj[i].iter().filter_map(|&(j, w)| heard[i][j].map(|d| d.plus(w))).fold(est[i], Dist::min))
            .collect();
        if next == est {
            break;
        }
        est = next;
    }

    net.set_phase("publish");
    let mut initial = vec![Vec::new(); n];
    for (i, &u) in marked.iter().enumerate() {
        initial[u].push(Token([u as u64, est[i].0, 0]));
    }
    let (st, stats) = disseminate(net, initial, &TokenParams::labelled("publish"))?;
    let dist: Vec<Dist> = (0..n)
        .map(|v| {
            let direct = labels.get(v, src);
            st.known_by(v)
                .map(|t| {
                    let j = marked.binary_search(&(t.0[0] as usize)).expect("sender is marked");
                    Dist(t.0[1]).add(labels.get(v, j))
                })
                .fold(direct, Dist::min)
        })
        .collect();
    Ok(BccOutput {
        dist,
        marked,
        skeleton_dist: est,
        depth,
        broadcast_rounds,
        incomplete_broadcasts: incomplete,
        final_broadcast_complete: stats.complete,
    })
}
