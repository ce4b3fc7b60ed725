//! Browser bindings: each operation runs a small simulation and returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hybridnet::apsp::{apsp_approx, compare_to_exact, ApproxMode, DEPTH_FACTOR};
use hybridnet::graph::{all_pairs, dijkstra, gen_graph, source_spd, Family, WeightMode};
use hybridnet::harness::scaling_fit;
use hybridnet::sim::{HybridConfig, Network};
use hybridnet::sssp_exact::{phase_bound, sssp_exact};
use hybridnet::tokens::{disseminate, sample_tokens, spread_tokens, TokenParams};

/// Largest size the page accepts, to keep the tab responsive.
pub const MAX_NODES: usize = 1024;

#[derive(Debug, Serialize)]
pub struct TokenPoint {
    pub k: usize,
    pub median_rounds: f64,
    pub complete_runs: usize,
}

#[derive(Debug, Serialize)]
pub struct TokenScaling {
    pub n: usize,
    pub seeds: u64,
    pub points: Vec<TokenPoint>,
    pub slope: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SsspDemo {
    pub family: String,
    pub n: usize,
    pub spd: usize,
    pub phases: usize,
    pub phase_bound: usize,
    pub phase_rounds: Vec<u64>,
    pub total_rounds: u64,
    pub exact: bool,
    pub dist: Vec<Option<u64>>,
}

#[derive(Debug, Serialize)]
pub struct StretchRow {
    pub mode: String,
    pub max_ratio: f64,
    pub sound: bool,
    pub marked: usize,
    pub rounds: u64,
}

fn check_n(n: usize) -> Result<(), String> {
    if !(2..=MAX_NODES).contains(&n) {
        return Err(format!("n must be between 2 and {MAX_NODES}"));
    }
    Ok(())
}

/// Token dissemination rounds for each k in `ks` on random graphs of size `n`.
pub fn token_scaling_report(n: usize, ks: &[usize], seeds: u64) -> Result<TokenScaling, String> {
    check_n(n)?;
    if ks.is_empty() || ks.contains(&0) || seeds == 0 {
        return Err("need positive token counts and at least one seed".into());
    }
    let mut points = Vec::new();
    let mut samples = Vec::new();
    for &k in ks {
        let mut rounds = Vec::new();
        let mut complete = 0;
        for seed in 0..seeds {
            let g = gen_graph(Family::RandomConnected, n, WeightMode::Unit, seed).map_err(|e| e.to_string())?;
            let mut net = Network::new(&g, HybridConfig::new(n, seed));
            let initial = if k <= n { sample_tokens(n, k) } else { spread_tokens(n, k) };
            let (_, stats) = disseminate(&mut net, initial, &TokenParams::default()).map_err(|e| e.to_string())?;
            complete += usize::from(stats.complete);
            let r = net.ledger().total_rounds() as f64;
            rounds.push(r);
            samples.push((k as f64, r));
        }
        rounds.sort_by(f64::total_cmp);
        let mid = rounds.len() / 2;
        let median = if rounds.len() % 2 == 1 { rounds[mid] } else { (rounds[mid - 1] + rounds[mid]) / 2.0 };
        points.push(TokenPoint { k, median_rounds: median, complete_runs: complete });
    }
    let slope = scaling_fit(&samples).ok().map(|f| f.slope);
    Ok(TokenScaling { n, seeds, points, slope })
}

/// Exact SSSP from node 1 on one generated graph.
pub fn exact_sssp_report(family: &str, n: usize, seed: u64) -> Result<SsspDemo, String> {
    check_n(n)?;
    let fam = Family::parse(family).ok_or_else(|| format!("unknown family {family:?}"))?;
    let g = gen_graph(fam, n, WeightMode::Uniform(8), seed).map_err(|e| e.to_string())?;
    let spd = source_spd(&g, 0);
    let mut net = Network::new(&g, HybridConfig::new(g.n(), seed));
    let out = sssp_exact(&mut net, 0).map_err(|e| e.to_string())?;
    Ok(SsspDemo {
        family: fam.name(),
        n: g.n(),
        spd,
        phases: out.phases.len(),
        phase_bound: phase_bound(spd),
        phase_rounds: out.phases.iter().map(|p| p.rounds).collect(),
        total_rounds: net.ledger().total_rounds(),
        exact: out.dist == dijkstra(&g, 0).dist,
        dist: out.dist.iter().map(|d| d.value()).collect(),
    })
}

/// Worst stretch of the 3-approximate and (1+eps)-approximate APSP on one unweighted random graph.
pub fn apsp_stretch_report(n: usize, seed: u64, eps: f64) -> Result<Vec<StretchRow>, String> {
    check_n(n)?;
    let g = gen_graph(Family::RandomConnected, n, WeightMode::Unit, seed).map_err(|e| e.to_string())?;
    let exact = all_pairs(&g);
    [(ApproxMode::Three, "3".to_string()), (ApproxMode::Eps(eps), format!("1+{eps}"))]
        .into_iter()
        .map(|(mode, label)| {
            let mut net = Network::new(&g, HybridConfig::new(n, seed));
            let out = apsp_approx(&mut net, mode, None, DEPTH_FACTOR).map_err(|e| e.to_string())?;
            let (max_ratio, sound) = compare_to_exact(&out.matrix, &exact);
            Ok(StretchRow { mode: label, max_ratio, sound, marked: out.marked, rounds: net.ledger().total_rounds() })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn token_scaling(n: usize, ks: &str, seeds: u32) -> Result<String, JsValue> {
    let parsed: Result<Vec<usize>, String> =
        ks.split(',').map(|s| s.trim().parse().map_err(|_| format!("bad token count {s:?}"))).collect();
    to_js(parsed.and_then(|ks| token_scaling_report(n, &ks, seeds as u64)))
}

#[wasm_bindgen]
pub fn exact_sssp(family: &str, n: usize, seed: u32) -> Result<String, JsValue> {
    to_js(exact_sssp_report(family, n, seed as u64))
}

#[wasm_bindgen]
pub fn apsp_stretch(n: usize, seed: u32, eps: f64) -> Result<String, JsValue> {
    to_js(apsp_stretch_report(n, seed as u64, eps))
}
