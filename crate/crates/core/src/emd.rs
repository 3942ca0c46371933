//! Earth Mover's Distance between univariate weight distributions and the
//! range-normalized similarity scores of adjacent MLP layers.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::tensor::{Float, RngState, Tensor};

/// Mass tolerance of a valid distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default cap on values drawn from one weight matrix.
pub const DEFAULT_MAX_SAMPLES: usize = 65_536;

/// Finite distribution on the real line: strictly increasing support points
/// with non-negative masses summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    points: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let bad = |msg: String| Err(Error::Distribution(msg));
        if points.is_empty() || points.len() != masses.len() {
            return bad(format!(
                "{} points with {} masses",
                points.len(),
                masses.len()
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return bad("support points must be finite".into());
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return bad("support points must be strictly increasing".into());
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return bad("masses must be non-negative".into());
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return bad(format!("masses sum to {total}"));
        }
        Ok(Self { points, masses })
    }

    /// Empirical distribution of `values`, equal mass per value.
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Distribution("no samples".into()));
        }
        let mut sorted = values.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Distribution("samples must be finite".into()));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let unit = 1.0 / sorted.len() as f64;
        let mut points: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for v in sorted {
            if points.last() == Some(&v) {
                *counts.last_mut().expect("parallel vectors") += 1;
            } else {
                points.push(v);
                counts.push(1);
            }
        }
        let masses = counts.into_iter().map(|c| c as f64 * unit).collect();
        Self::new(points, masses)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every support point moved by `c`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(
            self.points.iter().map(|p| p + c).collect(),
            self.masses.clone(),
        )
    }
}

fn check_mass(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    let (mp, mq): (f64, f64) = (p.masses.iter().sum(), q.masses.iter().sum());
    if (mp - mq).abs() > 2.0 * MASS_TOLERANCE {
        return Err(Error::Distribution(format!(
            "total masses differ: {mp} vs {mq}"
        )));
    }
    Ok(())
}

/// `∫|F_P − F_Q|` by a merged sweep over both supports.
pub fn emd_1d(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_mass(p, q)?;
    let (mut i, mut j) = (0, 0);
    let (mut cdf_p, mut cdf_q) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < p.len() || j < q.len() {
        let next = match (p.points.get(i), q.points.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if let Some(x) = prev {
            total += (cdf_p - cdf_q).abs() * (next - x);
        }
        if p.points.get(i) == Some(&next) {
            cdf_p += p.masses[i];
            i += 1;
        }
        if q.points.get(j) == Some(&next) {
            cdf_q += q.masses[j];
            j += 1;
        }
        prev = Some(next);
    }
    Ok(total)
}

/// Optimal transport plan and its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Transport {
    pub cost: f64,
    /// `plan[i][j]`: mass moved from `P`'s point `i` to `Q`'s point `j`.
    pub plan: Vec<Vec<f64>>,
}

/// Exact transport problem solved as a min-cost flow (successive shortest
/// paths) with ground cost `|p_i − q_j|`. Independent of the CDF formula
/// and intended for small supports.
pub fn emd_lp(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<Transport> {
    check_mass(p, q)?;
    let (n, m) = (p.len(), q.len());
    // nodes: source, P points, Q points, sink
    let source = 0;
    let sink = n + m + 1;
    let mut g = FlowGraph::new(n + m + 2);
    for i in 0..n {
        g.add_edge(source, 1 + i, p.masses[i], 0.0);
    }
    let mut mid = vec![vec![0usize; m]; n];
    for (i, row) in mid.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = g.add_edge(
                1 + i,
                1 + n + j,
                f64::INFINITY,
                (p.points[i] - q.points[j]).abs(),
            );
        }
    }
    for j in 0..m {
        g.add_edge(1 + n + j, sink, q.masses[j], 0.0);
    }
    let target: f64 = p.masses.iter().sum::<f64>().min(q.masses.iter().sum());
    let mut sent = 0.0;
    while target - sent > 1e-15 {
        let Some(pushed) = g.augment(source, sink) else {
            break;
        };
        sent += pushed;
    }
    let plan: Vec<Vec<f64>> = mid
        .iter()
        .map(|row| row.iter().map(|&e| g.flow(e)).collect())
        .collect();
    let cost = plan
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &f)| (i, j, f)))
        .map(|(i, j, f)| f * (p.points[i] - q.points[j]).abs())
        .sum();
    Ok(Transport { cost, plan })
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
    flow: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Returns the index of the forward edge; its reverse is `index ^ 1`.
    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge {
            to,
            cap,
            cost,
            flow: 0.0,
        });
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
            flow: 0.0,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn residual(&self, e: usize) -> f64 {
        self.edges[e].cap - self.edges[e].flow
    }

    fn flow(&self, e: usize) -> f64 {
        self.edges[e].flow
    }

    /// Pushes flow along one cheapest residual path (Bellman-Ford queue
    /// variant, since residual costs may be negative).
    fn augment(&mut self, s: usize, t: usize) -> Option<f64> {
        const EPS: f64 = 1e-15;
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        let mut queued = vec![false; n];
        let mut queue = VecDeque::from([s]);
        dist[s] = 0.0;
        while let Some(u) = queue.pop_front() {
            queued[u] = false;
            for &e in &self.adj[u] {
                if self.residual(e) <= EPS {
                    continue;
                }
                let v = self.edges[e].to;
                let nd = dist[u] + self.edges[e].cost;
                if nd < dist[v] - 1e-14 {
                    dist[v] = nd;
                    via[v] = e;
                    if !queued[v] {
                        queued[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        if via[t] == usize::MAX {
            return None;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while v != s {
            let e = via[v];
            push = push.min(self.residual(e));
            v = self.edges[e ^ 1].to;
        }
        let mut v = t;
        while v != s {
            let e = via[v];
            self.edges[e].flow += push;
            self.edges[e ^ 1].flow -= push;
            v = self.edges[e ^ 1].to;
        }
        Some(push)
    }
}

/// Empirical distribution of a tensor's elements. Tensors with more than
/// `max_samples` elements are reduced to a seeded uniform subsample without
/// replacement.
pub fn weight_distribution<F: Float>(
    w: &Tensor<F>,
    max_samples: usize,
    seed: u64,
) -> Result<DiscreteDistribution> {
    let data = w.data();
    if data.is_empty() {
        return Err(Error::Empty("weight tensor has no elements".into()));
    }
    let values: Vec<f64> = if max_samples > 0 && data.len() > max_samples {
        let mut rng = RngState::new(seed);
        let mut picks = sample(rng.rng(), data.len(), max_samples).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| data[i].as_f64()).collect()
    } else {
        data.iter().map(|v| v.as_f64()).collect()
    };
    DiscreteDistribution::from_samples(&values)
}

/// `max − min` over all elements.
pub fn layer_range<F: Float>(w: &Tensor<F>) -> Result<f64> {
    let data = w.data();
    if data.is_empty() {
        return Err(Error::Empty("weight tensor has no elements".into()));
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
    Ok(hi - lo)
}

/// MLP projection family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gate,
    Up,
    Down,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gate, Family::Up, Family::Down];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gate => "gate_proj",
            Family::Up => "up_proj",
            Family::Down => "down_proj",
        }
    }
}

/// Scores of one projection family across layers.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub family: Family,
    /// EMD between layer `i` and `i + 1`.
    pub emd: Vec<f64>,
    /// Range of each layer's weights.
    pub delta: Vec<f64>,
    /// `emd[i] / min(delta[i], delta[i + 1])`, `None` when a range is zero.
    pub r: Vec<Option<f64>>,
    /// Largest defined `r`.
    pub r_max: Option<f64>,
    /// Full symmetric EMD matrix between all layers.
    pub matrix: Vec<Vec<f64>>,
}

impl FamilyReport {
    /// Pairs whose ratio is undefined because a range is zero.
    pub fn undefined(&self) -> Vec<usize> {
        (0..self.r.len()).filter(|&i| self.r[i].is_none()).collect()
    }

    /// `r_max · 100`, the unit used for reporting.
    pub fn r_max_percent(&self) -> Option<f64> {
        self.r_max.map(|r| r * 100.0)
    }
}

/// Adjacent-layer similarity for one family over the given matrices (one per
/// layer, in stack order).
pub fn family_scores<F: Float>(
    family: Family,
    layers: &[&Tensor<F>],
    max_samples: usize,
    seed: u64,
) -> Result<FamilyReport> {
    if layers.len() < 2 {
        return Err(Error::Empty(format!(
            "{} layers carry MLP weights; at least 2 are needed",
            layers.len()
        )));
    }
    let dists = layers
        .iter()
        .map(|w| weight_distribution(w, max_samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let delta = layers
        .iter()
        .map(|w| layer_range(w))
        .collect::<Result<Vec<_>>>()?;
    let l = layers.len();
    let mut matrix = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let e = emd_1d(&dists[i], &dists[j])?;
            matrix[i][j] = e;
            matrix[j][i] = e;
        }
    }
    let emd: Vec<f64> = (0..l - 1).map(|i| matrix[i][i + 1]).collect();
    let r: Vec<Option<f64>> = (0..l - 1)
        .map(|i| {
            let denom = delta[i].min(delta[i + 1]);
            (denom > 0.0).then(|| emd[i] / denom)
        })
        .collect();
    let r_max = r
        .iter()
        .flatten()
        .copied()
        .max_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(FamilyReport {
        family,
        emd,
        delta,
        r,
        r_max,
        matrix,
    })
}

/// Scores for gate, up and down projections over every layer slot that has
/// an MLP. Layers of one share group read the same matrices, so their
/// adjacent EMD is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmdReport {
    pub layers: Vec<usize>,
    pub families: Vec<FamilyReport>,
}

pub fn r_scores<F: Float>(
    model: &ModelWeights<F>,
    max_samples: usize,
    seed: u64,
) -> Result<EmdReport> {
    let layers: Vec<usize> = (0..model.config.num_layers()).collect();
    let mlps: Vec<_> = layers.iter().map(|&i| model.layer(i).mlp()).collect();
    let families = Family::ALL
        .iter()
        .map(|&family| {
            let mats: Vec<&Tensor<F>> = mlps
                .iter()
                .map(|m| match family {
                    Family::Gate => &m.gate_proj,
                    Family::Up => &m.up_proj,
                    Family::Down => &m.down_proj,
                })
                .collect();
            family_scores(family, &mats, max_samples, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmdReport { layers, families })
}

/// One adjacent-pair row of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmdRow {
    pub family: &'static str,
    pub i: usize,
    pub emd: f64,
    pub delta_i: f64,
    pub delta_j: f64,
    pub r_i: Option<f64>,
}

/// Per-family summary row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmdSummaryRow {
    pub family: &'static str,
    pub r_max: Option<f64>,
    pub r_max_x100: Option<f64>,
    pub undefined_pairs: usize,
}

impl EmdReport {
    pub fn rows(&self) -> Vec<EmdRow> {
        self.families
            .iter()
            .flat_map(|f| {
                (0..f.emd.len()).map(move |i| EmdRow {
                    family: f.family.name(),
                    i: self.layers[i],
                    emd: f.emd[i],
                    delta_i: f.delta[i],
                    delta_j: f.delta[i + 1],
                    r_i: f.r[i],
                })
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<EmdSummaryRow> {
        self.families
            .iter()
            .map(|f| EmdSummaryRow {
                family: f.family.name(),
                r_max: f.r_max,
                r_max_x100: f.r_max_percent(),
                undefined_pairs: f.undefined().len(),
            })
            .collect()
    }
}
