//! Weighted antenna mobility graph and its Louvain partition.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::mobility::{MobilityModel, ModelKind};
use crate::seed::stream;
use crate::time::TimeBucket;
use crate::trace::AntennaId;
use crate::{Error, Result};

/// Undirected weighted graph over antennas; no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityGraph {
    node_count: usize,
    /// `(a, b, weight)` with `a < b` (zero-based), sorted.
    edges: Vec<(u32, u32, f64)>,
}

impl MobilityGraph {
    /// Build from edges, merging duplicates and dropping self-loops and
    /// non-positive weights.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut merged: HashMap<(u32, u32), f64> = HashMap::new();
        for (a, b, w) in edges {
            assert!((a as usize) < node_count && (b as usize) < node_count, "edge endpoint out of range");
            if a == b || !(w > 0.0) {
                continue;
            }
            *merged.entry((a.min(b), a.max(b))).or_default() += w;
        }
        let mut edges: Vec<_> = merged.into_iter().map(|((a, b), w)| (a, b, w)).collect();
        edges.sort_by_key(|e| (e.0, e.1));
        Self { node_count, edges }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    /// Sum of edge weights (`m`).
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let key = (a.min(b) as u32, a.max(b) as u32);
        self.edges
            .binary_search_by_key(&key, |e| (e.0, e.1))
            .map(|i| self.edges[i].2)
            .unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "antenna_a,antenna_b,weight")?;
        for &(a, b, w) in &self.edges {
            writeln!(out, "{},{},{}", a + 1, b + 1, w)?;
        }
        Ok(())
    }
}

/// Expected trips per simulation step between antennas.
///
/// Members of each home class start at their home antenna and travel to
/// antenna `j` with the model's probability for the bucket; flows are
/// averaged over buckets by their share of simulation steps and summed over
/// both directions. Weights below `epsilon` are dropped.
pub fn build_graph(model: &MobilityModel, populations: &[u64], epsilon: f64) -> Result<MobilityGraph> {
    if model.kind() != ModelKind::HomeAntennaTime {
        return Err(Error::invalid("model", "graph construction needs a home_antenna_time model"));
    }
    let k = model.antenna_count();
    if populations.len() != k {
        return Err(Error::invalid("populations", format!("expected {k} entries, got {}", populations.len())));
    }
    let mut flow = vec![0.0f64; k * k];
    for (h, &pop) in populations.iter().enumerate() {
        if pop == 0 {
            continue;
        }
        for bucket in TimeBucket::all() {
            let scale = pop as f64 * bucket.frequency();
            let row = model.home_row(h, bucket);
            for (j, p) in row.to_dense().into_iter().enumerate() {
                flow[h * k + j] += scale * p;
            }
        }
    }
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let w = flow[a * k + b] + flow[b * k + a];
            if w >= epsilon && w > 0.0 {
                edges.push((a as u32, b as u32, w));
            }
        }
    }
    Ok(MobilityGraph { node_count: k, edges })
}

/// Community label of every antenna, labels contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    labels: Vec<u32>,
    count: usize,
}

impl CommunityAssignment {
    /// Relabel arbitrary labels to `0..count` in order of first appearance.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map: HashMap<usize, u32> = HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len() as u32;
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self {
            labels,
            count: map.len(),
        }
    }

    pub fn of(&self, antenna: AntennaId) -> u32 {
        self.labels[antenna.index()]
    }

    pub fn of_index(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "antenna_id,community_id")?;
        for (a, c) in self.labels.iter().enumerate() {
            writeln!(out, "{},{}", a + 1, c)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path, antenna_count: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut raw = vec![None; antenna_count];
        for row in reader.records() {
            let row = row.map_err(|e| Error::parse(path.display().to_string(), e))?;
            let parse = |s: &str| s.trim().parse::<i64>().map_err(|e| Error::parse(path.display().to_string(), e));
            let a = AntennaId::new(parse(&row[0])?, antenna_count)?;
            raw[a.index()] = Some(parse(&row[1])? as usize);
        }
        let raw = raw
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::parse(path.display().to_string(), format!("antenna {} unassigned", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_labels(&raw))
    }
}

/// Weighted Newman modularity with resolution `gamma`:
/// `Q = sum_c [ in_c / 2m - gamma * (tot_c / 2m)^2 ]`.
pub fn modularity_with(graph: &MobilityGraph, assignment: &CommunityAssignment, gamma: f64) -> Result<f64> {
    let m = graph.total_weight();
    if !(m > 0.0) {
        return Err(Error::EmptyGraph);
    }
    let mut inside = vec![0.0; assignment.count()];
    let mut tot = vec![0.0; assignment.count()];
    for &(a, b, w) in graph.edges() {
        let (ca, cb) = (assignment.of_index(a as usize), assignment.of_index(b as usize));
        tot[ca as usize] += w;
        tot[cb as usize] += w;
        if ca == cb {
            inside[ca as usize] += 2.0 * w;
        }
    }
    let two_m = 2.0 * m;
    Ok(inside
        .iter()
        .zip(&tot)
        .map(|(i, t)| i / two_m - gamma * (t / two_m) * (t / two_m))
        .sum())
}

pub fn modularity(graph: &MobilityGraph, assignment: &CommunityAssignment) -> Result<f64> {
    modularity_with(graph, assignment, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LouvainConfig {
    pub resolution: f64,
    pub seed: u64,
    /// Independent passes with different visit orders; the partition with
    /// the highest modularity is kept.
    pub restarts: u32,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            seed: 0,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LouvainResult {
    pub assignment: CommunityAssignment,
    /// Modularity of the final partition; zero for a graph without edges.
    pub modularity: f64,
    /// Modularity after each aggregation level, starting from singletons.
    pub levels: Vec<f64>,
}

/// Working graph for one Louvain level. Symmetric adjacency; `adj[i]` may
/// contain `(i, a_ii)` once aggregation has produced self-loops.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
}

impl Level {
    fn from_graph(g: &MobilityGraph) -> Self {
        let mut adj = vec![Vec::new(); g.node_count()];
        for &(a, b, w) in g.edges() {
            adj[a as usize].push((b as usize, w));
            adj[b as usize].push((a as usize, w));
        }
        Self::with_adj(adj)
    }

    fn with_adj(adj: Vec<Vec<(usize, f64)>>) -> Self {
        let degree = adj.iter().map(|n| n.iter().map(|e| e.1).sum()).collect();
        Self { adj, degree }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Local-move phase. Returns whether any node changed community.
    fn local_moves(&self, comm: &mut [usize], gamma: f64, two_m: f64, rng: &mut crate::seed::SimRng) -> bool {
        let n = self.len();
        let mut tot = vec![0.0; n];
        for i in 0..n {
            tot[comm[i]] += self.degree[i];
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut links: Vec<f64> = vec![0.0; n];
        let mut seen: Vec<usize> = Vec::new();
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let own = comm[i];
                for &(j, w) in &self.adj[i] {
                    if j == i {
                        continue;
                    }
                    let c = comm[j];
                    if links[c] == 0.0 {
                        seen.push(c);
                    }
                    links[c] += w;
                }
                tot[own] -= ki;
                let gain = |c: usize, links: &[f64]| links[c] - gamma * tot[c] * ki / two_m;
                let mut best = own;
                let mut best_gain = gain(own, &links);
                for &c in &seen {
                    let g = gain(c, &links);
                    if g > best_gain + 1e-12 * two_m.max(1.0) {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    moved_any = true;
                }
                for &c in &seen {
                    links[c] = 0.0;
                }
                links[own] = 0.0;
                seen.clear();
            }
            if !moved {
                return moved_any;
            }
        }
    }

    /// Collapse communities into nodes. Returns the coarse level and the
    /// dense renumbering of `comm`.
    fn aggregate(&self, comm: &[usize]) -> (Level, Vec<usize>) {
        let mut renumber: HashMap<usize, usize> = HashMap::new();
        let dense: Vec<usize> = comm
            .iter()
            .map(|&c| {
                let next = renumber.len();
                *renumber.entry(c).or_insert(next)
            })
            .collect();
        let k = renumber.len();
        let mut acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); k];
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &(j, w) in nbrs {
                *acc[dense[i]].entry(dense[j]).or_default() += w;
            }
        }
        let adj = acc
            .into_iter()
            .map(|m| {
                let mut v: Vec<(usize, f64)> = m.into_iter().collect();
                v.sort_by_key(|e| e.0);
                v
            })
            .collect();
        (Level::with_adj(adj), dense)
    }

    fn modularity(&self, comm: &[usize], gamma: f64, two_m: f64) -> f64 {
        let n = self.len();
        let mut inside = vec![0.0; n];
        let mut tot = vec![0.0; n];
        for i in 0..n {
            tot[comm[i]] += self.degree[i];
            for &(j, w) in &self.adj[i] {
                if comm[i] == comm[j] {
                    inside[comm[i]] += w;
                }
            }
        }
        (0..n)
            .map(|c| inside[c] / two_m - gamma * (tot[c] / two_m).powi(2))
            .sum()
    }
}

/// Two-phase Louvain modularity maximization.
///
/// Nodes are visited in a seeded random order; a node moves to the
/// neighbouring community with the largest modularity gain, ties going to
/// the first one encountered. Levels are aggregated until a level makes no
/// move. The whole procedure runs `restarts` times with independent orders
/// and the first partition of highest modularity wins.
pub fn louvain(graph: &MobilityGraph, config: &LouvainConfig) -> LouvainResult {
    let n = graph.node_count();
    let two_m = 2.0 * graph.total_weight();
    if !(two_m > 0.0) {
        return LouvainResult {
            assignment: CommunityAssignment::from_labels(&(0..n).collect::<Vec<_>>()),
            modularity: 0.0,
            levels: Vec::new(),
        };
    }
    let mut best: Option<LouvainResult> = None;
    for pass in 0..config.restarts.max(1) {
        let r = louvain_pass(graph, config.resolution, two_m, &mut stream(config.seed, pass as u64, "louvain"));
        if best.as_ref().is_none_or(|b| r.modularity > b.modularity) {
            best = Some(r);
        }
    }
    best.expect("at least one pass")
}

fn louvain_pass(graph: &MobilityGraph, gamma: f64, two_m: f64, rng: &mut crate::seed::SimRng) -> LouvainResult {
    let n = graph.node_count();
    let mut level = Level::from_graph(graph);
    // Community of each original node, expressed as a node of `level`.
    let mut membership: Vec<usize> = (0..n).collect();
    let mut levels = vec![level.modularity(&(0..n).collect::<Vec<_>>(), gamma, two_m)];
    loop {
        let mut comm: Vec<usize> = (0..level.len()).collect();
        if !level.local_moves(&mut comm, gamma, two_m, rng) {
            break;
        }
        let q = level.modularity(&comm, gamma, two_m);
        let (next, dense) = level.aggregate(&comm);
        for m in membership.iter_mut() {
            *m = dense[*m];
        }
        levels.push(q);
        level = next;
    }
    let assignment = CommunityAssignment::from_labels(&membership);
    let modularity = modularity_with(graph, &assignment, gamma).expect("non-empty graph");
    LouvainResult {
        assignment,
        modularity,
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::Categorical;
    use crate::time::BUCKETS;

    fn cliques(size: u32) -> MobilityGraph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for a in 0..size {
                for b in a + 1..size {
                    edges.push((base + a, base + b, 1.0));
                }
            }
        }
        edges.push((0, size, 1.0));
        MobilityGraph::from_edges(2 * size as usize, edges)
    }

    #[test]
    fn two_cliques_split() {
        let g = cliques(5);
        for seed in 0..5 {
            let r = louvain(&g, &LouvainConfig { seed, ..Default::default() });
            assert_eq!(r.assignment.count(), 2);
            let l = r.assignment.labels();
            assert!(l[..5].iter().all(|&c| c == l[0]));
            assert!(l[5..].iter().all(|&c| c == l[5]));
            assert!((r.modularity - modularity(&g, &r.assignment).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn modularity_identities() {
        let mut g = cliques(4);
        g.edges.retain(|e| e != &(0, 4, 1.0));
        let one = CommunityAssignment::from_labels(&[0; 8]);
        assert!(modularity(&g, &one).unwrap().abs() < 1e-15);
        let split = CommunityAssignment::from_labels(&[0, 0, 0, 0, 1, 1, 1, 1]);
        assert!((modularity(&g, &split).unwrap() - 0.5).abs() < 1e-15);
        let empty = MobilityGraph::from_edges(3, []);
        assert!(matches!(modularity(&empty, &one), Err(Error::EmptyGraph)));
    }

    #[test]
    fn isolated_nodes_are_singletons() {
        let g = MobilityGraph::from_edges(5, [(0, 1, 1.0)]);
        let r = louvain(&g, &LouvainConfig::default());
        let l = r.assignment.labels();
        assert_eq!(l[0], l[1]);
        assert_eq!(r.assignment.count(), 4);
        let empty = louvain(&MobilityGraph::from_edges(3, []), &LouvainConfig::default());
        assert_eq!(empty.assignment.count(), 3);
    }

    #[test]
    fn stay_home_model_has_no_edges() {
        let m = MobilityModel::planted(4, None, |h, _| Categorical::point(4, h.index() as u32)).unwrap();
        let g = build_graph(&m, &[10, 10, 10, 10], 1e-6).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn two_antenna_flow() {
        // Each class spends 90% at home and 10% at the other antenna.
        let m = MobilityModel::planted(2, None, |h, _| {
            let other = 1 - h.index() as u32;
            Categorical::from_sparse(2, 0.0, [(h.index() as u32, 0.9), (other, 0.1)])
        })
        .unwrap();
        let p = 1000;
        let g = build_graph(&m, &[p, p], 1e-6).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert!((g.edges()[0].2 - 0.2 * p as f64).abs() < 1e-9);
    }

    /// Direct double loop over every (home, bucket, i, j) as the oracle.
    #[test]
    fn flow_matches_brute_force() {
        let k = 5;
        let m = MobilityModel::planted(k, None, |h, b| {
            let x = h.index() as u32;
            Categorical::from_sparse(k, 0.3, [(x, 5.0 + b.index() as f64), ((x + 2) % k as u32, 1.0 + x as f64)])
        })
        .unwrap();
        let pops = [3u64, 0, 7, 11, 2];
        let g = build_graph(&m, &pops, 0.0).unwrap();
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let mut w = 0.0;
                for b in 0..BUCKETS {
                    let bucket = TimeBucket::from_index(b);
                    let ctx = |h: usize| crate::mobility::Context::Home { home: AntennaId::from_index(h), bucket };
                    w += bucket.frequency()
                        * (pops[i] as f64 * m.predict(ctx(i)).unwrap()[j]
                            + pops[j] as f64 * m.predict(ctx(j)).unwrap()[i]);
                }
                assert!((g.weight(i, j) - w).abs() < 1e-9, "{i}-{j}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = cliques(6);
        let a = louvain(&g, &LouvainConfig { seed: 3, ..Default::default() });
        let b = louvain(&g, &LouvainConfig { seed: 3, ..Default::default() });
        assert_eq!(a, b);
        assert!(a.levels.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn csv_exports() {
        let g = cliques(2);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("antenna_a,antenna_b,weight\n1,2,1\n"));
        let a = CommunityAssignment::from_labels(&[5, 5, 2, 2]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        a.write_csv(&mut f).unwrap();
        assert_eq!(CommunityAssignment::read_csv(&p, 4).unwrap(), a);
    }
}
