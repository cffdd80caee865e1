//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use micromeasure::communities::MobilityGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All set partitions of `n` nodes as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            cur.push(b);
            rec(cur, n, max.max(b), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(&mut vec![0], n, 0, &mut out);
    out
}

/// Modularity from the textbook double sum over node pairs.
pub fn modularity_double_sum(n: usize, edges: &[(u32, u32, f64)], labels: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        a[i as usize][j as usize] += w;
        a[j as usize][i as usize] += w;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Stochastic block model with unit edge weights.
pub fn planted_partition(blocks: usize, size: usize, p_in: f64, p_out: f64, seed: u64) -> (MobilityGraph, Vec<usize>) {
    let n = blocks * size;
    let truth: Vec<usize> = (0..n).map(|i| i / size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if truth[i] == truth[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i as u32, j as u32, 1.0));
            }
        }
    }
    (MobilityGraph::from_edges(n, edges), truth)
}

/// Deterministic SIR difference equations with one region:
/// returns `[S, I, R]` for steps `0..=steps`.
pub fn mean_field(n: f64, i0: f64, beta: f64, g: f64, steps: usize) -> Vec<[f64; 3]> {
    let mut out = vec![[n - i0, i0, 0.0]];
    for _ in 0..steps {
        let [s, i, r] = *out.last().unwrap();
        let lambda = beta * i / n;
        out.push([s - lambda * s, i + lambda * s - g * i, r + g * i]);
    }
    out
}
