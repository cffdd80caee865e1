//! Sparse Dirichlet-smoothed categorical distributions and the group-level
//! samplers built on them.
//!
//! A [`Categorical`] over `k` categories stores non-negative weights on a
//! sparse support plus a symmetric pseudo-count `alpha`:
//!
//! ```text
//! p(x) = (w(x) + alpha) / (W + alpha * k)        W = sum of weights
//! ```
//!
//! With counts as weights this is the posterior predictive of a multinomial
//! under an exchangeable Dirichlet prior. It is also a two-component mixture
//! (uniform with probability `alpha*k / (W + alpha*k)`, the normalized
//! weights otherwise), which is how it is sampled: one coin and either a
//! uniform index or an alias-table draw over the support.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

/// Binomial draw that consumes no randomness when the outcome is certain.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else if n == 1 {
        u64::from(rng.random::<f64>() < p)
    } else {
        Binomial::new(n, p)
            .expect("probability checked above")
            .sample(rng)
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(from = "CategoricalRepr", into = "CategoricalRepr")]
pub struct Categorical {
    k: usize,
    support: Vec<u32>,
    weights: Vec<f64>,
    total: f64,
    alpha: f64,
    uniform_mass: f64,
    alias: Option<WeightedAliasIndex<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CategoricalRepr {
    k: usize,
    alpha: f64,
    support: Vec<u32>,
    weights: Vec<f64>,
}

impl From<CategoricalRepr> for Categorical {
    fn from(r: CategoricalRepr) -> Self {
        Categorical::from_sparse(r.k, r.alpha, r.support.into_iter().zip(r.weights))
    }
}

impl From<Categorical> for CategoricalRepr {
    fn from(c: Categorical) -> Self {
        CategoricalRepr {
            k: c.k,
            alpha: c.alpha,
            support: c.support,
            weights: c.weights,
        }
    }
}

impl std::fmt::Debug for Categorical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Categorical")
            .field("k", &self.k)
            .field("alpha", &self.alpha)
            .field("support", &self.support)
            .field("weights", &self.weights)
            .finish()
    }
}

impl PartialEq for Categorical {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.alpha == other.alpha
            && self.support == other.support
            && self.weights == other.weights
    }
}

impl Categorical {
    /// Build from `(category, weight)` pairs. Duplicate categories are summed,
    /// zero weights dropped. A row with no weight is uniform.
    pub fn from_sparse(k: usize, alpha: f64, entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        assert!(k > 0, "categorical needs at least one category");
        assert!(alpha >= 0.0 && alpha.is_finite(), "alpha must be finite and >= 0");
        let mut entries: Vec<(u32, f64)> = entries.into_iter().filter(|e| e.1 > 0.0).collect();
        entries.sort_by_key(|e| e.0);
        let mut support: Vec<u32> = Vec::with_capacity(entries.len());
        let mut weights: Vec<f64> = Vec::with_capacity(entries.len());
        for (c, w) in entries {
            assert!((c as usize) < k, "category {c} out of range for k = {k}");
            assert!(w.is_finite(), "weights must be finite");
            if support.last() == Some(&c) {
                *weights.last_mut().unwrap() += w;
            } else {
                support.push(c);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        let uniform_mass = if total > 0.0 {
            alpha * k as f64 / (total + alpha * k as f64)
        } else {
            1.0
        };
        let alias = (total > 0.0).then(|| {
            WeightedAliasIndex::new(weights.clone()).expect("positive finite weights")
        });
        Self {
            k,
            support,
            weights,
            total,
            alpha,
            uniform_mass,
            alias,
        }
    }

    /// Uniform distribution over `k` categories.
    pub fn uniform(k: usize) -> Self {
        Self::from_sparse(k, 0.0, std::iter::empty())
    }

    /// Point mass on `category`.
    pub fn point(k: usize, category: u32) -> Self {
        Self::from_sparse(k, 0.0, [(category, 1.0)])
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Total weight (the observation count for fitted rows).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn support(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn weight(&self, category: u32) -> f64 {
        self.support
            .binary_search(&category)
            .map(|i| self.weights[i])
            .unwrap_or(0.0)
    }

    pub fn prob(&self, category: u32) -> f64 {
        if self.total <= 0.0 {
            return 1.0 / self.k as f64;
        }
        (self.weight(category) + self.alpha) / (self.total + self.alpha * self.k as f64)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        if self.total <= 0.0 {
            return vec![1.0 / self.k as f64; self.k];
        }
        let denom = self.total + self.alpha * self.k as f64;
        let mut p = vec![self.alpha / denom; self.k];
        for (c, w) in self.support() {
            p[c as usize] = (w + self.alpha) / denom;
        }
        p
    }

    /// Single draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let uniform = self.uniform_mass >= 1.0
            || (self.uniform_mass > 0.0 && rng.random::<f64>() < self.uniform_mass);
        if uniform {
            rng.random_range(0..self.k as u32)
        } else {
            let alias = self.alias.as_ref().expect("weighted component present");
            self.support[alias.sample(rng)]
        }
    }

    /// Draw a multinomial allocation of `n` trials into `out`.
    ///
    /// Small groups are sampled trial by trial; large groups use the
    /// conditional-binomial decomposition. Both produce exactly a
    /// multinomial(n, p) allocation.
    pub fn allocate<R: Rng + ?Sized>(&self, n: u64, rng: &mut R, out: &mut Allocation) {
        debug_assert_eq!(out.counts.len(), self.k);
        if n == 0 {
            return;
        }
        if n <= 16 + self.support.len() as u64 {
            for _ in 0..n {
                out.add(self.sample(rng), 1);
            }
            return;
        }
        let n_uniform = if self.uniform_mass >= 1.0 {
            n
        } else {
            binomial(rng, n, self.uniform_mass)
        };
        let mut left = n - n_uniform;
        let mut mass = self.total;
        for (c, w) in self.support() {
            if left == 0 {
                break;
            }
            let m = binomial(rng, left, w / mass);
            out.add(c, m);
            left -= m;
            mass -= w;
        }
        if left > 0 {
            // Floating-point residue of `mass`; the last category absorbs it.
            out.add(*self.support.last().expect("non-empty support"), left);
        }
        if n_uniform <= self.k as u64 {
            for _ in 0..n_uniform {
                out.add(rng.random_range(0..self.k as u32), 1);
            }
        } else {
            let mut left = n_uniform;
            for c in 0..self.k {
                if left == 0 {
                    break;
                }
                let m = binomial(rng, left, 1.0 / (self.k - c) as f64);
                out.add(c as u32, m);
                left -= m;
            }
        }
    }
}

/// Sparse scratch accumulator for multinomial allocations.
#[derive(Debug, Clone)]
pub struct Allocation {
    counts: Vec<u64>,
    touched: Vec<u32>,
}

impl Allocation {
    pub fn new(k: usize) -> Self {
        Self {
            counts: vec![0; k],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, category: u32, count: u64) {
        if count == 0 {
            return;
        }
        let c = &mut self.counts[category as usize];
        if *c == 0 {
            self.touched.push(category);
        }
        *c += count;
    }

    /// Non-zero `(category, count)` pairs in ascending category order; resets
    /// the accumulator.
    pub fn drain(&mut self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.touched.sort_unstable();
        let counts = &mut self.counts;
        self.touched
            .drain(..)
            .map(move |c| (c, std::mem::take(&mut counts[c as usize])))
    }
}
