//! Varying-coefficient BART over a region graph.
//!
//! Each coefficient (intercept and one per exposure) is a sum of
//! `n_trees` regression trees. A tree's internal node partitions its region
//! subset into two connected pieces (a spanning-tree edge deletion), and a
//! leaf carries one scalar output applied to every region it holds. Trees are
//! updated one at a time against partial residuals with GROW/PRUNE
//! Metropolis-Hastings moves whose leaf outputs are integrated out.
//!
//! The prior on a split's partition is the split proposal distribution
//! itself, so the two cancel in the acceptance ratio; what remains is the
//! depth prior, the integrated likelihood, and the leaf/node counts.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, DepthPrior, ModelSpec, PosteriorDraws};
use crate::error::{Error, Result};
use crate::gibbs::{self, ChainSampler, Problem, SharedState};
use crate::graph::{self, RegionGraph, RegionPartition};
use crate::rng::SvRng;

/// Prior probability that a node at `depth` splits: `alpha (1 + depth)^-beta`.
pub fn split_probability(prior: &DepthPrior, depth: usize) -> f64 {
    prior.alpha * (1.0 + depth as f64).powf(-prior.beta)
}

/// Conjugate update for a leaf output with prior `N(0, tau2)` given
/// `sum x^2` and `sum x r` over the leaf's observations.
/// Returns `(mean, variance)`.
pub fn leaf_posterior(s_xx: f64, s_xr: f64, sigma2: f64, tau2: f64) -> (f64, f64) {
    let var = 1.0 / (s_xx / sigma2 + 1.0 / tau2);
    (var * s_xr / sigma2, var)
}

/// Log marginal likelihood of a leaf's residuals with its output integrated
/// out, dropping terms that do not depend on the tree.
pub fn leaf_log_marginal(s_xx: f64, s_xr: f64, sigma2: f64, tau2: f64) -> f64 {
    let prec = s_xx / sigma2 + 1.0 / tau2;
    -0.5 * (tau2 * prec).ln() + 0.5 * (s_xr / sigma2).powi(2) / prec
}

#[derive(Debug, Clone)]
struct Node {
    regions: Vec<usize>,
    depth: usize,
    parent: Option<usize>,
    children: Option<(usize, usize)>,
    value: f64,
}

/// A binary tree whose leaves tile the region set.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    region_leaf: Vec<usize>,
}

impl DecisionTree {
    pub fn stump(n_regions: usize) -> Self {
        DecisionTree {
            nodes: vec![Node {
                regions: (0..n_regions).collect(),
                depth: 0,
                parent: None,
                children: None,
                value: 0.0,
            }],
            free: Vec::new(),
            region_leaf: vec![0; n_regions],
        }
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|i| !self.free.contains(i))
    }

    fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_none()
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.live().filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    /// Longest root-to-leaf path (0 for a stump).
    pub fn depth(&self) -> usize {
        self.leaves().into_iter().map(|i| self.nodes[i].depth).max().unwrap_or(0)
    }

    pub fn root_is_split(&self) -> bool {
        self.nodes[0].children.is_some()
    }

    /// Leaf output at region `r`.
    pub fn value_at(&self, r: usize) -> f64 {
        self.nodes[self.region_leaf[r]].value
    }

    /// Region subsets of the leaves, each sorted.
    pub fn leaf_regions(&self) -> Vec<Vec<usize>> {
        self.leaves().into_iter().map(|i| self.nodes[i].regions.clone()).collect()
    }

    fn growable(&self) -> Vec<usize> {
        self.live()
            .filter(|&i| self.is_leaf(i) && self.nodes[i].regions.len() >= 2)
            .collect()
    }

    /// Internal nodes whose children are both leaves.
    fn prunable(&self) -> Vec<usize> {
        self.live()
            .filter(|&i| match self.nodes[i].children {
                Some((l, r)) => self.is_leaf(l) && self.is_leaf(r),
                None => false,
            })
            .collect()
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn grow(&mut self, leaf: usize, part: RegionPartition) -> (usize, usize) {
        let depth = self.nodes[leaf].depth + 1;
        let make = |regions| Node {
            regions,
            depth,
            parent: Some(leaf),
            children: None,
            value: 0.0,
        };
        let l = self.alloc(make(part.left));
        let r = self.alloc(make(part.right));
        for &reg in &self.nodes[l].regions {
            self.region_leaf[reg] = l;
        }
        for &reg in &self.nodes[r].regions {
            self.region_leaf[reg] = r;
        }
        self.nodes[leaf].children = Some((l, r));
        (l, r)
    }

    fn prune(&mut self, node: usize) {
        let (l, r) = self.nodes[node].children.take().expect("prune of a leaf");
        self.free.push(l);
        self.free.push(r);
        self.free.sort_unstable_by(|a, b| b.cmp(a));
        for &reg in &self.nodes[node].regions {
            self.region_leaf[reg] = node;
        }
    }

    /// Checks that leaves tile `0..R` with connected, non-empty subsets and
    /// that every split partitions its parent.
    pub fn check_tiling(&self, graph: &RegionGraph) -> Result<()> {
        let n = graph.n_regions();
        let mut seen = vec![false; n];
        for leaf in self.leaves() {
            let regs = &self.nodes[leaf].regions;
            if regs.is_empty() || graph::components(graph, regs).len() != 1 {
                return Err(Error::Vcbart(format!("leaf {leaf} is empty or disconnected")));
            }
            for &r in regs {
                if seen[r] {
                    return Err(Error::Vcbart(format!("region {r} is in two leaves")));
                }
                seen[r] = true;
                if self.region_leaf[r] != leaf {
                    return Err(Error::Vcbart(format!("stale leaf index for region {r}")));
                }
            }
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(Error::Vcbart(format!("region {r} is in no leaf")));
        }
        for id in self.live() {
            if let Some((l, r)) = self.nodes[id].children {
                let mut joined = [self.nodes[l].regions.clone(), self.nodes[r].regions.clone()].concat();
                joined.sort_unstable();
                if joined != self.nodes[id].regions {
                    return Err(Error::Vcbart(format!("children of node {id} do not partition it")));
                }
            }
        }
        Ok(())
    }
}

/// Sum-of-trees representation of one coefficient field.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trees: Vec<DecisionTree>,
}

impl Ensemble {
    pub fn stumps(n_trees: usize, n_regions: usize) -> Self {
        Ensemble {
            trees: (0..n_trees).map(|_| DecisionTree::stump(n_regions)).collect(),
        }
    }

    pub fn evaluate(&self, n_regions: usize) -> Vec<f64> {
        (0..n_regions)
            .map(|r| self.trees.iter().map(|t| t.value_at(r)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Grow,
    Prune,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveCounts {
    pub grow_proposed: u64,
    pub grow_accepted: u64,
    pub prune_proposed: u64,
    pub prune_accepted: u64,
}

/// Single-chain Gibbs sampler for the varying-coefficient model.
pub struct VcbartSampler<'p> {
    problem: &'p Problem<'p>,
    ensembles: Vec<Ensemble>,
    state: SharedState,
    tau2: f64,
    depth_prior: DepthPrior,
    /// Region moments against `y - W gamma`, refreshed whenever gamma moves.
    xty: Vec<f64>,
    /// Drop likelihood terms from tree moves (prior sampling checks).
    prior_only: bool,
    pub counts: MoveCounts,
}

impl<'p> VcbartSampler<'p> {
    pub fn new(problem: &'p Problem<'p>, spec: &ModelSpec) -> Self {
        let state = SharedState::initial(problem);
        let xty = problem.region_xty(&state.gamma);
        let leaf_sd = spec.leaf_sd();
        VcbartSampler {
            problem,
            ensembles: (0..problem.n_coef)
                .map(|_| Ensemble::stumps(spec.n_trees, problem.n_regions))
                .collect(),
            state,
            tau2: leaf_sd * leaf_sd,
            depth_prior: spec.depth_prior,
            xty,
            prior_only: false,
            counts: MoveCounts::default(),
        }
    }

    pub fn ensembles(&self) -> &[Ensemble] {
        &self.ensembles
    }

    pub fn set_prior_only(&mut self, on: bool) {
        self.prior_only = on;
    }

    pub fn set_state(&mut self, state: SharedState) {
        self.xty = self.problem.region_xty(&state.gamma);
        self.state = state;
    }

    fn node_split_prob(&self, regions: usize, depth: usize) -> f64 {
        if regions < 2 {
            0.0
        } else {
            split_probability(&self.depth_prior, depth)
        }
    }

    /// One GROW or PRUNE proposal on tree `t` of ensemble `p`, followed by a
    /// fresh draw of that tree's leaf outputs. Returns whether the structure
    /// changed.
    pub fn tree_move<R: Rng + ?Sized>(&mut self, p: usize, t: usize, rng: &mut R) -> Result<bool> {
        let pr = self.problem;
        let nr = pr.n_regions;
        let sigma2 = self.state.sigma2;
        let tau2 = self.tau2;

        // Partial-residual moments per region, excluding this tree.
        let tree = &self.ensembles[p].trees[t];
        let old: Vec<f64> = (0..nr).map(|r| tree.value_at(r)).collect();
        let sxx: Vec<f64> = (0..nr).map(|r| pr.xtx(r, p, p)).collect();
        let sxr: Vec<f64> = (0..nr)
            .map(|r| pr.residual_moment(&self.xty, &self.state.coef, r, p) + old[r] * sxx[r])
            .collect();
        let stats = |regions: &[usize]| -> (f64, f64) {
            regions.iter().fold((0.0, 0.0), |(a, b), &r| (a + sxx[r], b + sxr[r]))
        };
        let lml = |regions: &[usize]| -> f64 {
            let (a, b) = stats(regions);
            leaf_log_marginal(a, b, sigma2, tau2)
        };
        let prior_only = self.prior_only;

        let kind = if rng.random_bool(0.5) { MoveKind::Grow } else { MoveKind::Prune };
        let mut accepted = false;
        match kind {
            MoveKind::Grow => {
                self.counts.grow_proposed += 1;
                let growable = tree.growable();
                if !growable.is_empty() {
                    let leaf = growable[rng.random_range(0..growable.len())];
                    let node = &tree.nodes[leaf];
                    let part = graph::split_subset(pr.graph, &node.regions, rng)?;
                    let d = node.depth;
                    let ps = self.node_split_prob(node.regions.len(), d);
                    let ps_l = self.node_split_prob(part.left.len(), d + 1);
                    let ps_r = self.node_split_prob(part.right.len(), d + 1);
                    let n_prunable = tree.prunable().len();
                    let parent_was_prunable = node.parent.is_some_and(|q| {
                        let (a, b) = tree.nodes[q].children.expect("parent is internal");
                        tree.is_leaf(a) && tree.is_leaf(b)
                    });
                    let n_prunable_new = n_prunable + 1 - usize::from(parent_was_prunable);

                    let mut log_ratio = ps.ln() + (1.0 - ps_l).ln() + (1.0 - ps_r).ln() - (1.0 - ps).ln()
                        + (growable.len() as f64).ln()
                        - (n_prunable_new as f64).ln();
                    if !prior_only {
                        log_ratio += lml(&part.left) + lml(&part.right) - lml(&node.regions);
                    }
                    if rng.random::<f64>().ln() < log_ratio {
                        for side in [&part.left, &part.right] {
                            if graph::components(pr.graph, side).len() != 1 {
                                return Err(Error::Vcbart("split produced a disconnected side".into()));
                            }
                        }
                        self.ensembles[p].trees[t].grow(leaf, part);
                        self.counts.grow_accepted += 1;
                        accepted = true;
                    }
                }
            }
            MoveKind::Prune => {
                self.counts.prune_proposed += 1;
                let prunable = tree.prunable();
                if !prunable.is_empty() {
                    let id = prunable[rng.random_range(0..prunable.len())];
                    let node = &tree.nodes[id];
                    let (l, r) = node.children.expect("prunable node has children");
                    let (left, right) = (&tree.nodes[l].regions, &tree.nodes[r].regions);
                    let d = node.depth;
                    let ps = self.node_split_prob(node.regions.len(), d);
                    let ps_l = self.node_split_prob(left.len(), d + 1);
                    let ps_r = self.node_split_prob(right.len(), d + 1);
                    let n_growable_new =
                        tree.growable().len() + 1 - usize::from(left.len() >= 2) - usize::from(right.len() >= 2);

                    let mut log_ratio = (1.0 - ps).ln() - ps.ln() - (1.0 - ps_l).ln() - (1.0 - ps_r).ln()
                        + (prunable.len() as f64).ln()
                        - (n_growable_new as f64).ln();
                    if !prior_only {
                        log_ratio += lml(&node.regions) - lml(left) - lml(right);
                    }
                    if rng.random::<f64>().ln() < log_ratio {
                        self.ensembles[p].trees[t].prune(id);
                        self.counts.prune_accepted += 1;
                        accepted = true;
                    }
                }
            }
        }

        // Redraw every leaf of the (possibly modified) tree.
        let tree = &mut self.ensembles[p].trees[t];
        for leaf in tree.leaves() {
            let (a, b) = stats(&tree.nodes[leaf].regions);
            let (mean, var) = leaf_posterior(a, b, sigma2, tau2);
            tree.nodes[leaf].value = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        if accepted && cfg!(debug_assertions) {
            tree.check_tiling(pr.graph)?;
        }
        let coef = &mut self.state.coef[p * nr..(p + 1) * nr];
        for r in 0..nr {
            coef[r] += tree.value_at(r) - old[r];
        }
        Ok(accepted)
    }

    /// Backfitting pass over every tree of ensemble `p`.
    pub fn update_ensemble<R: Rng + ?Sized>(&mut self, p: usize, rng: &mut R) -> Result<()> {
        for t in 0..self.ensembles[p].trees.len() {
            self.tree_move(p, t, rng)?;
        }
        Ok(())
    }

    /// Largest absolute gap between the cached coefficient fields and a
    /// from-scratch evaluation of the ensembles.
    pub fn cache_error(&self) -> f64 {
        let nr = self.problem.n_regions;
        self.ensembles
            .iter()
            .enumerate()
            .flat_map(|(p, e)| {
                let fresh = e.evaluate(nr);
                let cached = &self.state.coef[p * nr..(p + 1) * nr];
                fresh.into_iter().zip(cached).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Recomputes the cached fields from the trees (drift control).
    fn refresh_cache(&mut self) {
        let nr = self.problem.n_regions;
        for (p, e) in self.ensembles.iter().enumerate() {
            self.state.coef[p * nr..(p + 1) * nr].copy_from_slice(&e.evaluate(nr));
        }
    }
}

impl ChainSampler for VcbartSampler<'_> {
    fn sweep(&mut self, rng: &mut SvRng) -> Result<()> {
        for p in 0..self.problem.n_coef {
            self.update_ensemble(p, rng)?;
        }
        let err = self.cache_error();
        let scale = self.state.coef.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if err > 1e-8 * scale {
            return Err(Error::Vcbart(format!("cached coefficient fields drifted by {err:e}")));
        }
        self.refresh_cache();
        gibbs::update_fixed_effects(self.problem, &mut self.state, rng);
        self.xty = self.problem.region_xty(&self.state.gamma);
        gibbs::update_sigma2(self.problem, &mut self.state, rng);
        Ok(())
    }

    fn state(&self) -> &SharedState {
        &self.state
    }
}

/// Fits the varying-coefficient model and returns the merged draws of all chains.
pub fn run_vcbart(data: &Dataset, graph: &RegionGraph, spec: &ModelSpec) -> Result<PosteriorDraws> {
    if !graph.is_connected() {
        return Err(Error::Vcbart("region graph must be connected".into()));
    }
    let problem = Problem::new(data, graph, spec)?;
    gibbs::run_chains(&problem, spec, |pr, _rng| Ok(VcbartSampler::new(pr, spec)))
}
