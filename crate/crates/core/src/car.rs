//! Proper CAR comparator models, fit by Gibbs sampling.
//!
//! A spatial coefficient field `beta_p` has the proper CAR prior with mean
//! zero and precision `tau_p (D - rho_p A)`. With `global_level` set the
//! prior mean is instead a level `mu_p` with a flat prior. Field draws are joint Gaussian draws
//! through an envelope Cholesky factor of the full-conditional precision.
//! In the random-intercept variant only the intercept is spatial; exposure
//! coefficients are single global values.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelSpec, PosteriorDraws};
use crate::error::{Error, Result};
use crate::gibbs::{self, ChainSampler, Problem, SharedState};
use crate::graph::RegionGraph;
use crate::linalg::EnvelopeCholesky;
use crate::rng::SvRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CarVariant {
    VaryingCoefficients,
    RandomInterceptOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarSpec {
    pub variant: CarVariant,
    /// Gamma shape and rate of the field precision prior.
    pub tau_shape: f64,
    pub tau_rate: f64,
    /// Target acceptance rate for the adaptive `rho` random walk.
    pub rho_target_accept: f64,
    /// Give every field a flat-prior mean level instead of mean zero.
    pub global_level: bool,
}

impl Default for CarSpec {
    fn default() -> Self {
        CarSpec {
            variant: CarVariant::VaryingCoefficients,
            tau_shape: 1.0,
            tau_rate: 0.01,
            rho_target_accept: 0.44,
            global_level: false,
        }
    }
}

impl CarSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_shape > 0.0 && self.tau_rate > 0.0) {
            return Err(Error::Config("CAR tau_shape and tau_rate must be > 0".into()));
        }
        if !(self.rho_target_accept > 0.0 && self.rho_target_accept < 1.0) {
            return Err(Error::Config("CAR rho_target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Dense `tau (D - rho A)`, row-major.
pub fn car_precision(graph: &RegionGraph, rho: f64, tau: f64) -> Vec<f64> {
    let n = graph.n_regions();
    let mut q = vec![0.0; n * n];
    for r in 0..n {
        q[r * n + r] = tau * graph.degree(r) as f64;
    }
    for &(a, b) in graph.edges() {
        q[a * n + b] = -tau * rho;
        q[b * n + a] = -tau * rho;
    }
    q
}

/// Graph constants reused by every CAR update.
#[derive(Debug, Clone)]
pub struct CarGraph {
    degree: Vec<f64>,
    /// Eigenvalues of `D^{-1/2} A D^{-1/2}`, all in `[-1, 1]`.
    scaled_adjacency_eigen: Vec<f64>,
    log_det_degree: f64,
}

impl CarGraph {
    pub fn new(graph: &RegionGraph) -> Result<Self> {
        let n = graph.n_regions();
        if let Some(r) = (0..n).find(|&r| graph.degree(r) == 0) {
            return Err(Error::Car(format!("region {r} has no neighbours; proper CAR needs every degree > 0")));
        }
        let degree: Vec<f64> = (0..n).map(|r| graph.degree(r) as f64).collect();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for &(a, b) in graph.edges() {
            let v = 1.0 / (degree[a] * degree[b]).sqrt();
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        let eig = SymmetricEigen::new(m);
        Ok(CarGraph {
            log_det_degree: degree.iter().map(|d| d.ln()).sum(),
            degree,
            scaled_adjacency_eigen: eig.eigenvalues.iter().copied().collect(),
        })
    }

    /// `log det (D - rho A)`.
    pub fn log_det(&self, rho: f64) -> f64 {
        self.log_det_degree + self.scaled_adjacency_eigen.iter().map(|l| (1.0 - rho * l).ln()).sum::<f64>()
    }
}

/// `(v^T D v, v^T A v)` for a centered field `v`.
fn quadratic_parts(graph: &RegionGraph, v: &[f64]) -> (f64, f64) {
    let qd = (0..v.len()).map(|r| graph.degree(r) as f64 * v[r] * v[r]).sum();
    let qa = graph.edges().iter().map(|&(a, b)| 2.0 * v[a] * v[b]).sum();
    (qd, qa)
}

/// Per-field CAR hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarField {
    pub level: f64,
    pub tau: f64,
    pub rho: f64,
    log_step: f64,
    accepted: u64,
    proposed: u64,
}

impl CarField {
    fn new() -> Self {
        CarField {
            level: 0.0,
            tau: 10.0,
            rho: 0.5,
            log_step: 0.0,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

pub struct CarSampler<'p> {
    problem: &'p Problem<'p>,
    car_spec: CarSpec,
    cg: CarGraph,
    fields: Vec<Option<CarField>>,
    state: SharedState,
    xty: Vec<f64>,
    chol: EnvelopeCholesky,
    adapting: bool,
    iteration: u64,
}

impl<'p> CarSampler<'p> {
    pub fn new(problem: &'p Problem<'p>, car_spec: &CarSpec) -> Result<Self> {
        car_spec.validate()?;
        let cg = CarGraph::new(problem.graph)?;
        let state = SharedState::initial(problem);
        let fields = (0..problem.n_coef)
            .map(|p| {
                let spatial = p == 0 || car_spec.variant == CarVariant::VaryingCoefficients;
                spatial.then(CarField::new)
            })
            .collect();
        Ok(CarSampler {
            problem,
            car_spec: car_spec.clone(),
            cg,
            fields,
            xty: problem.region_xty(&state.gamma),
            state,
            chol: EnvelopeCholesky::for_graph(problem.graph),
            adapting: true,
            iteration: 0,
        })
    }

    pub fn fields(&self) -> &[Option<CarField>] {
        &self.fields
    }

    pub fn field_mut(&mut self, p: usize) -> Option<&mut CarField> {
        self.fields[p].as_mut()
    }

    pub fn set_state(&mut self, state: SharedState) {
        self.xty = self.problem.region_xty(&state.gamma);
        self.state = state;
    }

    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    /// Partial-residual moments `sum x_p (y - fit without field p)` per region.
    fn partial_moments(&self, p: usize) -> (Vec<f64>, Vec<f64>) {
        let pr = self.problem;
        let nr = pr.n_regions;
        let sxx: Vec<f64> = (0..nr).map(|r| pr.xtx(r, p, p)).collect();
        let sxr = (0..nr)
            .map(|r| pr.residual_moment(&self.xty, &self.state.coef, r, p) + self.state.coef[p * nr + r] * sxx[r])
            .collect();
        (sxx, sxr)
    }

    /// Joint Gaussian draw of field `p` from its full conditional (or the
    /// scalar draw of a global coefficient in the random-intercept variant).
    pub fn update_car_field<R: Rng + ?Sized>(&mut self, p: usize, rng: &mut R) -> Result<()> {
        let pr = self.problem;
        let nr = pr.n_regions;
        let sigma2 = self.state.sigma2;
        let (sxx, sxr) = self.partial_moments(p);
        let new: Vec<f64> = match self.fields[p] {
            Some(f) => {
                self.chol.clear();
                for r in 0..nr {
                    self.chol.add_diag(r, f.tau * self.cg.degree[r] + sxx[r] / sigma2);
                }
                for &(a, b) in pr.graph.edges() {
                    self.chol.add_offdiag(a, b, -f.tau * f.rho);
                }
                self.chol
                    .factor()
                    .map_err(|r| Error::Car(format!("full-conditional precision not positive definite at region {r}")))?;
                // prior mean mu 1: (D - rho A) 1 = (1 - rho) D 1
                let b: Vec<f64> = (0..nr)
                    .map(|r| f.tau * f.level * (1.0 - f.rho) * self.cg.degree[r] + sxr[r] / sigma2)
                    .collect();
                self.chol.sample_canonical(&b, rng)
            }
            None => {
                let a: f64 = sxx.iter().sum();
                let b: f64 = sxr.iter().sum();
                let v = if a > 0.0 {
                    b / a + (sigma2 / a).sqrt() * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                vec![v; nr]
            }
        };
        self.state.coef[p * nr..(p + 1) * nr].copy_from_slice(&new);
        Ok(())
    }

    /// Precision, autocorrelation (and level, if enabled) of field `p`.
    pub fn update_car_hyper<R: Rng + ?Sized>(&mut self, p: usize, rng: &mut R) {
        let Some(mut f) = self.fields[p] else { return };
        let graph = self.problem.graph;
        let nr = self.problem.n_regions;
        let field = &self.state.coef[p * nr..(p + 1) * nr];

        if self.car_spec.global_level {
            // level | field: precision tau (1 - rho) sum(d)
            let dsum: f64 = self.cg.degree.iter().sum();
            let wmean = (0..nr).map(|r| self.cg.degree[r] * field[r]).sum::<f64>() / dsum;
            let prec = f.tau * (1.0 - f.rho) * dsum;
            f.level = wmean + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
        }

        let centered: Vec<f64> = field.iter().map(|v| v - f.level).collect();
        let (qd, qa) = quadratic_parts(graph, &centered);
        f.tau = draw_tau(&self.car_spec, nr, qd - f.rho * qa, rng);

        // rho random walk on the logit scale, uniform(0, 1) prior
        let log_target = |rho: f64| -> f64 {
            0.5 * self.cg.log_det(rho) - 0.5 * f.tau * (qd - rho * qa) + rho.ln() + (1.0 - rho).ln()
        };
        let logit = (f.rho / (1.0 - f.rho)).ln();
        let proposal = logit + f.log_step.exp() * rng.sample::<f64, _>(StandardNormal);
        let rho_new = 1.0 / (1.0 + (-proposal).exp());
        f.proposed += 1;
        let accept = rho_new > 0.0 && rho_new < 1.0 && rng.random::<f64>().ln() < log_target(rho_new) - log_target(f.rho);
        if accept {
            f.rho = rho_new;
            f.accepted += 1;
        }
        if self.adapting {
            let gain = (self.iteration as f64 + 1.0).powf(-0.6);
            f.log_step += gain * (f64::from(u8::from(accept)) - self.car_spec.rho_target_accept);
        }
        self.fields[p] = Some(f);
    }

    pub fn state(&self) -> &SharedState {
        &self.state
    }
}

/// `tau | field ~ Gamma(shape + R/2, rate + quad/2)`.
pub fn draw_tau<R: Rng + ?Sized>(spec: &CarSpec, n_regions: usize, quad: f64, rng: &mut R) -> f64 {
    let shape = spec.tau_shape + 0.5 * n_regions as f64;
    let rate = spec.tau_rate + 0.5 * quad.max(0.0);
    Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng)
}

impl ChainSampler for CarSampler<'_> {
    fn sweep(&mut self, rng: &mut SvRng) -> Result<()> {
        for p in 0..self.problem.n_coef {
            self.update_car_field(p, rng)?;
            self.update_car_hyper(p, rng);
        }
        gibbs::update_fixed_effects(self.problem, &mut self.state, rng);
        self.xty = self.problem.region_xty(&self.state.gamma);
        gibbs::update_sigma2(self.problem, &mut self.state, rng);
        self.iteration += 1;
        Ok(())
    }

    fn state(&self) -> &SharedState {
        &self.state
    }

    fn end_burn_in(&mut self) {
        self.adapting = false;
        for f in self.fields.iter_mut().flatten() {
            f.accepted = 0;
            f.proposed = 0;
        }
    }
}

pub fn run_car(data: &Dataset, graph: &RegionGraph, spec: &ModelSpec, car_spec: &CarSpec) -> Result<PosteriorDraws> {
    if !graph.is_connected() {
        return Err(Error::Car("region graph must be connected".into()));
    }
    let problem = Problem::new(data, graph, spec)?;
    gibbs::run_chains(&problem, spec, |pr, _rng| CarSampler::new(pr, car_spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn precision_examples() {
        let g = RegionGraph::new(2, [(0, 1)]).unwrap();
        assert_eq!(car_precision(&g, 0.5, 1.0), vec![1.0, -0.5, -0.5, 1.0]);
        let g = RegionGraph::grid(2, 3).unwrap();
        let q = car_precision(&g, 0.0, 2.0);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 2.0 * g.degree(i) as f64 } else { 0.0 };
                assert_eq!(q[i * 6 + j].abs(), want);
            }
        }
    }

    #[test]
    fn log_det_matches_dense() {
        let g = RegionGraph::grid(3, 4).unwrap();
        let cg = CarGraph::new(&g).unwrap();
        for rho in [0.1, 0.7, 0.99] {
            let q = car_precision(&g, rho, 1.0);
            let l = crate::linalg::cholesky(&q, 12).unwrap();
            let dense: f64 = 2.0 * (0..12).map(|i| l[i * 12 + i].ln()).sum::<f64>();
            assert!((cg.log_det(rho) - dense).abs() < 1e-9);
        }
        assert!(CarGraph::new(&RegionGraph::new(2, []).unwrap()).is_err());
    }

    #[test]
    fn tau_with_zero_quadratic_form() {
        let spec = CarSpec::default();
        let mut rng = stream(1, Domain::Misc, &[]);
        let m = 50_000;
        let mean = (0..m).map(|_| draw_tau(&spec, 4, 0.0, &mut rng)).sum::<f64>() / m as f64;
        // Gamma(1 + 2, rate 0.01): mean 300
        assert!((mean - 300.0).abs() < 4.0 * (300.0 / 0.01 / m as f64).sqrt());
    }

    fn one_per_region(n_regions: usize) -> Dataset {
        Dataset {
            y: (0..n_regions).map(|r| (r as f64 * 1.3).sin() * 2.0).collect(),
            x: vec![],
            p_x: 0,
            w: vec![],
            p_w: 0,
            region: (0..n_regions).collect(),
            q: 2,
            exposure_names: vec![],
            confounder_names: vec![],
        }
    }

    #[test]
    fn independent_fields_when_rho_is_zero() {
        // one observation per region, sigma2 = tau = 1, x = 1, mu = 0: N(r/2, 1/2)
        // (degree 1 on every region of a matching graph)
        let g = RegionGraph::new(4, [(0, 1), (2, 3)]).unwrap();
        let ds = one_per_region(4);
        let spec = ModelSpec::default();
        let pr = Problem::new(&ds, &g, &spec).unwrap();
        let mut s = CarSampler::new(&pr, &CarSpec::default()).unwrap();
        s.set_state(SharedState { coef: vec![0.0; 4], gamma: vec![], sigma2: 1.0 });
        let f = s.field_mut(0).unwrap();
        f.tau = 1.0;
        f.rho = 0.0;
        let mut rng = stream(2, Domain::Misc, &[]);
        let m = 40_000;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..m {
            s.update_car_field(0, &mut rng).unwrap();
            for r in 0..4 {
                let v = s.state().coef[r];
                sum[r] += v;
                sq[r] += v * v;
            }
        }
        for r in 0..4 {
            let mean = sum[r] / m as f64;
            let var = sq[r] / m as f64 - mean * mean;
            assert!((mean - pr.ys[r] / 2.0).abs() < 0.015, "region {r}: {mean}");
            assert!((var - 0.5).abs() < 0.02, "region {r}: {var}");
        }
    }

    #[test]
    fn no_data_field_draws_follow_the_prior() {
        // intercept field over regions without observations: CAR(mu, tau, rho) prior
        let g = RegionGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let ds = Dataset { region: vec![0], y: vec![1.0], ..one_per_region(1) };
        let pr = Problem::new(&ds, &g, &ModelSpec::default()).unwrap();
        let mut s = CarSampler::new(&pr, &CarSpec::default()).unwrap();
        s.set_state(SharedState { coef: vec![0.0; 3], gamma: vec![], sigma2: 1e12 });
        let f = s.field_mut(0).unwrap();
        f.tau = 2.0;
        f.rho = 0.6;
        let q = car_precision(&g, 0.6, 2.0);
        let l = crate::linalg::cholesky(&q, 3).unwrap();
        let mut cov_diag = Vec::new();
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            crate::linalg::forward_solve(&l, 3, &mut e);
            crate::linalg::backward_solve(&l, 3, &mut e);
            cov_diag.push(e[k]);
        }
        let mut rng = stream(3, Domain::Misc, &[]);
        let m = 40_000;
        let mut sq = [0.0; 3];
        for _ in 0..m {
            s.update_car_field(0, &mut rng).unwrap();
            for r in 0..3 {
                sq[r] += s.state().coef[r].powi(2);
            }
        }
        for r in 0..3 {
            assert!((sq[r] / m as f64 - cov_diag[r]).abs() < 0.05 * cov_diag[r], "{r}");
        }
    }

    #[test]
    fn random_intercept_variant_keeps_exposure_effects_global() {
        let g = RegionGraph::grid(2, 2).unwrap();
        let n = 40;
        let ds = Dataset {
            y: (0..n).map(|i| (i % 4) as f64 + ((i * 13) % 5) as f64 * 0.2).collect(),
            x: (0..n).map(|i| ((i * 3) % 4) as i64).collect(),
            p_x: 1,
            w: vec![],
            p_w: 0,
            region: (0..n).map(|i| i % 4).collect(),
            q: 4,
            exposure_names: vec!["x".into()],
            confounder_names: vec![],
        };
        let spec = ModelSpec { n_burn: 20, n_save: 30, n_chains: 2, ..ModelSpec::default() };
        let car = CarSpec { variant: CarVariant::RandomInterceptOnly, ..CarSpec::default() };
        let draws = run_car(&ds, &g, &spec, &car).unwrap();
        for d in 0..draws.n_draws {
            let b = draws.beta(d, 1, 0);
            assert!((1..4).all(|r| draws.beta(d, 1, r) == b));
        }
        assert!((0..draws.n_draws).any(|d| draws.beta(d, 0, 0) != draws.beta(d, 0, 1)));
    }

    #[test]
    fn rho_adapts_and_tracks_a_known_field() {
        // one field drawn from CAR(rho = 0.8, tau = 1), level 0
        let g = RegionGraph::grid(10, 10).unwrap();
        let mut rng = stream(4, Domain::Misc, &[]);
        let mut chol = EnvelopeCholesky::for_graph(&g);
        for r in 0..100 {
            chol.add_diag(r, g.degree(r) as f64);
        }
        for &(a, b) in g.edges() {
            chol.add_offdiag(a, b, -0.8);
        }
        chol.factor().unwrap();
        let field = chol.sample_canonical(&[0.0; 100], &mut rng);

        let ds = Dataset { region: vec![0], y: vec![0.0], ..one_per_region(1) };
        let pr = Problem::new(&ds, &g, &ModelSpec::default()).unwrap();
        let mut s = CarSampler::new(&pr, &CarSpec::default()).unwrap();
        s.set_state(SharedState { coef: field.clone(), gamma: vec![], sigma2: 1.0 });
        let mut rhos = Vec::new();
        for it in 0..20_000 {
            s.iteration = it;
            if it == 2_000 {
                s.set_adapting(false);
                let f = s.field_mut(0).unwrap();
                f.accepted = 0;
                f.proposed = 0;
            }
            s.update_car_hyper(0, &mut rng);
            if it >= 2_000 {
                rhos.push(s.fields()[0].unwrap().rho);
            }
        }
        let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
        let acc = s.fields()[0].unwrap().acceptance_rate();
        assert!((mean - 0.8).abs() < 0.15, "rho mean {mean}");
        assert!((0.2..=0.6).contains(&acc), "acceptance {acc}");
    }
}
