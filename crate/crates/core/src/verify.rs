//! Ground truth for bound curves: stationary laws, exact distances from iterated
//! kernels, dominance reports and a Monte Carlo simulator of the coupling chain.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::{DiscreteKernel, MinorisationCert, QuantileCoupler};
use crate::rates::RateSequence;

/// Default cap on simulated trajectory length.
pub const TRAJECTORY_CAP: usize = 10_000_000;

/// Total variation `sup_A |μ(A) - ν(A)| = ½ Σ |μ - ν|`.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> f64 {
    0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn reachable(k: &DiscreteKernel, forward: bool) -> Vec<bool> {
    let n = k.size();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(s) = queue.pop_front() {
        for (t, seen_t) in seen.iter_mut().enumerate() {
            let p = if forward { k.get(s, t) } else { k.get(t, s) };
            if p > 0.0 && !*seen_t {
                *seen_t = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// Fails with the first state that is not mutually reachable with state 0.
pub fn check_irreducible(k: &DiscreteKernel) -> Result<()> {
    let fwd = reachable(k, true);
    let bwd = reachable(k, false);
    match (0..k.size()).find(|&s| !(fwd[s] && bwd[s])) {
        Some(state) => Err(Error::Reducible { state }),
        None => Ok(()),
    }
}

/// Stationary law of an irreducible kernel by Grassmann–Taksar–Heyman
/// elimination, which uses no subtractions and skips structural zeros.
pub fn stationary(k: &DiscreteKernel) -> Result<Vec<f64>> {
    check_irreducible(k)?;
    let n = k.size();
    let mut a: Vec<f64> = (0..n).flat_map(|x| k.row(x).to_vec()).collect();
    let mut outflow = vec![0.0; n];
    for m in (1..n).rev() {
        let s: f64 = a[m * n..m * n + m].iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numeric(format!("elimination pivot vanished at state {m}")));
        }
        outflow[m] = s;
        let targets: Vec<(usize, f64)> = (0..m)
            .filter_map(|j| {
                let p = a[m * n + j];
                (p != 0.0).then_some((j, p / s))
            })
            .collect();
        for i in 0..m {
            let pim = a[i * n + m];
            if pim == 0.0 {
                continue;
            }
            for &(j, w) in &targets {
                a[i * n + j] += pim * w;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for m in 1..n {
        let inflow: f64 = (0..m).map(|i| pi[i] * a[i * n + m]).sum();
        pi[m] = inflow / outflow[m];
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    let residual: f64 = k.step(&pi).iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
    if residual > 1e-10 {
        return Err(Error::Numeric(format!("stationary residual {residual:e} exceeds 1e-10")));
    }
    Ok(pi)
}

/// Exact distances `‖Pⁿ(x,·) - π‖_TV` for `n = 1..=nmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactCurve {
    /// `tv[n-1]` is the distance after `n` steps.
    pub tv: Vec<f64>,
    /// `max_n Pⁿ(x, last state)`; large values mean the truncation is too small.
    pub tail_mass: f64,
}

pub fn exact_tv_curve(k: &DiscreteKernel, pi: &[f64], x: usize, nmax: usize) -> Result<ExactCurve> {
    if x >= k.size() || pi.len() != k.size() {
        return Err(Error::config(
            "start state and stationary law fit the kernel",
            format!("x = {x}, {} weights, {} states", pi.len(), k.size()),
        ));
    }
    let mut mu = vec![0.0; k.size()];
    mu[x] = 1.0;
    let mut tv = Vec::with_capacity(nmax);
    let mut tail_mass = 0.0f64;
    for _ in 0..nmax {
        mu = k.step(&mu);
        tail_mass = tail_mass.max(*mu.last().expect("non-empty kernel"));
        tv.push(tv_distance(&mu, pi));
    }
    Ok(ExactCurve { tv, tail_mass })
}

/// Outcome of comparing a bound curve with exact distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub checked: usize,
    /// `(n, bound, exact)` at the first `n` where the bound is too small.
    pub first_violation: Option<(usize, f64, f64)>,
    pub violations: usize,
    pub min_margin: f64,
    pub min_margin_n: usize,
    /// Smallest `bound/exact` over `n` with positive exact distance.
    pub min_ratio: f64,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn into_result(self) -> Result<Self> {
        match self.first_violation {
            Some((n, bound, exact)) => Err(Error::Dominance { n, bound, exact }),
            None => Ok(self),
        }
    }
}

/// Compares `bound[i]` with `exact[i]` for `n = i + 1`.
pub fn dominance_report(bound: &[f64], exact: &[f64]) -> Result<DominanceReport> {
    if bound.len() != exact.len() {
        return Err(Error::config(
            "bound and exact curves cover the same n-range",
            format!("{} vs {} values", bound.len(), exact.len()),
        ));
    }
    let mut report = DominanceReport {
        checked: bound.len(),
        first_violation: None,
        violations: 0,
        min_margin: f64::INFINITY,
        min_margin_n: 0,
        min_ratio: f64::INFINITY,
    };
    for (i, (&b, &e)) in bound.iter().zip(exact).enumerate() {
        let n = i + 1;
        let margin = b - e;
        if margin < report.min_margin {
            report.min_margin = margin;
            report.min_margin_n = n;
        }
        if e > 0.0 {
            report.min_ratio = report.min_ratio.min(b / e);
        }
        if !(b >= e) {
            report.violations += 1;
            report.first_violation.get_or_insert((n, b, e));
        }
    }
    Ok(report)
}

/// How the two coordinates share randomness before coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    /// Common uniform pushed through both quantile functions.
    Ordered,
    /// Independent uniforms for each coordinate.
    Independent,
}

/// Simulation settings for [`simulate_coupling`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub kind: CouplingKind,
    pub x: usize,
    pub y: usize,
    pub replicas: usize,
    pub seed: u64,
    pub cap: usize,
}

/// Empirical moments of one coupling experiment. Means and standard errors
/// are over uncensored replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    pub replicas: usize,
    pub censored: usize,
    pub censored_fraction: f64,
    /// `E[Σ_{k=0}^{σ} r(k)]` with `σ` the first visit to `C×C`.
    pub rate_sum_mean: f64,
    pub rate_sum_se: f64,
    /// `E[Σ_{k=0}^{σ} v(X_k, X'_k)]`.
    pub v_sum_mean: f64,
    pub v_sum_se: f64,
    pub coupling_time_mean: f64,
    /// Fraction of replicas that coupled at their first visit to `C×C`.
    pub coupled_at_first_visit: f64,
    /// Number of visits to `C×C` up to and including the coupling step.
    pub visits_at_coupling: BTreeMap<usize, usize>,
}

struct Trajectory {
    rate_sum: f64,
    v_sum: f64,
    coupling_time: usize,
    visits: usize,
    censored: bool,
}

/// Counter-based stream for replica `index` under `seed`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A uniform draw on `(0, 1]`.
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Simulates the coupling chain: off `C×C` both coordinates move by `P`; on
/// `C×C` a coin with heads probability `ε` sends both to a common `ν`-draw,
/// otherwise they move by the residual kernel. Once merged they move together.
pub struct CouplingSimulator {
    coupler: QuantileCoupler,
    kind: CouplingKind,
}

impl CouplingSimulator {
    pub fn new(k: &DiscreteKernel, cert: &MinorisationCert, kind: CouplingKind) -> Result<Self> {
        Ok(CouplingSimulator {
            coupler: QuantileCoupler::new(k, cert)?,
            kind,
        })
    }

    fn advance(&self, rng: &mut ChaCha8Rng, x: usize, y: usize) -> (usize, usize, bool) {
        let c = &self.coupler;
        if c.in_pair_set(x, y) {
            if uniform(rng) <= c.epsilon() {
                let z = c.nu_quantile(uniform(rng));
                return (z, z, true);
            }
            match self.kind {
                CouplingKind::Ordered => {
                    let u = uniform(rng);
                    (c.q_quantile(x, u), c.q_quantile(y, u), false)
                }
                CouplingKind::Independent => (c.q_quantile(x, uniform(rng)), c.q_quantile(y, uniform(rng)), false),
            }
        } else {
            match self.kind {
                CouplingKind::Ordered => {
                    let u = uniform(rng);
                    let (a, b) = (c.p_quantile(x, u), c.p_quantile(y, u));
                    (a, b, false)
                }
                CouplingKind::Independent => (c.p_quantile(x, uniform(rng)), c.p_quantile(y, uniform(rng)), false),
            }
        }
    }

    fn trajectory(
        &self,
        rng: &mut ChaCha8Rng,
        start: (usize, usize),
        r: &RateSequence,
        v: &(dyn Fn(usize, usize) -> f64 + Sync),
        cap: usize,
    ) -> Trajectory {
        let (mut x, mut y) = start;
        let mut t = Trajectory {
            rate_sum: 0.0,
            v_sum: 0.0,
            coupling_time: 0,
            visits: 0,
            censored: false,
        };
        let mut hit = false;
        for k in 0..=cap {
            if !hit {
                t.rate_sum += r.value(k);
                t.v_sum += v(x, y);
            }
            if self.coupler.in_pair_set(x, y) {
                hit = true;
                t.visits += 1;
            }
            if k == cap {
                break;
            }
            let (nx, ny, merged) = self.advance(rng, x, y);
            if merged {
                t.coupling_time = k + 1;
                return t;
            }
            x = nx;
            y = ny;
        }
        t.censored = true;
        t
    }

    /// Law of `X_n` from `(x, y)`, estimated from `replicas` coupled runs.
    pub fn marginal_counts(&self, x: usize, y: usize, n: usize, replicas: usize, seed: u64) -> Vec<usize> {
        let states = self.coupler.size();
        let finals: Vec<usize> = (0..replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = replica_rng(seed, i as u64);
                let (mut a, mut b) = (x, y);
                let mut merged = false;
                for _ in 0..n {
                    if merged {
                        a = self.coupler.p_quantile(a, uniform(&mut rng));
                        b = a;
                    } else {
                        let (na, nb, m) = self.advance(&mut rng, a, b);
                        a = na;
                        b = nb;
                        merged = m;
                    }
                }
                a
            })
            .collect();
        let mut counts = vec![0; states];
        for s in finals {
            counts[s] += 1;
        }
        counts
    }
}

/// Runs `cfg.replicas` independent coupling trajectories in parallel; the
/// result does not depend on the thread count.
pub fn simulate_coupling(
    k: &DiscreteKernel,
    cert: &MinorisationCert,
    cfg: &CouplingConfig,
    r: &RateSequence,
    v: &(dyn Fn(usize, usize) -> f64 + Sync),
) -> Result<CouplingEstimate> {
    if cfg.replicas == 0 {
        return Err(Error::config("replicas >= 1", "replicas = 0"));
    }
    if cfg.x >= k.size() || cfg.y >= k.size() {
        return Err(Error::config("start states inside the state space", format!("({}, {})", cfg.x, cfg.y)));
    }
    let sim = CouplingSimulator::new(k, cert, cfg.kind)?;
    let runs: Vec<Trajectory> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(cfg.seed, i as u64);
            sim.trajectory(&mut rng, (cfg.x, cfg.y), r, v, cfg.cap)
        })
        .collect();
    let done: Vec<&Trajectory> = runs.iter().filter(|t| !t.censored).collect();
    let censored = runs.len() - done.len();
    let (rate_sum_mean, rate_sum_se) = mean_se(done.iter().map(|t| t.rate_sum));
    let (v_sum_mean, v_sum_se) = mean_se(done.iter().map(|t| t.v_sum));
    let (coupling_time_mean, _) = mean_se(done.iter().map(|t| t.coupling_time as f64));
    let mut visits_at_coupling = BTreeMap::new();
    for t in &done {
        *visits_at_coupling.entry(t.visits).or_insert(0) += 1;
    }
    let first = done.iter().filter(|t| t.visits == 1).count();
    Ok(CouplingEstimate {
        replicas: cfg.replicas,
        censored,
        censored_fraction: censored as f64 / cfg.replicas as f64,
        rate_sum_mean,
        rate_sum_se,
        v_sum_mean,
        v_sum_se,
        coupling_time_mean,
        coupled_at_first_visit: if done.is_empty() {
            f64::NAN
        } else {
            first as f64 / done.len() as f64
        },
        visits_at_coupling,
    })
}

/// Sample mean and its standard error, summed in order.
fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::find_minorisation;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_two_state_is_uniform() {
        let k = DiscreteKernel::new(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
        let pi = stationary(&k).unwrap();
        assert_relative_eq!(pi[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(pi[1], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn identity_is_reducible() {
        assert!(matches!(
            stationary(&DiscreteKernel::identity(3)),
            Err(Error::Reducible { state: 1 })
        ));
    }

    #[test]
    fn two_state_exact_tv() {
        let (a, b) = (0.3, 0.2);
        let k = DiscreteKernel::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
        let pi = stationary(&k).unwrap();
        let p0 = b / (a + b);
        assert_relative_eq!(pi[0], p0, max_relative = 1e-14);
        let c = exact_tv_curve(&k, &pi, 0, 3).unwrap();
        let expected = 0.5 * ((1.0 - a - p0).abs() + (a - (1.0 - p0)).abs());
        assert_relative_eq!(c.tv[0], expected, max_relative = 1e-13);
        // Two-state chains contract by |1 - a - b| per step.
        assert_relative_eq!(c.tv[2], expected * 0.5f64.powi(2), max_relative = 1e-12);
    }

    #[test]
    fn stationary_rows_give_zero_distance() {
        let row = vec![0.2, 0.5, 0.3];
        let k = DiscreteKernel::new(vec![row.clone(), row.clone(), row.clone()]).unwrap();
        let pi = stationary(&k).unwrap();
        let c = exact_tv_curve(&k, &pi, 2, 5).unwrap();
        assert!(c.tv.iter().all(|&d| d < 1e-15));
    }

    #[test]
    fn point_mass_distance() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn dominance_examples() {
        let exact = [0.9, 0.5, 0.2];
        assert!(dominance_report(&[1.0; 3], &exact).unwrap().passed());
        let bad = dominance_report(&[1.0, 0.005, 0.002], &exact).unwrap();
        assert_eq!(bad.first_violation.map(|v| v.0), Some(2));
        assert!(matches!(bad.into_result(), Err(Error::Dominance { n: 2, .. })));
    }

    #[test]
    fn simulation_is_reproducible_and_atom_couples_on_first_visit() {
        let row = vec![0.5, 0.3, 0.2];
        let k = DiscreteKernel::new(vec![row.clone(), row, vec![0.1, 0.4, 0.5]]).unwrap();
        let cert = find_minorisation(&k, 1).unwrap();
        assert_eq!(cert.epsilon, 1.0);
        let cfg = CouplingConfig {
            kind: CouplingKind::Ordered,
            x: 2,
            y: 0,
            replicas: 500,
            seed: 7,
            cap: TRAJECTORY_CAP,
        };
        let r = RateSequence::constant();
        let a = simulate_coupling(&k, &cert, &cfg, &r, &|_, _| 1.0).unwrap();
        let b = simulate_coupling(&k, &cert, &cfg, &r, &|_, _| 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coupled_at_first_visit, 1.0);
        assert_eq!(a.visits_at_coupling.keys().copied().collect::<Vec<_>>(), vec![1]);
        assert_eq!(a.censored, 0);
        assert_eq!(a.rate_sum_mean, a.v_sum_mean);
    }

    #[test]
    fn coalesced_start_matches_single_chain() {
        let k = DiscreteKernel::new(vec![vec![0.6, 0.4, 0.0], vec![0.3, 0.3, 0.4], vec![0.0, 0.5, 0.5]]).unwrap();
        let cert = find_minorisation(&k, 0).unwrap();
        let cfg = CouplingConfig {
            kind: CouplingKind::Ordered,
            x: 2,
            y: 2,
            replicas: 4000,
            seed: 1,
            cap: TRAJECTORY_CAP,
        };
        let est = simulate_coupling(&k, &cert, &cfg, &RateSequence::constant(), &|_, _| 1.0).unwrap();
        let h = crate::drift::expected_hitting_times(&k, 0).unwrap();
        assert!((est.rate_sum_mean - (1.0 + h[2])).abs() < 4.0 * est.rate_sum_se);
    }
}
