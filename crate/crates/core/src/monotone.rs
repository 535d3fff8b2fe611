//! Finite kernels on a totally ordered state space, one-step minorisation,
//! quantile functions and the pathwise-ordered coupling.

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// A row-stochastic matrix over states `0..n`, in the state order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    n: usize,
    data: Vec<f64>,
}

impl DiscreteKernel {
    /// Rejects negative entries and rows whose sums differ from 1 by more than 1e-12.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Kernel("empty state space".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for (x, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Kernel(format!("row {x} has {} entries, expected {n}", row.len())));
            }
            data.extend(row);
        }
        Self::from_dense(n, data)
    }

    /// Row-major `n × n` data.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Kernel(format!("expected {} entries for {n} states, got {}", n * n, data.len())));
        }
        let k = DiscreteKernel { n, data };
        for x in 0..n {
            let row = k.row(x);
            if let Some(y) = row.iter().position(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::Kernel(format!("P({x},{y}) = {} is not a probability", row[y])));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Kernel(format!("row {x} sums to {s}, not 1 within {ROW_TOL:e}")));
            }
        }
        Ok(k)
    }

    /// Builds a kernel from sub-stochastic rows, moving each row's deficit onto
    /// the last state. Returns the kernel and the per-row deficits.
    pub fn with_repair(rows: Vec<Vec<f64>>) -> Result<(Self, Vec<f64>)> {
        let n = rows.len();
        let mut deficits = Vec::with_capacity(n);
        let mut fixed = Vec::with_capacity(n);
        for (x, mut row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Kernel(format!("row {x} has {} entries, expected {n}", row.len())));
            }
            let s: f64 = row.iter().sum();
            let deficit = 1.0 - s;
            if deficit < -ROW_TOL {
                return Err(Error::Kernel(format!("row {x} sums to {s} > 1")));
            }
            if let Some(last) = row.last_mut() {
                *last += deficit.max(0.0);
            }
            deficits.push(deficit.max(0.0));
            fixed.push(row);
        }
        Ok((Self::new(fixed)?, deficits))
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for x in 0..n {
            data[x * n + x] = 1.0;
        }
        DiscreteKernel { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    /// `μP`, skipping zero entries of `μ`.
    pub fn step(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (x, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(self.row(x)) {
                *o += m * p;
            }
        }
        out
    }

    /// `(Pf)(x)`.
    pub fn apply(&self, x: usize, f: &[f64]) -> f64 {
        self.row(x).iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// Per-row cumulative sums, forced to exactly 1 from the last positive
    /// entry onward so that `u = 1` lands on the largest reachable state.
    pub fn cdf_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|x| cdf_of(self.row(x))).collect()
    }
}

fn cdf_of(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = row
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1);
    for c in &mut cdf[last..] {
        *c = 1.0;
    }
    cdf
}

fn quantile_of(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain("quantile", format!("u = {u} outside (0, 1]")))
    }
}

/// Outcome of [`check_monotone`]; `witness = (x, a)` means
/// `P(x, ≤a) < P(x+1, ≤a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneReport {
    pub monotone: bool,
    pub witness: Option<(usize, usize)>,
    pub excess: f64,
}

/// Checks that `x ↦ P(x, {0..=a})` is non-increasing for every `a`.
pub fn check_monotone(k: &DiscreteKernel) -> MonotoneReport {
    check_monotone_tol(k, 1e-12)
}

/// [`check_monotone`] with an explicit tolerance on each comparison.
pub fn check_monotone_tol(k: &DiscreteKernel, tol: f64) -> MonotoneReport {
    let mut prev = cdf_of(k.row(0));
    for x in 1..k.size() {
        let cur = cdf_of(k.row(x));
        for a in 0..k.size() {
            if cur[a] > prev[a] + tol {
                return MonotoneReport {
                    monotone: false,
                    witness: Some((x - 1, a)),
                    excess: cur[a] - prev[a],
                };
            }
        }
        prev = cur;
    }
    MonotoneReport {
        monotone: true,
        witness: None,
        excess: 0.0,
    }
}

/// `min{y : Σ_{z<=y} P(x,z) >= u}`.
pub fn quantile(k: &DiscreteKernel, x: usize, u: f64) -> Result<usize> {
    check_u(u)?;
    Ok(quantile_of(&cdf_of(k.row(x)), u))
}

/// One-step minorisation `P(x,·) >= ε·ν` for `x` in `C = {0..=x0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorisationCert {
    pub x0: usize,
    pub epsilon: f64,
    pub nu: Vec<f64>,
}

impl MinorisationCert {
    pub fn new(x0: usize, epsilon: f64, nu: Vec<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::certificate("0 < epsilon <= 1", format!("epsilon = {epsilon}")));
        }
        if nu.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::certificate("nu non-negative", "negative entry"));
        }
        let s: f64 = nu.iter().sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(Error::certificate("nu sums to 1 within 1e-12", format!("sum = {s}")));
        }
        Ok(MinorisationCert { x0, epsilon, nu })
    }

    pub fn in_set(&self, x: usize) -> bool {
        x <= self.x0
    }

    /// Exact pointwise check against `k`, with 1e-12 absolute slack.
    pub fn verify(&self, k: &DiscreteKernel) -> Result<()> {
        if self.nu.len() != k.size() || self.x0 >= k.size() {
            return Err(Error::Kernel(format!(
                "certificate on {} states with x0 = {} does not fit a kernel on {} states",
                self.nu.len(),
                self.x0,
                k.size()
            )));
        }
        for x in 0..=self.x0 {
            for (y, (&p, &v)) in k.row(x).iter().zip(&self.nu).enumerate() {
                let excess = self.epsilon * v - p;
                if excess > ROW_TOL {
                    return Err(Error::MinorisationViolation { x, y, excess });
                }
            }
        }
        Ok(())
    }

    /// `ν(f)`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.nu.iter().zip(f).map(|(p, v)| p * v).sum()
    }
}

/// Maximal one-step minorisation on `C = {0..=x0}` from column minima.
///
/// `ε` within 1e-12 of 1 is snapped to 1, which marks `C` as an atom.
pub fn find_minorisation(k: &DiscreteKernel, x0: usize) -> Result<MinorisationCert> {
    if x0 >= k.size() {
        return Err(Error::config("x0 inside the state space", format!("x0 = {x0}, {} states", k.size())));
    }
    let mut mins = k.row(0).to_vec();
    for x in 1..=x0 {
        for (m, &p) in mins.iter_mut().zip(k.row(x)) {
            *m = m.min(p);
        }
    }
    let eps: f64 = mins.iter().sum();
    if eps <= 0.0 {
        return Err(Error::NoMinorisation { x0 });
    }
    let nu: Vec<f64> = mins.iter().map(|m| m / eps).collect();
    let epsilon = if (eps - 1.0).abs() <= ROW_TOL { 1.0 } else { eps.min(1.0) };
    MinorisationCert::new(x0, epsilon, nu)
}

/// Residual rows `Q(x,·) = (P(x,·) - εν)/(1-ε)` for `x` in `C`; `Q = ν` when `ε = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualKernel {
    rows: Vec<Vec<f64>>,
}

impl ResidualKernel {
    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn residual_kernel(k: &DiscreteKernel, cert: &MinorisationCert) -> Result<ResidualKernel> {
    if cert.nu.len() != k.size() || cert.x0 >= k.size() {
        return Err(Error::Kernel("certificate does not fit the kernel".into()));
    }
    let mut rows = Vec::with_capacity(cert.x0 + 1);
    for x in 0..=cert.x0 {
        if cert.epsilon == 1.0 {
            cert.verify_row(k, x)?;
            rows.push(cert.nu.clone());
            continue;
        }
        let scale = 1.0 / (1.0 - cert.epsilon);
        let mut row = Vec::with_capacity(k.size());
        for (y, (&p, &v)) in k.row(x).iter().zip(&cert.nu).enumerate() {
            let q = p - cert.epsilon * v;
            if q < -ROW_TOL {
                return Err(Error::MinorisationViolation { x, y, excess: -q });
            }
            row.push(q.max(0.0) * scale);
        }
        rows.push(row);
    }
    Ok(ResidualKernel { rows })
}

impl MinorisationCert {
    fn verify_row(&self, k: &DiscreteKernel, x: usize) -> Result<()> {
        for (y, (&p, &v)) in k.row(x).iter().zip(&self.nu).enumerate() {
            let excess = self.epsilon * v - p;
            if excess > ROW_TOL {
                return Err(Error::MinorisationViolation { x, y, excess });
            }
        }
        Ok(())
    }
}

/// Precomputed quantile tables for the ordered coupling `P̌`: outside `C×C`
/// both coordinates move through `P` with a common uniform, inside through `Q`.
#[derive(Debug, Clone)]
pub struct QuantileCoupler {
    x0: usize,
    p_cdf: Vec<Vec<f64>>,
    q_cdf: Vec<Vec<f64>>,
    nu_cdf: Vec<f64>,
    epsilon: f64,
}

impl QuantileCoupler {
    pub fn new(k: &DiscreteKernel, cert: &MinorisationCert) -> Result<Self> {
        cert.verify(k)?;
        let q = residual_kernel(k, cert)?;
        Ok(QuantileCoupler {
            x0: cert.x0,
            p_cdf: k.cdf_rows(),
            q_cdf: q.rows.iter().map(|r| cdf_of(r)).collect(),
            nu_cdf: cdf_of(&cert.nu),
            epsilon: cert.epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn size(&self) -> usize {
        self.p_cdf.len()
    }

    pub fn in_pair_set(&self, x: usize, y: usize) -> bool {
        x <= self.x0 && y <= self.x0
    }

    /// `G_P⁻(x, u)`.
    pub fn p_quantile(&self, x: usize, u: f64) -> usize {
        quantile_of(&self.p_cdf[x], u)
    }

    /// `G_Q⁻(x, u)` for `x` in `C`.
    pub fn q_quantile(&self, x: usize, u: f64) -> usize {
        quantile_of(&self.q_cdf[x], u)
    }

    /// A draw from `ν`.
    pub fn nu_quantile(&self, u: f64) -> usize {
        quantile_of(&self.nu_cdf, u)
    }

    /// One step of `P̌` driven by `u ∈ (0, 1]`.
    pub fn step(&self, x: usize, y: usize, u: f64) -> (usize, usize) {
        if self.in_pair_set(x, y) {
            (self.q_quantile(x, u), self.q_quantile(y, u))
        } else {
            (self.p_quantile(x, u), self.p_quantile(y, u))
        }
    }

    /// Joint law of one `P̌` step from `(x, y)`, enumerated over the breakpoints
    /// of the two quantile functions. Entries are `(x', y', mass)`.
    pub fn step_law(&self, x: usize, y: usize) -> Vec<(usize, usize, f64)> {
        let (cx, cy) = if self.in_pair_set(x, y) {
            (&self.q_cdf[x], &self.q_cdf[y])
        } else {
            (&self.p_cdf[x], &self.p_cdf[y])
        };
        let mut breaks: Vec<f64> = cx.iter().chain(cy.iter()).copied().filter(|&c| c > 0.0).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut out = Vec::new();
        let mut lo = 0.0;
        for &b in &breaks {
            if b <= lo {
                continue;
            }
            out.push((quantile_of(cx, b), quantile_of(cy, b), b - lo));
            lo = b;
        }
        out
    }
}

/// One ordered-coupling step without precomputation.
pub fn ordered_coupling_step(
    k: &DiscreteKernel,
    cert: &MinorisationCert,
    pair: (usize, usize),
    u: f64,
) -> Result<(usize, usize)> {
    check_u(u)?;
    let (x, y) = pair;
    if cert.in_set(x) && cert.in_set(y) {
        let q = residual_kernel(k, cert)?;
        Ok((quantile_of(&cdf_of(q.row(x)), u), quantile_of(&cdf_of(q.row(y)), u)))
    } else {
        Ok((quantile_of(&cdf_of(k.row(x)), u), quantile_of(&cdf_of(k.row(y)), u)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state(a: &[f64], b: &[f64]) -> DiscreteKernel {
        DiscreteKernel::new(vec![a.to_vec(), b.to_vec()]).unwrap()
    }

    #[test]
    fn kernel_validation() {
        assert!(DiscreteKernel::new(vec![vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
        assert!(DiscreteKernel::new(vec![vec![1.1, -0.1], vec![0.0, 1.0]]).is_err());
        let (k, d) = DiscreteKernel::with_repair(vec![vec![0.5, 0.4], vec![0.0, 1.0]]).unwrap();
        assert_relative_eq!(k.get(0, 1), 0.5);
        assert_relative_eq!(d[0], 0.1, max_relative = 1e-12);
    }

    #[test]
    fn monotone_examples() {
        assert!(check_monotone(&DiscreteKernel::identity(5)).monotone);
        let bad = check_monotone(&two_state(&[0.2, 0.8], &[0.5, 0.5]));
        assert!(!bad.monotone);
        assert_eq!(bad.witness, Some((0, 0)));
    }

    #[test]
    fn quantile_examples() {
        let k = two_state(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(quantile(&k, 0, 0.3).unwrap(), 0);
        assert_eq!(quantile(&k, 0, 0.5).unwrap(), 0);
        assert_eq!(quantile(&k, 0, 0.7).unwrap(), 1);
        let tail = DiscreteKernel::new(vec![vec![0.3, 0.7, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(quantile(&tail, 0, 1.0).unwrap(), 1);
        assert!(quantile(&k, 0, 0.0).is_err());
        assert!(quantile(&k, 0, 1.5).is_err());
    }

    #[test]
    fn residual_examples() {
        let k = two_state(&[0.5, 0.5], &[0.5, 0.5]);
        let cert = MinorisationCert::new(0, 0.4, vec![1.0, 0.0]).unwrap();
        let q = residual_kernel(&k, &cert).unwrap();
        assert_relative_eq!(q.row(0)[0], 1.0 / 6.0, max_relative = 1e-15);
        assert_relative_eq!(q.row(0)[1], 5.0 / 6.0, max_relative = 1e-15);
        let atom = find_minorisation(&k, 1).unwrap();
        assert_eq!(atom.epsilon, 1.0);
        let q = residual_kernel(&k, &atom).unwrap();
        assert_eq!(q.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn residual_rejects_violation() {
        let k = two_state(&[0.5, 0.5], &[0.5, 0.5]);
        let cert = MinorisationCert::new(0, 0.8, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            residual_kernel(&k, &cert),
            Err(Error::MinorisationViolation { x: 0, y: 0, .. })
        ));
    }

    #[test]
    fn minorisation_singleton_and_zero() {
        let k = DiscreteKernel::new(vec![vec![0.2, 0.8, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.5, 0.5]]).unwrap();
        let c = find_minorisation(&k, 0).unwrap();
        assert_eq!(c.epsilon, 1.0);
        assert_eq!(c.nu, vec![0.2, 0.8, 0.0]);
        assert!(matches!(find_minorisation(&k, 1), Err(Error::NoMinorisation { x0: 1 })));
        assert!(MinorisationCert::new(0, 0.0, vec![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn coupled_pairs_stay_coupled() {
        let k = DiscreteKernel::new(vec![vec![0.3, 0.7, 0.0], vec![0.2, 0.3, 0.5], vec![0.0, 0.4, 0.6]]).unwrap();
        let cert = find_minorisation(&k, 0).unwrap();
        let c = QuantileCoupler::new(&k, &cert).unwrap();
        for i in 1..=100 {
            let u = i as f64 / 100.0;
            let (a, b) = c.step(2, 2, u);
            assert_eq!(a, b);
            let (a, b) = ordered_coupling_step(&k, &cert, (0, 0), u).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn step_law_marginals() {
        let k = DiscreteKernel::new(vec![vec![0.3, 0.7, 0.0], vec![0.2, 0.3, 0.5], vec![0.0, 0.4, 0.6]]).unwrap();
        let cert = find_minorisation(&k, 0).unwrap();
        let c = QuantileCoupler::new(&k, &cert).unwrap();
        let law = c.step_law(1, 2);
        let mut mx = [0.0; 3];
        let mut my = [0.0; 3];
        for (a, b, m) in law {
            mx[a] += m;
            my[b] += m;
            assert!(a <= b);
        }
        for y in 0..3 {
            assert_relative_eq!(mx[y], k.get(1, y), epsilon = 1e-15);
            assert_relative_eq!(my[y], k.get(2, y), epsilon = 1e-15);
        }
    }
}
