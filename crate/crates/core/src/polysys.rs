//! The two polynomial systems that fix the loss exponents.
//!
//! For `m` unknown triples the `RBAR` system of order `r` is
//!
//! ```text
//! Σ_l Σ_{n₁+2n₂=s} p_l² q_{1l}^{n₁} q_{2l}^{n₂} / (n₁! n₂!) = 0,   s = 1..r
//! ```
//!
//! and the `RTILDE` system replaces the inner sum by one over
//! `J_{ℓ₁,ℓ₂} = {α ∈ ℕ⁵ : α₁+2α₂+α₃ = ℓ₁, α₃+α₄+2α₅ = ℓ₂}` with monomials
//! `Π q_i^{α_i} / α_i!`, for `1 ≤ ℓ₁+ℓ₂ ≤ r`.
//!
//! Residual sums use compensated summation. The multi-start search is numeric
//! evidence only: a large best residual does not prove that no solution exists.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::SquareMatrix;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result, Scalar};

/// Below this magnitude a `p` or `q` entry counts as zero for nontriviality.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rbar,
    Rtilde,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Rbar => "rbar",
            Family::Rtilde => "rtilde",
        }
    }

    /// Column of `q` whose nonzero entries make a candidate nontrivial.
    pub fn distinguished_column(self) -> usize {
        match self {
            Family::Rbar => 0,
            Family::Rtilde => 3,
        }
    }

    /// Columns of `q` that enter the system.
    pub fn active_columns(self) -> &'static [usize] {
        match self {
            Family::Rbar => &[0, 1],
            Family::Rtilde => &[0, 1, 2, 3, 4],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbar" => Ok(Family::Rbar),
            "rtilde" => Ok(Family::Rtilde),
            other => Err(Error::Parse(format!("unknown polynomial family '{other}' (expected rbar or rtilde)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolySystemSpec {
    pub family: Family,
    pub m: usize,
    pub r: usize,
}

/// Equation index: `s` for `RBAR`, `(ℓ₁, ℓ₂)` for `RTILDE`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EquationIndex {
    Order(usize),
    Pair(usize, usize),
}

impl fmt::Display for EquationIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquationIndex::Order(s) => write!(f, "s={s}"),
            EquationIndex::Pair(l1, l2) => write!(f, "({l1},{l2})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Monomial {
    alpha: [u32; 5],
    coef: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct Equation {
    index: EquationIndex,
    monomials: Vec<Monomial>,
}

impl PolySystemSpec {
    pub fn new(family: Family, m: usize, r: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("polynomial systems need m ≥ 2"));
        }
        if r < 1 {
            return Err(Error::invalid("polynomial systems need r ≥ 1"));
        }
        Ok(Self { family, m, r })
    }

    /// Equation indices in residual order: `s` ascending, or `(ℓ₁, ℓ₂)` by
    /// `ℓ₁+ℓ₂` then `ℓ₁`.
    pub fn equation_indices(&self) -> Vec<EquationIndex> {
        match self.family {
            Family::Rbar => (1..=self.r).map(EquationIndex::Order).collect(),
            Family::Rtilde => (1..=self.r)
                .flat_map(|total| (0..=total).map(move |l1| EquationIndex::Pair(l1, total - l1)))
                .collect(),
        }
    }

    fn equations(&self) -> Vec<Equation> {
        self.equation_indices()
            .into_iter()
            .map(|index| {
                let alphas: Vec<[u32; 5]> = match index {
                    EquationIndex::Order(s) => (0..=s / 2).map(|n2| [(s - 2 * n2) as u32, n2 as u32, 0, 0, 0]).collect(),
                    EquationIndex::Pair(l1, l2) => enumerate_j(l1, l2),
                };
                let monomials = alphas
                    .into_iter()
                    .map(|alpha| Monomial {
                        alpha,
                        coef: 1.0 / alpha.iter().map(|&a| factorial(a)).product::<f64>(),
                    })
                    .collect();
                Equation { index, monomials }
            })
            .collect()
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// All `α ∈ ℕ⁵` with `α₁+2α₂+α₃ = ℓ₁` and `α₃+α₄+2α₅ = ℓ₂`, sorted lexicographically.
pub fn enumerate_j(l1: usize, l2: usize) -> Vec<[u32; 5]> {
    let mut out = Vec::new();
    for a3 in 0..=l1.min(l2) {
        let rest1 = l1 - a3;
        let rest2 = l2 - a3;
        for a2 in 0..=rest1 / 2 {
            let a1 = rest1 - 2 * a2;
            for a5 in 0..=rest2 / 2 {
                let a4 = rest2 - 2 * a5;
                out.push([a1 as u32, a2 as u32, a3 as u32, a4 as u32, a5 as u32]);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Unknowns `p` (length `m`) and `q` (`m` rows of `q₁..q₅`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub p: Vec<T>,
    pub q: Vec<[T; 5]>,
}

impl<T: Scalar> Candidate<T> {
    pub fn new(p: Vec<T>, q: Vec<[T; 5]>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch {
                what: "candidate p vs q rows",
                expected: p.len(),
                got: q.len(),
            });
        }
        Ok(Self { p, q })
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    /// `m` rows with `p = 1` and the given columns of `q` filled in.
    pub fn from_columns(family: Family, first: &[T], second: &[T]) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::invalid("candidate columns differ in length"));
        }
        let (i, j) = match family {
            Family::Rbar => (0, 1),
            Family::Rtilde => (3, 4),
        };
        let q = first
            .iter()
            .zip(second)
            .map(|(&u, &v)| {
                let mut row = [T::zero(); 5];
                row[i] = u;
                row[j] = v;
                row
            })
            .collect();
        Self::new(vec![T::one(); first.len()], q)
    }

    pub fn is_nontrivial(&self, family: Family) -> bool {
        let tol = T::lit(ZERO_TOL);
        let col = family.distinguished_column();
        self.p.iter().all(|p| p.abs() > tol) && self.q.iter().any(|row| row[col].abs() > tol)
    }

    pub fn cast<U: Scalar>(&self) -> Candidate<U> {
        Candidate {
            p: self.p.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            q: self.q.iter().map(|row| row.map(|v| U::lit(v.to_f64_lossy()))).collect(),
        }
    }
}

/// Neumaier's compensated sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> CompensatedSum<T> {
    fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> T {
        self.sum + self.carry
    }
}

fn monomial_value<T: Scalar>(alpha: &[u32; 5], q: &[T; 5]) -> T {
    alpha
        .iter()
        .zip(q)
        .fold(T::one(), |acc, (&a, &v)| if a == 0 { acc } else { acc * v.powi(a as i32) })
}

fn check_dims<T: Scalar>(spec: &PolySystemSpec, cand: &Candidate<T>) -> Result<()> {
    if cand.m() != spec.m || cand.q.len() != spec.m {
        return Err(Error::DimensionMismatch {
            what: "candidate size vs system m",
            expected: spec.m,
            got: cand.m(),
        });
    }
    Ok(())
}

/// One residual per equation, in [`PolySystemSpec::equation_indices`] order.
pub fn residuals<T: Scalar>(spec: &PolySystemSpec, cand: &Candidate<T>) -> Result<Vec<T>> {
    check_dims(spec, cand)?;
    Ok(spec.equations().iter().map(|eq| residual(eq, cand)).collect())
}

fn residual<T: Scalar>(eq: &Equation, cand: &Candidate<T>) -> T {
    let mut acc = CompensatedSum::default();
    for (p, q) in cand.p.iter().zip(&cand.q) {
        let p2 = *p * *p;
        for mono in &eq.monomials {
            acc.add(p2 * T::lit(mono.coef) * monomial_value(&mono.alpha, q));
        }
    }
    acc.value()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_solution: bool,
    pub is_nontrivial: bool,
    pub max_abs_residual: f64,
}

pub fn verify_candidate<T: Scalar>(spec: &PolySystemSpec, cand: &Candidate<T>, tol: T) -> Result<Verdict> {
    let res = residuals(spec, cand)?;
    let max = res.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    Ok(Verdict {
        is_solution: max <= tol,
        is_nontrivial: cand.is_nontrivial(spec.family),
        max_abs_residual: max.to_f64_lossy(),
    })
}

/// Named candidates: `builtin-c3` is the published solution shape with every
/// `p = 1`; `builtin-c3-printed` keeps the printed `p = 0`.
pub fn builtin_candidate(name: &str, family: Family, m: usize) -> Result<Candidate<f64>> {
    let p_value = match name {
        "builtin-c3" => 1.0,
        "builtin-c3-printed" => 0.0,
        other => return Err(Error::Parse(format!("unknown candidate '{other}' (expected builtin-c3 or builtin-c3-printed)"))),
    };
    let (first, second) = match m {
        2 => (vec![1.0, -1.0], vec![-0.5, -0.5]),
        3 => {
            let s = 3f64.sqrt() / 3.0;
            (vec![s, -s, 0.0], vec![-1.0 / 6.0, -1.0 / 6.0, 0.0])
        }
        _ => return Err(Error::Unsupported(format!("no built-in candidate for m = {m}"))),
    };
    let mut c = Candidate::from_columns(family, &first, &second)?;
    c.p.iter_mut().for_each(|p| *p = p_value);
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate<f64>,
    /// Euclidean norm of the residual vector at `best`.
    pub best_residual: f64,
    pub restart_index: usize,
    pub restarts: usize,
}

/// Multi-start Levenberg–Marquardt on the sum of squared residuals.
///
/// Every `p` is fixed to 1 and the first entry of the distinguished column is
/// fixed to 1; all other `q` entries of the active columns are free. The
/// weighted scaling of the unknowns, together with row permutation and sign
/// flips, maps any candidate with `p = 1` and a nonzero distinguished entry to
/// this form. Restart 0 starts from the built-in candidate when one exists
/// for `m`, the rest from standard normal draws.
pub fn search_nontrivial(spec: &PolySystemSpec, restarts: usize, seed: u64) -> Result<SearchResult> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    let layout = Layout::new(spec);
    let equations = spec.equations();
    let seeded = builtin_candidate("builtin-c3", spec.family, spec.m).ok().map(|c| layout.normalize(&c));
    let runs: Vec<(f64, usize, Vec<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let start = match (&seeded, i) {
                (Some(v), 0) => v.clone(),
                _ => {
                    let mut rng = stream(derive_seed(seed, &[i as u64]));
                    (0..layout.free.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                }
            };
            let (x, norm) = levenberg_marquardt(&layout, &equations, start);
            (norm, i, x)
        })
        .collect();
    let (best_residual, restart_index, x) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one restart");
    Ok(SearchResult {
        best: layout.candidate(&x),
        best_residual,
        restart_index,
        restarts,
    })
}

/// Maps the free search variables onto a full candidate.
struct Layout {
    m: usize,
    fixed: (usize, usize),
    free: Vec<(usize, usize)>,
}

impl Layout {
    fn new(spec: &PolySystemSpec) -> Self {
        let fixed = (0, spec.family.distinguished_column());
        let free = (0..spec.m)
            .flat_map(|l| spec.family.active_columns().iter().map(move |&i| (l, i)))
            .filter(|&slot| slot != fixed)
            .collect();
        Self { m: spec.m, fixed, free }
    }

    fn candidate(&self, x: &[f64]) -> Candidate<f64> {
        let mut q = vec![[0.0; 5]; self.m];
        q[self.fixed.0][self.fixed.1] = 1.0;
        for (&(l, i), &v) in self.free.iter().zip(x) {
            q[l][i] = v;
        }
        Candidate { p: vec![1.0; self.m], q }
    }

    /// Free variables of `c` rescaled so that its fixed entry becomes 1. Only
    /// used for candidates whose distinguished entry is already nonzero.
    fn normalize(&self, c: &Candidate<f64>) -> Vec<f64> {
        let d = c.q[self.fixed.0][self.fixed.1];
        // weighted degrees of q₁..q₅ under the scaling that fixes the distinguished column
        let degrees: [i32; 5] = if self.fixed.1 == 0 { [1, 2, 0, 0, 0] } else { [0, 0, 1, 1, 2] };
        self.free.iter().map(|&(l, i)| c.q[l][i] / d.powi(degrees[i])).collect()
    }
}

fn levenberg_marquardt(layout: &Layout, equations: &[Equation], mut x: Vec<f64>) -> (Vec<f64>, f64) {
    const MAX_ITER: usize = 400;
    let n = x.len();
    let eval = |x: &[f64]| -> Vec<f64> {
        let c = layout.candidate(x);
        equations.iter().map(|eq| residual(eq, &c)).collect()
    };
    let sq = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut r = eval(&x);
    let mut cost = sq(&r);
    let mut mu = 1e-3;
    for _ in 0..MAX_ITER {
        if cost < 1e-30 || !cost.is_finite() {
            break;
        }
        let jac = jacobian(layout, equations, &x);
        let mut jtj = SquareMatrix::zeros(n);
        let mut grad = vec![0.0; n];
        for (row, &ri) in jac.iter().zip(&r) {
            for a in 0..n {
                grad[a] += row[a] * ri;
                for b in 0..n {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-15 {
            break;
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut damped = jtj.clone();
            for a in 0..n {
                damped[(a, a)] += mu * (1.0 + jtj[(a, a)]);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&grad);
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - s).collect();
            let tr = eval(&trial);
            let tc = sq(&tr);
            if tc.is_finite() && tc < cost {
                let rel = step.iter().map(|s| s * s).sum::<f64>().sqrt() / (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
                x = trial;
                r = tr;
                cost = tc;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-15 {
                    return (x, cost.sqrt());
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, cost.sqrt())
}

/// `∂ residual_e / ∂ x_v` with `p = 1`, one row per equation.
fn jacobian(layout: &Layout, equations: &[Equation], x: &[f64]) -> Vec<Vec<f64>> {
    let c = layout.candidate(x);
    equations
        .iter()
        .map(|eq| {
            layout
                .free
                .iter()
                .map(|&(l, i)| {
                    let q = &c.q[l];
                    let mut acc = CompensatedSum::default();
                    for mono in &eq.monomials {
                        let a = mono.alpha[i];
                        if a == 0 {
                            continue;
                        }
                        let mut lowered = mono.alpha;
                        lowered[i] -= 1;
                        acc.add(mono.coef * f64::from(a) * monomial_value(&lowered, q));
                    }
                    acc.value()
                })
                .collect()
        })
        .collect()
}

/// Residual report written by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyReport {
    pub family: Family,
    pub m: usize,
    pub r: usize,
    pub candidate: Candidate<f64>,
    pub equations: Vec<String>,
    pub residuals: Vec<f64>,
    pub verdict: ReportVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportVerdict {
    pub is_solution: bool,
    pub is_nontrivial: bool,
    pub max_abs_residual: f64,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub search: Option<SearchSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub restarts: usize,
    pub seed: u64,
    pub best_residual: f64,
    pub restart_index: usize,
    pub threshold: f64,
    pub no_solution_found: bool,
    /// Always false: a failed numeric search is evidence, not a proof.
    pub certifying: bool,
}

/// Evidence bar for calling a search unsuccessful.
pub const SEARCH_THRESHOLD: f64 = 1e-6;

pub fn report(spec: &PolySystemSpec, cand: &Candidate<f64>, tol: f64) -> Result<PolyReport> {
    let res = residuals(spec, cand)?;
    let v = verify_candidate(spec, cand, tol)?;
    Ok(PolyReport {
        family: spec.family,
        m: spec.m,
        r: spec.r,
        candidate: cand.clone(),
        equations: spec.equation_indices().iter().map(ToString::to_string).collect(),
        residuals: res,
        verdict: ReportVerdict {
            is_solution: v.is_solution,
            is_nontrivial: v.is_nontrivial,
            max_abs_residual: v.max_abs_residual,
            tol,
            search: None,
        },
    })
}

pub fn search_report(spec: &PolySystemSpec, restarts: usize, seed: u64, tol: f64) -> Result<PolyReport> {
    let found = search_nontrivial(spec, restarts, seed)?;
    let mut rep = report(spec, &found.best, tol)?;
    rep.verdict.search = Some(SearchSummary {
        restarts,
        seed,
        best_residual: found.best_residual,
        restart_index: found.restart_index,
        threshold: SEARCH_THRESHOLD,
        no_solution_found: found.best_residual > SEARCH_THRESHOLD,
        certifying: false,
    });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_j(l1: usize, l2: usize) -> Vec<[u32; 5]> {
        let bound = l1.max(l2) as u32;
        let mut out = Vec::new();
        for a1 in 0..=bound {
            for a2 in 0..=bound {
                for a3 in 0..=bound {
                    for a4 in 0..=bound {
                        for a5 in 0..=bound {
                            if (a1 + 2 * a2 + a3) as usize == l1 && (a3 + a4 + 2 * a5) as usize == l2 {
                                out.push([a1, a2, a3, a4, a5]);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn j_small_cases() {
        assert_eq!(enumerate_j(0, 1), vec![[0, 0, 0, 1, 0]]);
        assert_eq!(enumerate_j(1, 1), vec![[0, 0, 1, 0, 0], [1, 0, 0, 1, 0]]);
        assert_eq!(enumerate_j(0, 0), vec![[0; 5]]);
    }

    #[test]
    fn j_matches_brute_force() {
        for total in 0..=8 {
            for l1 in 0..=total {
                assert_eq!(enumerate_j(l1, total - l1), brute_force_j(l1, total - l1), "({l1},{})", total - l1);
            }
        }
    }

    #[test]
    fn equation_order() {
        let spec = PolySystemSpec::new(Family::Rtilde, 2, 2).unwrap();
        let idx: Vec<String> = spec.equation_indices().iter().map(ToString::to_string).collect();
        assert_eq!(idx, ["(0,1)", "(1,0)", "(0,2)", "(1,1)", "(2,0)"]);
        assert_eq!(PolySystemSpec::new(Family::Rbar, 2, 3).unwrap().equation_indices().len(), 3);
    }

    #[test]
    fn zero_q_gives_zero_residuals() {
        let c = Candidate::new(vec![0.7, -2.0, 3.0], vec![[0.0; 5]; 3]).unwrap();
        for family in [Family::Rbar, Family::Rtilde] {
            let spec = PolySystemSpec::new(family, 3, 5).unwrap();
            assert!(residuals(&spec, &c).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rbar_order_three_solution() {
        // s=1: 1-1; s=2: (1/2-1/2)·2; s=3: 1/6-1/2 + (-1/6+1/2)
        let spec = PolySystemSpec::new(Family::Rbar, 2, 3).unwrap();
        let c = Candidate::<f64>::from_columns(Family::Rbar, &[1.0, -1.0], &[-0.5, -0.5]).unwrap();
        assert_eq!(residuals(&spec, &c).unwrap(), vec![0.0, 0.0, 0.0]);
        // s=4: 2·(1/24 - 1/4 + 1/8) = -1/6
        let spec4 = PolySystemSpec::new(Family::Rbar, 2, 4).unwrap();
        let r = residuals(&spec4, &c).unwrap();
        assert!((r[3] + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rtilde_order_three_builtin() {
        let spec = PolySystemSpec::new(Family::Rtilde, 2, 3).unwrap();
        let c = builtin_candidate("builtin-c3", Family::Rtilde, 2).unwrap();
        let v = verify_candidate(&spec, &c, 1e-12).unwrap();
        assert_eq!(
            v,
            Verdict {
                is_solution: true,
                is_nontrivial: true,
                max_abs_residual: 0.0
            }
        );
    }

    #[test]
    fn printed_m3_candidate_fails_order_four() {
        let spec = PolySystemSpec::new(Family::Rtilde, 3, 5).unwrap();
        let c = builtin_candidate("builtin-c3", Family::Rtilde, 3).unwrap();
        let res = residuals(&spec, &c).unwrap();
        let at = spec.equation_indices().iter().position(|&e| e == EquationIndex::Pair(0, 4)).unwrap();
        assert!((res[at] + 1.0 / 54.0).abs() < 1e-15, "{}", res[at]);
        assert!(!verify_candidate(&spec, &c, 1e-12).unwrap().is_solution);

        let rbar = PolySystemSpec::new(Family::Rbar, 3, 5).unwrap();
        let c = builtin_candidate("builtin-c3", Family::Rbar, 3).unwrap();
        assert!((residuals(&rbar, &c).unwrap()[3] + 1.0 / 54.0).abs() < 1e-15);
    }

    #[test]
    fn zero_p_is_trivial() {
        let spec = PolySystemSpec::new(Family::Rtilde, 2, 3).unwrap();
        let c = builtin_candidate("builtin-c3-printed", Family::Rtilde, 2).unwrap();
        let v = verify_candidate(&spec, &c, 1e-12).unwrap();
        assert!(v.is_solution && !v.is_nontrivial);
        let mut one_zero = builtin_candidate("builtin-c3", Family::Rbar, 2).unwrap();
        one_zero.p[1] = 0.0;
        assert!(!one_zero.is_nontrivial(Family::Rbar));
    }

    #[test]
    fn unknown_builtin_is_rejected() {
        assert!(builtin_candidate("nope", Family::Rbar, 2).is_err());
        assert!(builtin_candidate("builtin-c3", Family::Rbar, 4).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let spec = PolySystemSpec::new(Family::Rbar, 3, 5).unwrap();
        let layout = Layout::new(&spec);
        let c = builtin_candidate("builtin-c3", Family::Rbar, 3).unwrap();
        let x = layout.normalize(&c);
        let scaled = layout.candidate(&x);
        assert_eq!(scaled.q[0][0], 1.0);
        assert!((scaled.q[1][0] + 1.0).abs() < 1e-15);
        assert!((scaled.q[0][1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for family in [Family::Rbar, Family::Rtilde] {
            let spec = PolySystemSpec::new(family, 2, 4).unwrap();
            let layout = Layout::new(&spec);
            let eqs = spec.equations();
            let x: Vec<f64> = (0..layout.free.len()).map(|i| 0.3 + 0.17 * i as f64 - 0.05 * (i * i) as f64).collect();
            let jac = jacobian(&layout, &eqs, &x);
            let h = 1e-6;
            for v in 0..x.len() {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[v] += h;
                dn[v] -= h;
                let ru = residuals(&spec, &layout.candidate(&up)).unwrap();
                let rd = residuals(&spec, &layout.candidate(&dn)).unwrap();
                for e in 0..eqs.len() {
                    let fd = (ru[e] - rd[e]) / (2.0 * h);
                    assert!((fd - jac[e][v]).abs() < 1e-6, "{family} eq {e} var {v}: {fd} vs {}", jac[e][v]);
                }
            }
        }
    }

    #[test]
    fn search_finds_order_three_solution() {
        let spec = PolySystemSpec::new(Family::Rbar, 2, 3).unwrap();
        let found = search_nontrivial(&spec, 8, 1).unwrap();
        assert!(found.best_residual < 1e-10);
        assert!(found.best.is_nontrivial(Family::Rbar));
    }

    #[test]
    fn search_finds_three_atom_order_five_solution() {
        let spec = PolySystemSpec::new(Family::Rbar, 3, 5).unwrap();
        let found = search_nontrivial(&spec, 200, 7).unwrap();
        assert!(found.best_residual < 1e-10);
        assert!(verify_candidate(&spec, &found.best, 1e-10).unwrap().is_nontrivial);
    }

    #[test]
    fn search_is_deterministic() {
        let spec = PolySystemSpec::new(Family::Rtilde, 2, 4).unwrap();
        assert_eq!(search_nontrivial(&spec, 6, 3).unwrap(), search_nontrivial(&spec, 6, 3).unwrap());
    }

    fn row() -> impl Strategy<Value = [f64; 5]> {
        prop::array::uniform5(-2.0f64..2.0)
    }

    proptest! {
        #[test]
        fn scaling_p_scales_residuals_quadratically(
            rows in prop::collection::vec(row(), 2..4),
            lambda in prop::sample::select(vec![0.5, 2.0, -4.0, 0.25]),
        ) {
            let m = rows.len();
            let c = Candidate::new(vec![1.0; m], rows.clone()).unwrap();
            let scaled = Candidate::new(vec![lambda; m], rows).unwrap();
            for family in [Family::Rbar, Family::Rtilde] {
                let spec = PolySystemSpec::new(family, m, 4).unwrap();
                let a = residuals(&spec, &c).unwrap();
                let b = residuals(&spec, &scaled).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    // λ is a power of two, so the scaling is exact
                    prop_assert_eq!(*y, lambda * lambda * x);
                }
            }
        }

        #[test]
        fn rtilde_reduces_to_rbar(
            p in prop::collection::vec(-2.0f64..2.0, 2..4),
            q4 in prop::collection::vec(-2.0f64..2.0, 4),
            q5 in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let m = p.len();
            let tilde = Candidate::new(p.clone(), (0..m).map(|l| [0.0, 0.0, 0.0, q4[l], q5[l]]).collect()).unwrap();
            let bar = Candidate::new(p, (0..m).map(|l| [q4[l], q5[l], 0.0, 0.0, 0.0]).collect()).unwrap();
            let r = 5;
            let ts = PolySystemSpec::new(Family::Rtilde, m, r).unwrap();
            let bs = PolySystemSpec::new(Family::Rbar, m, r).unwrap();
            let tr = residuals(&ts, &tilde).unwrap();
            let br = residuals(&bs, &bar).unwrap();
            for (i, idx) in ts.equation_indices().iter().enumerate() {
                if let EquationIndex::Pair(0, l2) = *idx {
                    prop_assert!((tr[i] - br[l2 - 1]).abs() <= 1e-15);
                }
            }
        }
    }
}
