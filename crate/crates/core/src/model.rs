//! GMoE atoms, mixing measures and their densities.
//!
//! An atom `θ = (c, Γ, a, b, ν)` contributes the product of a gating density
//! `N_d(x | c, Γ)` and an expert density `N_1(y | aᵀx + b, ν)`. Every such
//! product is itself a `(d+1)`-variate Gaussian in `(x, y)`; [`to_joint_gaussian`]
//! and [`from_joint_gaussian`] convert between the two parameterizations.

use serde::{Deserialize, Serialize};

use crate::linalg::{Cholesky, SquareMatrix};
use crate::{Error, Result, Scalar};

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Lower bounds keeping covariances and expert variances inside a compact set,
/// plus an optional box on the location-type coordinates `c`, `a`, `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Floors<T> {
    /// Smallest admissible eigenvalue of `Γ` (and of joint covariances).
    pub lambda: T,
    /// Smallest admissible expert variance `ν`.
    pub nu: T,
    pub bounds: Option<ParamBox<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBox<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Default for Floors<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(1e-8),
            nu: T::lit(1e-8),
            bounds: None,
        }
    }
}

impl<T: Scalar> Floors<T> {
    pub fn new(lambda: T, nu: T) -> Self {
        Self {
            lambda,
            nu,
            bounds: None,
        }
    }

    /// Rounding slack when checking an eigenvalue floor on a matrix of size `scale`.
    fn eigen_slack(scale: T) -> T {
        T::lit(16.0) * T::epsilon() * scale.max(T::one())
    }
}

fn check_spd<T: Scalar>(what: &'static str, m: &SquareMatrix<T>, floor: T) -> Result<Cholesky<T>> {
    let asym = m.max_asymmetry();
    if !(asym <= T::lit(SYMMETRY_TOL)) {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: asym.to_f64_lossy(),
        });
    }
    let not_pd = |eig: T| Error::NotPositiveDefinite {
        what,
        eigenvalue: eig.to_f64_lossy(),
        floor: floor.to_f64_lossy(),
    };
    let min_eig = m.min_eigenvalue();
    if !(min_eig >= floor - Floors::eigen_slack(m.max_abs())) {
        return Err(not_pd(min_eig));
    }
    m.cholesky().ok_or_else(|| not_pd(min_eig))
}

/// One GMoE atom `(c, Γ, a, b, ν)`.
#[derive(Clone, Debug)]
pub struct Component<T> {
    c: Vec<T>,
    gamma: SquareMatrix<T>,
    a: Vec<T>,
    b: T,
    nu: T,
    gate_chol: Cholesky<T>,
    gate_log_norm: T,
    expert_log_norm: T,
}

impl<T: PartialEq> PartialEq for Component<T> {
    fn eq(&self, other: &Self) -> bool {
        self.c == other.c && self.gamma == other.gamma && self.a == other.a && self.b == other.b && self.nu == other.nu
    }
}

impl<T: Scalar> Component<T> {
    pub fn new(c: Vec<T>, gamma: SquareMatrix<T>, a: Vec<T>, b: T, nu: T) -> Result<Self> {
        Self::with_floors(c, gamma, a, b, nu, &Floors::default())
    }

    pub fn with_floors(c: Vec<T>, gamma: SquareMatrix<T>, a: Vec<T>, b: T, nu: T, floors: &Floors<T>) -> Result<Self> {
        let d = c.len();
        if d == 0 {
            return Err(Error::invalid("covariate dimension must be at least 1"));
        }
        if gamma.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "gating covariance",
                expected: d,
                got: gamma.dim(),
            });
        }
        if a.len() != d {
            return Err(Error::DimensionMismatch {
                what: "expert slope",
                expected: d,
                got: a.len(),
            });
        }
        let all_finite = c.iter().chain(&a).chain(gamma.as_slice()).all(|v| v.is_finite());
        if !all_finite || !b.is_finite() || !nu.is_finite() {
            return Err(Error::invalid("component parameters must be finite"));
        }
        if !(nu >= floors.nu) {
            return Err(Error::invalid(format!(
                "expert variance {:e} below floor {:e}",
                nu.to_f64_lossy(),
                floors.nu.to_f64_lossy()
            )));
        }
        if let Some(bx) = floors.bounds {
            if c.iter().chain(&a).chain(std::iter::once(&b)).any(|&v| v < bx.lo || v > bx.hi) {
                return Err(Error::invalid("component location/slope/intercept outside parameter box"));
            }
        }
        let gate_chol = check_spd("gating covariance", &gamma, floors.lambda)?;
        let gate_log_norm = -T::lit(0.5) * (T::lit(d as f64) * T::ln_two_pi() + gate_chol.log_det());
        let expert_log_norm = -T::lit(0.5) * (T::ln_two_pi() + nu.ln());
        Ok(Self {
            c,
            gamma,
            a,
            b,
            nu,
            gate_chol,
            gate_log_norm,
            expert_log_norm,
        })
    }

    /// Scalar-covariate convenience constructor (`d = 1`).
    pub fn scalar(c: T, gamma: T, a: T, b: T, nu: T) -> Result<Self> {
        Self::new(vec![c], SquareMatrix::from_diag(&[gamma]), vec![a], b, nu)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.c.len()
    }
    pub fn c(&self) -> &[T] {
        &self.c
    }
    pub fn gamma(&self) -> &SquareMatrix<T> {
        &self.gamma
    }
    pub fn a(&self) -> &[T] {
        &self.a
    }
    pub fn b(&self) -> T {
        self.b
    }
    pub fn nu(&self) -> T {
        self.nu
    }
    pub fn gate_cholesky(&self) -> &Cholesky<T> {
        &self.gate_chol
    }

    /// `log N_d(x | c, Γ)`.
    pub fn log_gate(&self, x: &[T]) -> T {
        let diff: Vec<T> = x.iter().zip(&self.c).map(|(&xi, &ci)| xi - ci).collect();
        self.gate_log_norm - T::lit(0.5) * self.gate_chol.mahalanobis_sq(&diff)
    }

    /// `aᵀx + b`.
    pub fn expert_mean(&self, x: &[T]) -> T {
        self.a.iter().zip(x).map(|(&ai, &xi)| ai * xi).sum::<T>() + self.b
    }

    /// `log N_1(y | aᵀx + b, ν)`.
    pub fn log_expert(&self, x: &[T], y: T) -> T {
        let r = y - self.expert_mean(x);
        self.expert_log_norm - T::lit(0.5) * r * r / self.nu
    }

    /// `log [N_d(x | c, Γ) · N_1(y | aᵀx + b, ν)]`.
    #[inline]
    pub fn log_density(&self, x: &[T], y: T) -> T {
        self.log_gate(x) + self.log_expert(x, y)
    }

    /// `(c, vec(Γ) row-major, a, b, ν)` as one flat vector.
    pub fn stacked(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(2 * self.dim() + self.dim() * self.dim() + 2);
        v.extend_from_slice(&self.c);
        v.extend_from_slice(self.gamma.as_slice());
        v.extend_from_slice(&self.a);
        v.push(self.b);
        v.push(self.nu);
        v
    }

    pub fn cast<U: Scalar>(&self) -> Result<Component<U>> {
        let cv = |v: &[T]| v.iter().map(|&x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        Component::with_floors(
            cv(&self.c),
            self.gamma.cast(),
            cv(&self.a),
            U::lit(self.b.to_f64_lossy()),
            U::lit(self.nu.to_f64_lossy()),
            &Floors::new(U::zero(), U::zero()),
        )
    }
}

/// A finite mixing measure `G = Σ π_i δ_{θ_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMeasure<T> {
    dim: usize,
    weights: Vec<T>,
    atoms: Vec<Component<T>>,
}

impl<T: Scalar> MixingMeasure<T> {
    pub fn new(weights: Vec<T>, atoms: Vec<Component<T>>) -> Result<Self> {
        Self::new_constrained(weights, atoms, T::zero())
    }

    /// Like [`MixingMeasure::new`], additionally requiring every weight `≥ beta_floor`.
    pub fn new_constrained(weights: Vec<T>, atoms: Vec<Component<T>>, beta_floor: T) -> Result<Self> {
        let first = atoms.first().ok_or(Error::EmptyMeasure)?;
        let dim = first.dim();
        if weights.len() != atoms.len() {
            return Err(Error::DimensionMismatch {
                what: "weights vs atoms",
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        if let Some(bad) = atoms.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch {
                what: "atom dimension",
                expected: dim,
                got: bad.dim(),
            });
        }
        if weights.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
            return Err(Error::invalid("mixing weights must be positive and finite"));
        }
        if let Some(&w) = weights.iter().find(|&&w| w < beta_floor) {
            return Err(Error::invalid(format!(
                "weight {:e} below beta floor {:e}",
                w.to_f64_lossy(),
                beta_floor.to_f64_lossy()
            )));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(WEIGHT_SUM_TOL).max(T::lit(16.0) * T::epsilon() * T::lit(atoms.len() as f64));
        if !((total - T::one()).abs() <= tol) {
            return Err(Error::invalid(format!(
                "mixing weights sum to {:.17} instead of 1",
                total.to_f64_lossy()
            )));
        }
        Ok(Self { dim, weights, atoms })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Number of atoms.
    #[inline]
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    /// Always false: construction rejects empty measures.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn atoms(&self) -> &[Component<T>] {
        &self.atoms
    }
    pub fn iter(&self) -> impl Iterator<Item = (T, &Component<T>)> {
        self.weights.iter().copied().zip(&self.atoms)
    }
    pub fn min_weight(&self) -> T {
        self.weights.iter().fold(T::infinity(), |m, &w| m.min(w))
    }

    /// The same measure with atoms listed in `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("not a permutation of the atom indices"));
            }
        }
        if order.len() != self.len() {
            return Err(Error::invalid("not a permutation of the atom indices"));
        }
        Ok(Self {
            dim: self.dim,
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            atoms: order.iter().map(|&i| self.atoms[i].clone()).collect(),
        })
    }

    /// `log p_G(x, y)`.
    pub fn log_density(&self, x: &[T], y: T) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "covariate",
                expected: self.dim,
                got: x.len(),
            });
        }
        let terms: Vec<T> = self.iter().map(|(w, atom)| w.ln() + atom.log_density(x, y)).collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn to_doc(&self) -> MeasureDoc {
        MeasureDoc {
            dim: self.dim,
            atoms: self
                .iter()
                .map(|(w, atom)| AtomDoc {
                    weight: w.to_f64_lossy(),
                    c: atom.c.iter().map(|v| v.to_f64_lossy()).collect(),
                    gamma: atom.gamma.rows().iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
                    a: atom.a.iter().map(|v| v.to_f64_lossy()).collect(),
                    b: atom.b.to_f64_lossy(),
                    nu: atom.nu.to_f64_lossy(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &MeasureDoc) -> Result<Self> {
        Self::from_doc_with_floors(doc, &Floors::default())
    }

    pub fn from_doc_with_floors(doc: &MeasureDoc, floors: &Floors<T>) -> Result<Self> {
        let cv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let mut weights = Vec::with_capacity(doc.atoms.len());
        let mut atoms = Vec::with_capacity(doc.atoms.len());
        for atom in &doc.atoms {
            let gamma = SquareMatrix::from_rows(&atom.gamma.iter().map(|r| cv(r)).collect::<Vec<_>>())
                .ok_or_else(|| Error::Parse("gamma must be a square matrix".into()))?;
            weights.push(T::lit(atom.weight));
            atoms.push(Component::with_floors(cv(&atom.c), gamma, cv(&atom.a), T::lit(atom.b), T::lit(atom.nu), floors)?);
        }
        let g = Self::new(weights, atoms)?;
        if g.dim != doc.dim {
            return Err(Error::DimensionMismatch {
                what: "measure document dim",
                expected: doc.dim,
                got: g.dim,
            });
        }
        Ok(g)
    }

    /// JSON document `{"dim", "atoms": [{"weight","c","gamma","a","b","nu"}]}`.
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&self.to_doc())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MeasureDoc = serde_json::from_str(s)?;
        Self::from_doc(&doc)
    }

    pub fn cast<U: Scalar>(&self) -> Result<MixingMeasure<U>> {
        Ok(MixingMeasure {
            dim: self.dim,
            weights: self.weights.iter().map(|&w| U::lit(w.to_f64_lossy())).collect(),
            atoms: self.atoms.iter().map(Component::cast).collect::<Result<_>>()?,
        })
    }
}

/// Serialized form of a [`MixingMeasure`]. Field order is part of the format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureDoc {
    pub dim: usize,
    pub atoms: Vec<AtomDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomDoc {
    pub weight: f64,
    pub c: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub b: f64,
    pub nu: f64,
}

/// `log Σ exp(v_i)`, stable for large magnitudes. Empty input gives `-∞`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// `log N(x | mean, cov)` through a Cholesky factorization of `cov`.
pub fn gaussian_log_pdf<T: Scalar>(x: &[T], mean: &[T], cov: &SquareMatrix<T>) -> Result<T> {
    let d = mean.len();
    if x.len() != d || cov.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "gaussian_log_pdf operands",
            expected: d,
            got: if x.len() != d { x.len() } else { cov.dim() },
        });
    }
    let chol = check_spd("covariance", cov, T::zero())?;
    let diff: Vec<T> = x.iter().zip(mean).map(|(&a, &b)| a - b).collect();
    Ok(-T::lit(0.5) * (T::lit(d as f64) * T::ln_two_pi() + chol.log_det() + chol.mahalanobis_sq(&diff)))
}

/// `log p_G(x, y)` for a GMoE mixing measure.
pub fn log_joint_density<T: Scalar>(g: &MixingMeasure<T>, x: &[T], y: T) -> Result<T> {
    g.log_density(x, y)
}

/// A `(d+1)`-variate Gaussian over `(x, y)`.
#[derive(Clone, Debug)]
pub struct JointGaussian<T> {
    psi: Vec<T>,
    sigma: SquareMatrix<T>,
    chol: Cholesky<T>,
}

impl<T: Scalar> PartialEq for JointGaussian<T> {
    fn eq(&self, other: &Self) -> bool {
        self.psi == other.psi && self.sigma == other.sigma
    }
}

impl<T: Scalar> JointGaussian<T> {
    pub fn new(psi: Vec<T>, sigma: SquareMatrix<T>) -> Result<Self> {
        Self::with_floor(psi, sigma, Floors::<T>::default().lambda)
    }

    pub fn with_floor(psi: Vec<T>, sigma: SquareMatrix<T>, lambda_floor: T) -> Result<Self> {
        if psi.len() < 2 || sigma.dim() != psi.len() {
            return Err(Error::DimensionMismatch {
                what: "joint covariance",
                expected: psi.len(),
                got: sigma.dim(),
            });
        }
        let chol = check_spd("joint covariance", &sigma, lambda_floor)?;
        Ok(Self { psi, sigma, chol })
    }

    pub fn psi(&self) -> &[T] {
        &self.psi
    }
    pub fn sigma(&self) -> &SquareMatrix<T> {
        &self.sigma
    }
    /// Covariate dimension `d` (the joint dimension is `d + 1`).
    pub fn covariate_dim(&self) -> usize {
        self.psi.len() - 1
    }

    /// `log N_{d+1}(z | ψ, Σ)`.
    pub fn log_pdf(&self, z: &[T]) -> T {
        let diff: Vec<T> = z.iter().zip(&self.psi).map(|(&a, &b)| a - b).collect();
        -T::lit(0.5)
            * (T::lit(self.psi.len() as f64) * T::ln_two_pi() + self.chol.log_det() + self.chol.mahalanobis_sq(&diff))
    }
}

/// `ψ = (c, aᵀc + b)`, `Σ = [[Γ, Γa], [aᵀΓ, aᵀΓa + ν]]`.
pub fn to_joint_gaussian<T: Scalar>(comp: &Component<T>) -> JointGaussian<T> {
    let d = comp.dim();
    let gamma_a = comp.gamma.mat_vec(&comp.a);
    let a_gamma_a: T = comp.a.iter().zip(&gamma_a).map(|(&x, &y)| x * y).sum();
    let mut sigma = SquareMatrix::zeros(d + 1);
    for i in 0..d {
        for j in 0..d {
            sigma[(i, j)] = comp.gamma[(i, j)];
        }
        sigma[(i, d)] = gamma_a[i];
        sigma[(d, i)] = gamma_a[i];
    }
    sigma[(d, d)] = a_gamma_a + comp.nu;
    let mut psi = comp.c.clone();
    psi.push(comp.expert_mean(&comp.c));
    // SPD by construction: the Schur complement of Γ is ν > 0.
    let chol = sigma
        .cholesky()
        .unwrap_or_else(|| panic!("joint covariance of a valid component failed to factor: {sigma:?}"));
    JointGaussian { psi, sigma, chol }
}

/// Result of [`from_joint_gaussian`].
#[derive(Clone, Debug, PartialEq)]
pub struct FromJoint<T> {
    pub component: Component<T>,
    /// The Schur complement `Σ_YY − Σ_YX Γ⁻¹ Σ_XY` fell below the `ν` floor and was clipped.
    pub nu_clipped: bool,
}

/// Inverse of [`to_joint_gaussian`]: `Γ = Σ_XX`, `a = Γ⁻¹Σ_XY`,
/// `ν = Σ_YY − Σ_YX Γ⁻¹ Σ_XY`, `c = ψ_X`, `b = ψ_Y − aᵀc`.
pub fn from_joint_gaussian<T: Scalar>(jg: &JointGaussian<T>, floors: &Floors<T>) -> Result<FromJoint<T>> {
    let d = jg.covariate_dim();
    let s = &jg.sigma;
    let gamma = SquareMatrix::from_row_major(d, (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|ij| s[ij]).collect())
        .expect("d×d block");
    let gamma_chol = gamma.cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: "gating block of joint covariance",
        eigenvalue: gamma.min_eigenvalue().to_f64_lossy(),
        floor: floors.lambda.to_f64_lossy(),
    })?;
    let s_xy: Vec<T> = (0..d).map(|i| s[(i, d)]).collect();
    let a = gamma_chol.solve(&s_xy);
    let schur = s[(d, d)] - s_xy.iter().zip(&a).map(|(&u, &v)| u * v).sum::<T>();
    let nu_clipped = !(schur >= floors.nu);
    let nu = if nu_clipped { floors.nu } else { schur };
    let c = jg.psi[..d].to_vec();
    let b = jg.psi[d] - a.iter().zip(&c).map(|(&ai, &ci)| ai * ci).sum::<T>();
    let component = Component::with_floors(c, gamma, a, b, nu, floors)?;
    Ok(FromJoint { component, nu_clipped })
}
