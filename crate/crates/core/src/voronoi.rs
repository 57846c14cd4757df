//! Voronoi cells of fitted atoms around true atoms, and the two Voronoi losses.
//!
//! For a fitted measure `G` and the truth `G₀`, fitted atom `i` falls in the
//! cell of the nearest true atom in the stacked parameter space
//! `(c, vec(Γ), a, b, ν)` (ties go to the smaller true index). Per cell the
//! loss charges each member `π_i · K_ij(κ)`, with
//!
//! ```text
//! K_ij(κ) = ‖Δc‖^κ₁ + ‖ΔΓ‖_F^κ₂ + ‖Δa‖^κ₃ + |Δb|^κ₄ + |Δν|^κ₅
//! ```
//!
//! and exponents chosen by the cell size, then adds `Σ_j |Σ_{i∈A_j} π_i − π⁰_j|`.
//!
//! | cell | D̄ (all locations nonzero) | D̃, zero-location atom |
//! |------|---------------------------|------------------------|
//! | `|A_j| = 1` | `(1,1,1,1,1)` | `(1,1,1,1,1)` |
//! | `|A_j| = m > 1` | `(r̄, r̄/2, 2, r̄, r̄/2)` | `(r̃, r̃/2, r̃/2, r̃, r̃/2)` |
//!
//! with `r̄ = r̄(m)` and `r̃ = r̃(m)`; nonzero-location cells in `D̃` use the `D̄` row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Component, MixingMeasure};
use crate::{Error, Result, Scalar};

/// Partition of fitted indices `0..k` into cells `A_0..A_{k₀-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiAssignment<T> {
    pub cells: Vec<Vec<usize>>,
    /// `distances[i][j] = ‖θ_i − θ⁰_j‖`.
    pub distances: Vec<Vec<T>>,
}

impl<T: Scalar> VoronoiAssignment<T> {
    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    pub fn max_cell(&self) -> usize {
        self.cells.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Exponents `(κ₁, …, κ₅)` applied to `‖Δc‖, ‖ΔΓ‖, ‖Δa‖, |Δb|, |Δν|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaTuple<T>([T; 5]);

impl<T: Scalar> KappaTuple<T> {
    pub fn new(kappa: [T; 5]) -> Result<Self> {
        if kappa.iter().any(|&k| !(k > T::zero()) || !k.is_finite()) {
            return Err(Error::invalid("loss exponents must be positive"));
        }
        Ok(Self(kappa))
    }

    pub fn exact_fitted() -> Self {
        Self([T::one(); 5])
    }

    /// `(r̄, r̄/2, 2, r̄, r̄/2)`.
    pub fn over_fitted_bar(r: u32) -> Self {
        let r = T::lit(f64::from(r));
        let h = r / T::lit(2.0);
        Self([r, h, T::lit(2.0), r, h])
    }

    /// `(r̃, r̃/2, r̃/2, r̃, r̃/2)`.
    pub fn over_fitted_tilde(r: u32) -> Self {
        let r = T::lit(f64::from(r));
        let h = r / T::lit(2.0);
        Self([r, h, h, r, h])
    }

    pub fn as_array(&self) -> [T; 5] {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingKind {
    /// Every true gating location is nonzero.
    TypeI,
    /// At least one true gating location is zero.
    TypeII,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettingClass {
    pub kind: SettingKind,
    pub ktilde: usize,
    pub zero_indices: Vec<usize>,
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

fn check_dims<T: Scalar>(g: &MixingMeasure<T>, g0: &MixingMeasure<T>) -> Result<()> {
    if g.dim() != g0.dim() {
        return Err(Error::DimensionMismatch {
            what: "fitted vs true measure",
            expected: g0.dim(),
            got: g.dim(),
        });
    }
    Ok(())
}

pub fn assign_cells<T: Scalar>(g: &MixingMeasure<T>, g0: &MixingMeasure<T>) -> Result<VoronoiAssignment<T>> {
    check_dims(g, g0)?;
    let truth: Vec<Vec<T>> = g0.atoms().iter().map(Component::stacked).collect();
    let mut cells = vec![Vec::new(); g0.len()];
    let mut distances = Vec::with_capacity(g.len());
    for (i, atom) in g.atoms().iter().enumerate() {
        let theta = atom.stacked();
        let row: Vec<T> = truth.iter().map(|t| euclid(&theta, t)).collect();
        let mut best = 0;
        for (j, &dist) in row.iter().enumerate().skip(1) {
            if dist < row[best] {
                best = j;
            }
        }
        cells[best].push(i);
        distances.push(row);
    }
    Ok(VoronoiAssignment { cells, distances })
}

/// `r̄(m)`: 4 for `m = 2`, 6 for `m = 3`; only `r̄(m) ≥ 7` is known beyond.
pub fn rbar(m: usize) -> Result<u32> {
    match m {
        2 => Ok(4),
        3 => Ok(6),
        0 | 1 => Err(Error::invalid(format!("rbar is defined for m ≥ 2, got {m}"))),
        _ => Err(Error::UnsupportedOrder {
            family: "rbar",
            m,
            bound: "≥ 7",
        }),
    }
}

/// `r̃(m)`: 4 for `m = 2`, 6 for `m = 3`; beyond that only `r̃(m) ≤ r̄(m)` is known.
pub fn rtilde(m: usize) -> Result<u32> {
    match m {
        2 => Ok(4),
        3 => Ok(6),
        0 | 1 => Err(Error::invalid(format!("rtilde is defined for m ≥ 2, got {m}"))),
        _ => Err(Error::UnsupportedOrder {
            family: "rtilde",
            m,
            bound: "≤ rbar(m)",
        }),
    }
}

/// `r̄` / `r̃` lookup with optional user-asserted values for cell sizes the
/// built-in table does not cover.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderTable {
    pub rbar: BTreeMap<usize, u32>,
    pub rtilde: BTreeMap<usize, u32>,
}

impl OrderTable {
    pub fn rbar(&self, m: usize) -> Result<u32> {
        self.rbar.get(&m).copied().map_or_else(|| rbar(m), Ok)
    }

    pub fn rtilde(&self, m: usize) -> Result<u32> {
        self.rtilde.get(&m).copied().map_or_else(|| rtilde(m), Ok)
    }
}

/// `K_ij(κ)` between a fitted and a true atom.
pub fn kappa_k<T: Scalar>(comp: &Component<T>, comp0: &Component<T>, kap: &KappaTuple<T>) -> Result<T> {
    if comp.dim() != comp0.dim() {
        return Err(Error::DimensionMismatch {
            what: "atom dimension",
            expected: comp0.dim(),
            got: comp.dim(),
        });
    }
    let [k1, k2, k3, k4, k5] = kap.0;
    let dc = euclid(comp.c(), comp0.c());
    let dg = comp.gamma().sub(comp0.gamma()).frobenius_norm();
    let da = euclid(comp.a(), comp0.a());
    let db = (comp.b() - comp0.b()).abs();
    let dn = (comp.nu() - comp0.nu()).abs();
    Ok(dc.powf(k1) + dg.powf(k2) + da.powf(k3) + db.powf(k4) + dn.powf(k5))
}

/// Type I when every `‖c⁰_j‖ > zero_tol`, Type II otherwise.
pub fn classify_setting<T: Scalar>(g0: &MixingMeasure<T>, zero_tol: T) -> SettingClass {
    let zero_indices: Vec<usize> = g0
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.c().iter().map(|&v| v * v).sum::<T>().sqrt() <= zero_tol)
        .map(|(j, _)| j)
        .collect();
    SettingClass {
        kind: if zero_indices.is_empty() {
            SettingKind::TypeI
        } else {
            SettingKind::TypeII
        },
        ktilde: zero_indices.len(),
        zero_indices,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dbar,
    Dtilde,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dbar => "dbar",
            LossKind::Dtilde => "dtilde",
        }
    }
}

/// A loss value together with the cells it was computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEvaluation<T> {
    pub value: T,
    pub assignment: VoronoiAssignment<T>,
}

fn voronoi_loss<T: Scalar>(
    g: &MixingMeasure<T>,
    g0: &MixingMeasure<T>,
    zero_cells: &[usize],
    orders: &OrderTable,
) -> Result<LossEvaluation<T>> {
    let assignment = assign_cells(g, g0)?;
    let mut total = T::zero();
    for (j, cell) in assignment.cells.iter().enumerate() {
        let atom0 = &g0.atoms()[j];
        let kap = match cell.len() {
            0 | 1 => KappaTuple::exact_fitted(),
            m if zero_cells.contains(&j) => KappaTuple::over_fitted_tilde(orders.rtilde(m)?),
            m => KappaTuple::over_fitted_bar(orders.rbar(m)?),
        };
        let mut mass = T::zero();
        for &i in cell {
            let w = g.weights()[i];
            total += w * kappa_k(&g.atoms()[i], atom0, &kap)?;
            mass += w;
        }
        total += (mass - g0.weights()[j]).abs();
    }
    Ok(LossEvaluation { value: total, assignment })
}

/// `D̄(G, G₀)`.
pub fn loss_dbar<T: Scalar>(g: &MixingMeasure<T>, g0: &MixingMeasure<T>) -> Result<T> {
    loss_dbar_with(g, g0, &OrderTable::default()).map(|e| e.value)
}

pub fn loss_dbar_with<T: Scalar>(g: &MixingMeasure<T>, g0: &MixingMeasure<T>, orders: &OrderTable) -> Result<LossEvaluation<T>> {
    voronoi_loss(g, g0, &[], orders)
}

/// `D̃(G, G₀)` for the zero-location atoms listed in `setting`.
pub fn loss_dtilde<T: Scalar>(g: &MixingMeasure<T>, g0: &MixingMeasure<T>, setting: &SettingClass) -> Result<T> {
    loss_dtilde_with(g, g0, setting, &OrderTable::default()).map(|e| e.value)
}

pub fn loss_dtilde_with<T: Scalar>(
    g: &MixingMeasure<T>,
    g0: &MixingMeasure<T>,
    setting: &SettingClass,
    orders: &OrderTable,
) -> Result<LossEvaluation<T>> {
    if setting.zero_indices.iter().any(|&j| j >= g0.len()) || setting.ktilde != setting.zero_indices.len() {
        return Err(Error::invalid("setting does not describe the true measure"));
    }
    voronoi_loss(g, g0, &setting.zero_indices, orders)
}

/// Evaluates the requested loss; `None` selects `D̄` for Type I truths and `D̃` for Type II.
pub fn evaluate_loss<T: Scalar>(
    g: &MixingMeasure<T>,
    g0: &MixingMeasure<T>,
    kind: Option<LossKind>,
    zero_tol: T,
    orders: &OrderTable,
) -> Result<(LossKind, LossEvaluation<T>)> {
    let setting = classify_setting(g0, zero_tol);
    let kind = kind.unwrap_or(match setting.kind {
        SettingKind::TypeI => LossKind::Dbar,
        SettingKind::TypeII => LossKind::Dtilde,
    });
    let eval = match kind {
        LossKind::Dbar => loss_dbar_with(g, g0, orders)?,
        LossKind::Dtilde => loss_dtilde_with(g, g0, &setting, orders)?,
    };
    Ok((kind, eval))
}
