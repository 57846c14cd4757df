//! Total variation distance between two GMoE joint densities.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{to_joint_gaussian, MixingMeasure};
use crate::rng::derive_seed;
use crate::sampler::sample;
use crate::{Error, Result};

/// Half-width of the integration box in joint standard deviations; each
/// atom leaves at most `2·P(|Z| > 5.5) ≈ 7.6e-8` of its mass outside.
const BOX_SDS: f64 = 5.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvMethod {
    /// Midpoint rule on a `budget × budget` grid over `(x, y)`; `d = 1` only.
    Grid,
    /// `budget` Monte Carlo draws, half from each density.
    Mc,
}

impl FromStr for TvMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grid" => Ok(TvMethod::Grid),
            "mc" => Ok(TvMethod::Mc),
            other => Err(Error::Parse(format!("unknown TV method '{other}' (expected grid or mc)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    /// Monte Carlo standard error; `None` for the grid rule.
    pub stderr: Option<f64>,
}

pub fn tv_distance(g1: &MixingMeasure<f64>, g2: &MixingMeasure<f64>, method: TvMethod, budget: usize, seed: u64) -> Result<TvEstimate> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            what: "TV between measures",
            expected: g1.dim(),
            got: g2.dim(),
        });
    }
    if budget < 2 {
        return Err(Error::invalid("TV budget must be at least 2"));
    }
    match method {
        TvMethod::Grid => tv_grid(g1, g2, budget).map(|value| TvEstimate { value, stderr: None }),
        TvMethod::Mc => Ok(tv_mc(g1, g2, budget, seed)),
    }
}

/// `½ Σ |p₁ − p₂| · cell area` over a box covering every atom of both measures.
pub fn tv_grid(g1: &MixingMeasure<f64>, g2: &MixingMeasure<f64>, cells: usize) -> Result<f64> {
    if g1.dim() != 1 || g2.dim() != 1 {
        return Err(Error::Unsupported("grid TV is only available for d = 1".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for atom in g1.atoms().iter().chain(g2.atoms()) {
        let jg = to_joint_gaussian(atom);
        for axis in 0..2 {
            let half = BOX_SDS * jg.sigma()[(axis, axis)].sqrt();
            lo[axis] = lo[axis].min(jg.psi()[axis] - half);
            hi[axis] = hi[axis].max(jg.psi()[axis] + half);
        }
    }
    let hx = (hi[0] - lo[0]) / cells as f64;
    let hy = (hi[1] - lo[1]) / cells as f64;
    let mut total = 0.0;
    for i in 0..cells {
        let x = [lo[0] + (i as f64 + 0.5) * hx];
        let mut column = 0.0;
        for j in 0..cells {
            let y = lo[1] + (j as f64 + 0.5) * hy;
            let p1 = g1.log_density(&x, y)?.exp();
            let p2 = g2.log_density(&x, y)?.exp();
            column += (p1 - p2).abs();
        }
        total += column;
    }
    Ok(0.5 * total * hx * hy)
}

/// Importance estimate under the even mixture `m = (p₁ + p₂)/2`:
/// `TV = E_m |p₁ − p₂| / (p₁ + p₂)`, drawn stratified half from each density.
pub fn tv_mc(g1: &MixingMeasure<f64>, g2: &MixingMeasure<f64>, draws: usize, seed: u64) -> TvEstimate {
    let half = (draws / 2).max(1);
    let mut means = [0.0; 2];
    let mut vars = [0.0; 2];
    for (s, g) in [g1, g2].into_iter().enumerate() {
        let data = sample(g, half, derive_seed(seed, &[s as u64]));
        let h: Vec<f64> = data
            .rows()
            .map(|(x, y)| {
                let l1 = g1.log_density(x, y).expect("dimensions checked");
                let l2 = g2.log_density(x, y).expect("dimensions checked");
                // |p₁ − p₂| / (p₁ + p₂) = |tanh((l₁ − l₂)/2)|
                if l1 == l2 {
                    0.0
                } else {
                    (0.5 * (l1 - l2)).tanh().abs()
                }
            })
            .collect();
        let mean = h.iter().sum::<f64>() / half as f64;
        means[s] = mean;
        vars[s] = if half > 1 {
            h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (half - 1) as f64
        } else {
            0.0
        };
    }
    TvEstimate {
        value: 0.5 * (means[0] + means[1]),
        stderr: Some(0.5 * ((vars[0] + vars[1]) / half as f64).sqrt()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::presets::ModelId;
    use crate::model::Component;

    fn single(b: f64) -> MixingMeasure<f64> {
        MixingMeasure::new(vec![1.0], vec![Component::scalar(0.3, 0.5, 0.8, b, 1.0).unwrap()]).unwrap()
    }

    #[test]
    fn identical_measures() {
        let g = ModelId::Model1.measure();
        assert!(tv_distance(&g, &g, TvMethod::Grid, 200, 0).unwrap().value.abs() < 1e-12);
        assert_eq!(tv_distance(&g, &g, TvMethod::Mc, 200, 0).unwrap().value, 0.0);
    }

    #[test]
    fn grid_rejects_two_dimensions() {
        let g = ModelId::Model3.measure();
        assert!(matches!(tv_distance(&g, &g, TvMethod::Grid, 100, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bounded_by_one() {
        let far = MixingMeasure::new(vec![1.0], vec![Component::scalar(40.0, 0.5, 0.0, 0.0, 1.0).unwrap()]).unwrap();
        let v = tv_grid(&single(0.0), &far, 400).unwrap();
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }
}
