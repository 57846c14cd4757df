//! The four simulation truths.
//!
//! Models I and II have `d = 1`; III and IV have `d = 2` with `1_d` location
//! and slope vectors and `I_d` covariance structure. II and IV move the first
//! gating location to the origin and set its intercept to 0.3.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::SquareMatrix;
use crate::model::{Component, MixingMeasure};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Model1,
    Model2,
    Model3,
    Model4,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Model1, ModelId::Model2, ModelId::Model3, ModelId::Model4];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Model1 => "model1",
            ModelId::Model2 => "model2",
            ModelId::Model3 => "model3",
            ModelId::Model4 => "model4",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ModelId::Model1 | ModelId::Model2 => 1,
            ModelId::Model3 | ModelId::Model4 => 2,
        }
    }

    pub fn measure<T: Scalar>(self) -> MixingMeasure<T> {
        preset(self)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "model1" | "1" | "i" => Ok(ModelId::Model1),
            "model2" | "2" | "ii" => Ok(ModelId::Model2),
            "model3" | "3" | "iii" => Ok(ModelId::Model3),
            "model4" | "4" | "iv" => Ok(ModelId::Model4),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

const WEIGHTS: [f64; 3] = [0.3, 0.4, 0.3];
// (c, Γ, a, b, ν) per atom, as scalars multiplying 1_d / I_d
const ATOMS: [[f64; 5]; 3] = [[-0.1, 0.04, 0.40, 0.34, 0.01], [0.1, 0.02, -0.71, -0.33, 0.03], [0.5, 0.01, 0.0, 0.2, 0.02]];

/// The true mixing measure of a preset, with the published parameters.
pub fn preset<T: Scalar>(id: ModelId) -> MixingMeasure<T> {
    let d = id.dim();
    let zero_first = matches!(id, ModelId::Model2 | ModelId::Model4);
    let atoms = ATOMS
        .iter()
        .enumerate()
        .map(|(j, &[c, gamma, a, b, nu])| {
            let (c, b) = if zero_first && j == 0 { (0.0, 0.3) } else { (c, b) };
            Component::new(
                vec![T::lit(c); d],
                SquareMatrix::scaled_identity(d, T::lit(gamma)),
                vec![T::lit(a); d],
                T::lit(b),
                T::lit(nu),
            )
            .expect("preset parameters are valid")
        })
        .collect();
    MixingMeasure::new(WEIGHTS.iter().map(|&w| T::lit(w)).collect(), atoms).expect("preset weights sum to one")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voronoi::{classify_setting, SettingKind};

    #[test]
    fn model_one_parameters() {
        let g: MixingMeasure<f64> = preset(ModelId::Model1);
        assert_eq!(g.weights(), &[0.3, 0.4, 0.3]);
        let second = &g.atoms()[1];
        assert_eq!((second.c(), second.gamma()[(0, 0)], second.a(), second.b(), second.nu()), (&[0.1][..], 0.02, &[-0.71][..], -0.33, 0.03));
    }

    #[test]
    fn model_four_structure() {
        let g: MixingMeasure<f64> = preset(ModelId::Model4);
        assert_eq!(g.dim(), 2);
        assert_eq!(g.atoms()[0].c(), &[0.0, 0.0]);
        assert_eq!(g.atoms()[0].b(), 0.3);
        assert_eq!(g.atoms()[1].gamma(), &SquareMatrix::from_diag(&[0.02, 0.02]));
        assert_eq!(g.atoms()[2].a(), &[0.0, 0.0]);
    }

    #[test]
    fn settings_by_preset() {
        for (id, kind) in [
            (ModelId::Model1, SettingKind::TypeI),
            (ModelId::Model2, SettingKind::TypeII),
            (ModelId::Model3, SettingKind::TypeI),
            (ModelId::Model4, SettingKind::TypeII),
        ] {
            assert_eq!(classify_setting(&preset::<f64>(id), 1e-12).kind, kind, "{id}");
        }
    }

    #[test]
    fn parse_ids() {
        assert_eq!("Model3".parse::<ModelId>().unwrap(), ModelId::Model3);
        assert_eq!("iv".parse::<ModelId>().unwrap(), ModelId::Model4);
        assert!(matches!("model9".parse::<ModelId>(), Err(Error::UnknownPreset(_))));
    }
}
