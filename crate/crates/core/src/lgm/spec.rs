use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gmrf::{scaled_hyperprior, ScaledHyperprior, StructureMatrix, A_MARG, B_MARG};

/// Random-effect blocks of the smoothing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Effect {
    /// IID over periods.
    Alpha,
    /// Random walk over periods.
    Gamma,
    /// IID over regions.
    Theta,
    /// ICAR over regions.
    Phi,
    /// IID region-period interaction.
    Delta,
    NuS,
    NuTs,
    NuIs,
    NuIts,
}

impl Effect {
    pub const ALL: [Effect; 9] = [
        Effect::Alpha,
        Effect::Gamma,
        Effect::Theta,
        Effect::Phi,
        Effect::Delta,
        Effect::NuS,
        Effect::NuTs,
        Effect::NuIs,
        Effect::NuIts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Effect::Alpha => "alpha",
            Effect::Gamma => "gamma",
            Effect::Theta => "theta",
            Effect::Phi => "phi",
            Effect::Delta => "delta",
            Effect::NuS => "nu_s",
            Effect::NuTs => "nu_ts",
            Effect::NuIs => "nu_is",
            Effect::NuIts => "nu_its",
        }
    }

    pub fn is_survey(self) -> bool {
        matches!(self, Effect::NuS | Effect::NuTs | Effect::NuIs | Effect::NuIts)
    }

    /// Whether the block enters the U5MR target (survey blocks do not).
    pub fn in_target(self) -> bool {
        !self.is_survey()
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Effect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Effect::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown effect '{s}'")))
    }
}

/// Linear predictors I to VI. All share `mu + alpha + gamma + theta + phi +
/// delta`; II to VI add survey blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [ModelId::I, ModelId::II, ModelId::III, ModelId::IV, ModelId::V, ModelId::VI];

    pub fn effects(self) -> Vec<Effect> {
        use Effect::*;
        let mut e = vec![Alpha, Gamma, Theta, Phi, Delta];
        match self {
            ModelId::I => {}
            ModelId::II => e.push(NuS),
            ModelId::III => e.extend([NuS, NuIs]),
            ModelId::IV => e.extend([NuS, NuTs]),
            ModelId::V => e.extend([NuS, NuTs, NuIs]),
            ModelId::VI => e.extend([NuS, NuTs, NuIs, NuIts]),
        }
        e
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
            ModelId::V => "V",
            ModelId::VI => "VI",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown model id '{s}'; valid ids are I, II, III, IV, V, VI")))
    }
}

/// Which model to fit: linear predictor, random-walk order (1 gives the
/// "a" variant, 2 the "b" variant), per-effect hyperprior overrides and
/// sum-to-zero toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub rw_order: usize,
    pub hyperpriors: BTreeMap<Effect, ScaledHyperprior>,
    pub constraints: BTreeMap<Effect, bool>,
    /// Target marginal Gamma(a, b) used for every block without an override.
    pub marginal_prior: (f64, f64),
}

impl ModelSpec {
    pub fn new(model_id: ModelId, rw_order: usize) -> Result<Self> {
        if rw_order != 1 && rw_order != 2 {
            return Err(Error::Spec(format!("rw order must be 1 or 2, got {rw_order}")));
        }
        Ok(Self {
            model_id,
            rw_order,
            hyperpriors: BTreeMap::new(),
            constraints: BTreeMap::new(),
            marginal_prior: (A_MARG, B_MARG),
        })
    }

    /// Parses labels such as `"Vb"` or `"IIa"`.
    pub fn parse_label(label: &str) -> Result<Self> {
        let label = label.trim();
        let (id, order) = match label.chars().last() {
            Some('a') | Some('A') => (&label[..label.len() - 1], 1),
            Some('b') | Some('B') => (&label[..label.len() - 1], 2),
            _ => {
                label.parse::<ModelId>()?;
                return Err(Error::Spec(format!(
                    "model label '{label}' must end in 'a' (RW1) or 'b' (RW2), e.g. Vb"
                )));
            }
        };
        Self::new(id.parse()?, order)
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.model_id, if self.rw_order == 1 { "a" } else { "b" })
    }

    /// Ia..VIa followed by Ib..VIb.
    pub fn all_twelve() -> Vec<ModelSpec> {
        [1, 2]
            .into_iter()
            .flat_map(|o| ModelId::ALL.into_iter().map(move |m| ModelSpec::new(m, o).expect("valid order")))
            .collect()
    }

    pub fn effects(&self) -> Vec<Effect> {
        self.model_id.effects()
    }

    pub fn constrained(&self, effect: Effect) -> bool {
        self.constraints.get(&effect).copied().unwrap_or(true)
    }

    /// Override if present, otherwise the marginal target scaled by the
    /// block's average marginal variance.
    pub fn hyperprior(&self, effect: Effect, structure: &StructureMatrix) -> ScaledHyperprior {
        if let Some(h) = self.hyperpriors.get(&effect) {
            return *h;
        }
        let (a, b) = self.marginal_prior;
        scaled_hyperprior(structure, a, b)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
