use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KineticsParams, ReactorState, RodBankConfig};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BiasMode {
    /// Bias cancels the banks' worth at their initial positions.
    #[default]
    Critical,
    Fixed { pcm: f64 },
}

/// Engine configuration shared read-only by every run: kinetics parameters,
/// both rod banks and the criticality bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engine {
    pub params: KineticsParams,
    pub banks: [RodBankConfig; 2],
    pub bias_mode: BiasMode,
    /// Constant reactivity subtracted from the bank sum (pcm).
    pub bias: f64,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(
            KineticsParams::default(),
            [RodBankConfig::new(180.0), RodBankConfig::new(100.0)],
            BiasMode::Critical,
        )
        .expect("default engine is valid")
    }
}

impl Engine {
    pub fn new(params: KineticsParams, banks: [RodBankConfig; 2], bias_mode: BiasMode) -> Result<Self> {
        params.validate()?;
        for b in &banks {
            b.validate()?;
        }
        let bias = match bias_mode {
            BiasMode::Critical => banks
                .iter()
                .map(|b| b.worth.integral_unchecked(b.init_position))
                .sum(),
            BiasMode::Fixed { pcm } => {
                if !pcm.is_finite() {
                    return Err(domain("fixed bias must be finite"));
                }
                pcm
            }
        };
        Ok(Self {
            params,
            banks,
            bias_mode,
            bias,
        })
    }

    pub fn init_positions(&self) -> (f64, f64) {
        (self.banks[0].init_position, self.banks[1].init_position)
    }

    /// Net reactivity (pcm): bank worth plus `external`, less the bias and the
    /// power feedback `alpha_p * (power - 1)`.
    pub fn total_reactivity(&self, positions: [f64; 2], state: &ReactorState, external: f64) -> Result<f64> {
        let mut rods = 0.0;
        for (bank, &pos) in self.banks.iter().zip(&positions) {
            rods += super::bank_reactivity(&bank.worth, pos)?;
        }
        Ok(rods + external - self.bias - self.params.alpha_p * (state.power - 1.0))
    }

    /// Time-only part of the reactivity (bank worth less bias), unchecked.
    #[inline]
    pub(crate) fn rod_reactivity_unchecked(&self, positions: [f64; 2]) -> f64 {
        self.banks[0].worth.integral_unchecked(positions[0])
            + self.banks[1].worth.integral_unchecked(positions[1])
            - self.bias
    }

    /// Short hex digest of the canonical JSON form of the configuration.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_vec(self).expect("engine serializes");
        let digest = Sha256::digest(&canon);
        hex::encode(&digest[..8])
    }
}
