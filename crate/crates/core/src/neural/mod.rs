//! Dense network machinery: rectifier MLPs with exact backpropagation, Adam, and soft
//! target-network blending.

mod adam;
mod mlp;

pub use adam::AdamState;
pub use mlp::{ForwardCache, Layer, Mlp};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder applied to every feature row.
pub const PHI_SIZES: [usize; 3] = [3, 64, 32];
/// Width of one embedding produced by the encoder.
pub const EMBED_DIM: usize = 32;
/// Q head over the five concatenated embeddings.
pub const RHO_SIZES: [usize; 8] = [5 * EMBED_DIM, 64, 64, 64, 32, 16, 8, 3];

/// Encoder φ and Q head ρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub phi: Mlp,
    pub rho: Mlp,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            phi: Mlp::glorot(&PHI_SIZES, rng),
            rho: Mlp::glorot(&RHO_SIZES, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            phi: self.phi.zeros_like(),
            rho: self.rho.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.phi.tensors();
        t.extend(self.rho.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.phi.tensors_mut();
        t.extend(self.rho.tensors_mut());
        t
    }

    pub fn same_shape(&self, other: &QNetwork) -> bool {
        self.phi.sizes() == other.phi.sizes() && self.rho.sizes() == other.rho.sizes()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetUpdate {
    /// Blend the target toward the online network every training step.
    Soft { tau: f64 },
    /// Copy the online network into the target every `period` training steps.
    Hard { period: u64 },
}

impl Default for TargetUpdate {
    fn default() -> Self {
        TargetUpdate::Soft { tau: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkPair {
    pub online: QNetwork,
    pub target: QNetwork,
}

impl NetworkPair {
    /// Target starts as an exact copy of the online network.
    pub fn new(online: QNetwork) -> Self {
        Self {
            target: online.clone(),
            online,
        }
    }

    /// `target ← τ·online + (1−τ)·target`, elementwise.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        if !self.online.same_shape(&self.target) {
            return Err(Error::Contract("online and target networks differ in shape".into()));
        }
        for (t, o) in self.target.tensors_mut().into_iter().zip(self.online.tensors()) {
            for (t, o) in t.iter_mut().zip(o) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
        Ok(())
    }

    pub fn hard_update(&mut self) {
        self.target = self.online.clone();
    }
}
