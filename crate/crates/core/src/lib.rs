//! Progressive GAN training engine for grayscale image synthesis.
//!
//! The crate is organized around a small CPU tensor library with reverse-mode
//! automatic differentiation (including differentiation through gradients,
//! which the gradient-penalty objective needs), progressive generator/critic
//! architectures with fade-in growth, the WGAN-GP objective family, a
//! deterministic training loop with checkpoint/resume, and quantitative
//! evaluation (MS-SSIM diversity and the multi-scale sliced Wasserstein
//! distance).

pub mod dataio;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod sampling;
pub mod tensor;
pub mod trainer;

/// Mammographic view label. Conditions the generator and is the target of
/// the critic's auxiliary label head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum View {
    /// Cranial-caudal.
    Cc,
    /// Mediolateral-oblique (contains the pectoral wedge).
    Mlo,
}

impl View {
    /// Index used for one-hot encodings and label heads: CC = 0, MLO = 1.
    pub fn index(self) -> usize {
        match self {
            View::Cc => 0,
            View::Mlo => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<View> {
        match i {
            0 => Some(View::Cc),
            1 => Some(View::Mlo),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Cc => "cc",
            View::Mlo => "mlo",
        }
    }
}

impl std::str::FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(View::Cc),
            "mlo" => Ok(View::Mlo),
            other => Err(format!("unknown view '{other}' (expected cc or mlo)")),
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
