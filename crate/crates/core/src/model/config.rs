use serde::{Deserialize, Serialize};

use crate::dynamics::{Method, SolverConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `dH/dt = (A - I) H + E`.
    Cgnn,
    /// `dH/dt = (A - I) H + H (W - I) + E`.
    CgnnWeight,
    /// `H_{k+1} = A H_k + E` for a fixed number of steps.
    CgnnDiscrete,
    /// `dH/dt = (A - I) H` from `H(0) = E`.
    CgnnNoRestart,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cgnn, Variant::CgnnWeight, Variant::CgnnDiscrete, Variant::CgnnNoRestart];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cgnn => "cgnn",
            Variant::CgnnWeight => "cgnn-weight",
            Variant::CgnnDiscrete => "cgnn-discrete",
            Variant::CgnnNoRestart => "cgnn-no-restart",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::OutOfRange(format!("unknown variant {name:?}")))
    }

    pub fn has_weight(self) -> bool {
        self == Variant::CgnnWeight
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

/// One learned `alpha` shared by all nodes, or one per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    Scalar,
    PerNode,
}

/// Everything that determines a training run apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// L2 penalty on the encoder and decoder weight matrices.
    pub weight_decay: f64,
    /// Input dropout probability.
    pub dropout: f64,
    /// Dropout after the decoder ReLU.
    pub decoder_dropout: f64,
    pub epochs: usize,
    /// Orthogonality retraction coefficient for `U`.
    pub beta: f64,
    pub t1: f64,
    pub seed: u64,
    pub hidden: usize,
    pub gamma: f64,
    pub alpha_init: f64,
    pub alpha_mode: AlphaMode,
    /// Initial value of every entry of `M`.
    pub eigen_init: f64,
    /// Doubles the state width with zero columns during integration.
    pub augment: bool,
    pub encoder_relu: bool,
    pub row_normalize: bool,
    pub solver: Method,
    /// Fixed-step count to `t1`; ignored when `solver_step` is set.
    pub solver_steps: usize,
    /// Explicit fixed step size.
    pub solver_step: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Propagation steps of the discrete variant.
    pub discrete_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cgnn,
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            decoder_dropout: 0.0,
            epochs: 400,
            beta: 0.5,
            t1: 10.0,
            seed: 0,
            hidden: 16,
            gamma: 0.5,
            alpha_init: 0.95,
            alpha_mode: AlphaMode::PerNode,
            eigen_init: 0.9,
            augment: true,
            encoder_relu: false,
            row_normalize: false,
            solver: Method::FixedRk4,
            solver_steps: crate::dynamics::DEFAULT_FIXED_STEPS,
            solver_step: None,
            rtol: 1e-3,
            atol: 1e-4,
            max_steps: 100_000,
            discrete_steps: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::OutOfRange(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be finite and >= 0", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        for (name, p) in [("dropout", self.dropout), ("decoder_dropout", self.decoder_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} not in [0, 1)"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1".into());
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta = {} must be >= 0", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} not in (0, 1]", self.gamma));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init < 1.0) {
            return bad(format!("alpha_init = {} not in (0, 1)", self.alpha_init));
        }
        if self.solver_steps == 0 || self.discrete_steps == 0 {
            return bad("solver_steps and discrete_steps must be >= 1".into());
        }
        if !self.eigen_init.is_finite() {
            return bad("eigen_init must be finite".into());
        }
        self.solver_config().validate()
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = match self.solver {
            Method::FixedRk4 => SolverConfig::fixed(self.t1, self.solver_steps),
            Method::AdaptiveRk45 => SolverConfig::adaptive(self.t1),
        };
        if let Some(step) = self.solver_step {
            cfg.step = step;
        }
        cfg.rtol = self.rtol;
        cfg.atol = self.atol;
        cfg.max_steps = self.max_steps;
        cfg
    }

    /// Width of the integrated state: `2 * hidden` when augmenting the
    /// weighted variant. Augmenting an unweighted variant is skipped because
    /// its extra block stays identically zero.
    pub fn state_width(&self) -> usize {
        if self.augment && self.variant.has_weight() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}
