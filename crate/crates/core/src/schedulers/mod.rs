//! Dispatching policies and their parameters.

pub mod binpack;
pub mod noah;
pub mod noncoop;
pub mod openwhisk;

use serde::{Deserialize, Serialize};

pub use binpack::{binpack_select, FitPolicy};
pub use noah::{AllocationMap, WorkerAction};
pub use noncoop::{best_reply, play_game, GameOutcome};
pub use openwhisk::ow_select_host;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvokerParams {
    /// concurrent instances per worker, as a multiple of its cores
    pub oversubscription: f64,
}

impl Default for InvokerParams {
    fn default() -> Self {
        Self { oversubscription: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenWhiskParams {
    pub busy_alpha: usize,
    pub oversubscription: f64,
}

impl Default for OpenWhiskParams {
    fn default() -> Self {
        Self {
            busy_alpha: 16,
            oversubscription: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoncoopParams {
    pub epsilon: f64,
    pub tick: f64,
    pub max_rounds: usize,
    pub oversubscription: f64,
    /// sliding window for rate measurements, seconds
    pub window: f64,
}

impl Default for NoncoopParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            tick: 0.1,
            max_rounds: 10_000,
            oversubscription: 2.0,
            window: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoahParams {
    /// waiting-time threshold in seconds, shared by all classes
    pub alpha: f64,
    /// per-class overrides of `alpha`
    pub class_alpha: Vec<Option<f64>>,
    pub tick: f64,
    /// concurrently executing instances per worker; defaults to the core count
    pub z_n: Option<usize>,
    /// pooled instances per worker; defaults to twice the core count
    pub z_c: Option<usize>,
    /// virtual allocations per worker; defaults to `z_n`
    pub alloc_cap: Option<usize>,
    pub bootstrap: usize,
    /// setup estimate used before a worker has served any event
    pub default_setup: f64,
    /// sliding window for rate measurements, seconds
    pub window: f64,
}

impl Default for NoahParams {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            class_alpha: Vec::new(),
            tick: 0.1,
            z_n: None,
            z_c: None,
            alloc_cap: None,
            bootstrap: 1,
            default_setup: 0.782,
            window: 10.0,
        }
    }
}

impl NoahParams {
    pub fn alpha_for(&self, class: usize) -> f64 {
        self.class_alpha.get(class).copied().flatten().unwrap_or(self.alpha)
    }

    /// Resolved (z_n, z_c, alloc_cap) for workers with `cores` cores.
    pub fn limits(&self, cores: usize) -> (usize, usize, usize) {
        let z_n = self.z_n.unwrap_or(cores);
        (z_n, self.z_c.unwrap_or(2 * cores), self.alloc_cap.unwrap_or(z_n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchedulerConfig {
    Openwhisk(OpenWhiskParams),
    FirstFit(InvokerParams),
    NextFit(InvokerParams),
    BestFit(InvokerParams),
    Noncoop(NoncoopParams),
    Noah(NoahParams),
}

impl SchedulerConfig {
    pub const NAMES: [&'static str; 6] = ["openwhisk", "first-fit", "next-fit", "best-fit", "noncoop", "noah"];

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "openwhisk" => Self::Openwhisk(Default::default()),
            "first-fit" => Self::FirstFit(Default::default()),
            "next-fit" => Self::NextFit(Default::default()),
            "best-fit" => Self::BestFit(Default::default()),
            "noncoop" => Self::Noncoop(Default::default()),
            "noah" => Self::Noah(Default::default()),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Openwhisk(_) => "openwhisk",
            Self::FirstFit(_) => "first-fit",
            Self::NextFit(_) => "next-fit",
            Self::BestFit(_) => "best-fit",
            Self::Noncoop(_) => "noncoop",
            Self::Noah(_) => "noah",
        }
    }

    /// Name plus the distinguishing parameter, for result files.
    pub fn label(&self) -> String {
        match self {
            Self::Noah(p) => format!("noah-a{:e}", p.alpha),
            other => other.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        match self {
            Self::Openwhisk(p) => {
                if p.busy_alpha == 0 {
                    return Err("busy_alpha must be at least 1".into());
                }
                positive("oversubscription", p.oversubscription)
            }
            Self::FirstFit(p) | Self::NextFit(p) | Self::BestFit(p) => positive("oversubscription", p.oversubscription),
            Self::Noncoop(p) => {
                positive("epsilon", p.epsilon)?;
                positive("tick", p.tick)?;
                positive("window", p.window)?;
                positive("oversubscription", p.oversubscription)?;
                if p.max_rounds == 0 {
                    return Err("max_rounds must be at least 1".into());
                }
                Ok(())
            }
            Self::Noah(p) => {
                positive("alpha", p.alpha)?;
                for a in p.class_alpha.iter().flatten() {
                    positive("class alpha", *a)?;
                }
                positive("tick", p.tick)?;
                positive("window", p.window)?;
                if [p.z_n, p.z_c, p.alloc_cap].contains(&Some(0)) {
                    return Err("z_n, z_c and alloc_cap must be at least 1".into());
                }
                if p.bootstrap == 0 {
                    return Err("bootstrap must be at least 1".into());
                }
                if p.default_setup < 0.0 {
                    return Err("default_setup must be non-negative".into());
                }
                Ok(())
            }
        }
    }
}
