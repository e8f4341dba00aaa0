//! Ablation experiments: groups of agent configurations trained and
//! evaluated under one profile, and the comparison table across them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, EpisodeResult, MetricsReport};
use super::run::evaluate_agent;
use crate::agent::{Agent, AgentConfig, EncoderArm, FusionFlags, PointerArm, TraceStep};
use crate::autodiff::ParamStore;
use crate::config::Profile;
use crate::error::{Error, Result};
use crate::pipeline::build_agent;
use crate::trainer::{train_agent, TrainSummary};
use crate::world::{Dataset, Episode, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Encoder,
    Pointer,
    Policy,
    Memory,
    Fusion,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [Self::Encoder, Self::Pointer, Self::Policy, Self::Memory, Self::Fusion];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Encoder => "encoder",
            Self::Pointer => "pointer",
            Self::Policy => "policy",
            Self::Memory => "memory",
            Self::Fusion => "fusion",
        }
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// One row of an ablation: an agent configuration and how it decides at
/// inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub agent: AgentConfig,
    pub fusion: FusionFlags,
}

/// The arms of one ablation axis, varying `base` along that axis only.
/// Architecture arms decide from the policy logits alone; the fusion axis
/// shares one trained agent across its four rows.
pub fn ablation_arms(kind: AblationKind, base: &AgentConfig) -> Vec<Arm> {
    let arm = |name: &str, agent: AgentConfig, fusion| Arm { name: name.to_string(), agent, fusion };
    let with = |f: &dyn Fn(&mut AgentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match kind {
        AblationKind::Encoder => vec![
            arm("simple-recurrent", with(&|c| c.encoder = EncoderArm::SimpleRecurrent), FusionFlags::NONE),
            arm("scratch-encoder", with(&|c| c.encoder = EncoderArm::Scratch), FusionFlags::NONE),
            arm("scene-grounded", with(&|c| c.encoder = EncoderArm::SceneGrounded), FusionFlags::NONE),
        ],
        AblationKind::Pointer => vec![
            arm("none-proxy", with(&|c| c.pointer = PointerArm::NoneProxy), FusionFlags::NONE),
            arm("object-grounded", with(&|c| c.pointer = PointerArm::ObjectGrounded), FusionFlags::NONE),
        ],
        AblationKind::Policy => vec![
            arm("no-memory", with(&|c| (c.n_mem, c.n_state) = (0, 0)), FusionFlags::NONE),
            arm("memory", with(&|c| (c.n_mem, c.n_state) = (3, 3)), FusionFlags::NONE),
        ],
        AblationKind::Memory => [1, 3, 5, 7, 9]
            .into_iter()
            .map(|n| arm(&format!("memory ({n},{n})"), with(&|c| (c.n_mem, c.n_state) = (n, n)), FusionFlags::NONE))
            .collect(),
        AblationKind::Fusion => vec![
            arm("logits only", base.clone(), FusionFlags::NONE),
            arm("+ scene grounding", base.clone(), FusionFlags { scene: true, object: false }),
            arm("+ object grounding", base.clone(), FusionFlags { scene: false, object: true }),
            arm("+ both", base.clone(), FusionFlags::BOTH),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub metrics: MetricsReport,
    pub results: Vec<EpisodeResult>,
    pub traces: Vec<TraceStep>,
    pub train: TrainSummary,
}

/// Trains each distinct agent configuration once and evaluates every arm on
/// `episodes`. Deterministic given the profile.
pub struct Experiment<'a> {
    pub profile: &'a Profile,
    pub dataset: &'a Dataset,
    pub vocab: &'a Vocab,
    pub scene: Option<&'a ParamStore>,
    pub object: Option<&'a ParamStore>,
    trained: HashMap<String, (Agent, TrainSummary)>,
}

impl<'a> Experiment<'a> {
    pub fn new(profile: &'a Profile, dataset: &'a Dataset, vocab: &'a Vocab, scene: Option<&'a ParamStore>, object: Option<&'a ParamStore>) -> Self {
        Experiment { profile, dataset, vocab, scene, object, trained: HashMap::new() }
    }

    fn trained(&mut self, cfg: &AgentConfig) -> Result<&(Agent, TrainSummary)> {
        let key = serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
        if !self.trained.contains_key(&key) {
            let mut agent = build_agent(self.profile, cfg, self.dataset, self.vocab, self.scene, self.object)?;
            let ds = self.dataset;
            let summary = train_agent(&mut agent, &ds.worlds, &ds.train, &ds.val_seen, &self.profile.train, None)?;
            self.trained.insert(key.clone(), (agent, summary));
        }
        Ok(&self.trained[&key])
    }

    pub fn run_arm(&mut self, arm: &Arm, episodes: &[Episode]) -> Result<ArmOutcome> {
        let worlds = &self.dataset.worlds;
        let (agent, summary) = self.trained(&arm.agent)?;
        let (results, traces) = evaluate_agent(agent, worlds, episodes, arm.fusion)?;
        Ok(ArmOutcome { arm: arm.clone(), metrics: compute_metrics(&results)?, results, traces, train: summary.clone() })
    }

    pub fn run(&mut self, kind: AblationKind, episodes: &[Episode]) -> Result<Vec<ArmOutcome>> {
        ablation_arms(kind, &self.profile.agent).iter().map(|arm| self.run_arm(arm, episodes)).collect()
    }
}

/// Fixed-width comparison table, metrics in percent except length.
pub fn comparison_table(title: &str, outcomes: &[ArmOutcome]) -> String {
    let mut out = format!("{title}\n{:<22} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "arm", "SR", "OSR", "SPL", "Length", "RGS", "RG-SPL");
    for o in outcomes {
        let m = &o.metrics;
        let _ = writeln!(
            out,
            "{:<22} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            o.arm.name,
            100.0 * m.success,
            100.0 * m.oracle_success,
            100.0 * m.spl,
            m.length,
            100.0 * m.rgs,
            100.0 * m.rg_spl
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_structure() {
        let base = AgentConfig::default();
        assert_eq!(ablation_arms(AblationKind::Fusion, &base).len(), 4);
        let mem: Vec<(usize, usize)> = ablation_arms(AblationKind::Memory, &base).iter().map(|a| (a.agent.n_mem, a.agent.n_state)).collect();
        assert_eq!(mem, vec![(1, 1), (3, 3), (5, 5), (7, 7), (9, 9)]);
        assert_eq!(ablation_arms(AblationKind::Encoder, &base).len(), 3);
        assert_eq!(ablation_arms(AblationKind::Pointer, &base).len(), 2);
        assert_eq!(ablation_arms(AblationKind::Policy, &base)[0].agent.n_mem, 0);
        assert_eq!("memory".parse::<AblationKind>().unwrap(), AblationKind::Memory);
        assert!("nope".parse::<AblationKind>().is_err());
    }
}
