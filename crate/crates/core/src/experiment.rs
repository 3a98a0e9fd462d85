//! End-to-end toy experiment: generate the three domains, pre-train on `A`,
//! fine-tune on `B`, evaluate on `A`, `B` and `C`.

use crate::error::Result;
use crate::matcher::MatcherParams;
use crate::synth::{make_dataset, Domain, DomainSpec, Sample};
use crate::trainer::{ablation_suite, finetune, pretrain, AblationRow, EvalSet, RunReport, Strategy, TrainConfig};

/// Data and pre-training settings of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub width: usize,
    pub height: usize,
    pub n_pretrain: usize,
    pub n_finetune: usize,
    /// Evaluation samples per domain.
    pub n_eval: usize,
    pub data_seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            n_pretrain: 200,
            n_finetune: 100,
            n_eval: 20,
            data_seed: 2024,
            pretrain_steps: 2000,
            pretrain_lr: 0.5,
        }
    }
}

/// Base seeds of the generated sets; training and evaluation never overlap.
mod seeds {
    pub const PRETRAIN: u64 = 0;
    pub const FINETUNE: u64 = 100_000;
    pub const EVAL: u64 = 200_000;
}

/// Generated datasets of one experiment.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub pretrain: Vec<Sample>,
    pub finetune: Vec<Sample>,
    /// One evaluation set per domain, in `A`, `B`, `C` order.
    pub eval: Vec<(Domain, Vec<Sample>)>,
}

impl Datasets {
    pub fn generate(exp: &ExperimentConfig, d_max: usize) -> Result<Self> {
        let spec = |d| DomainSpec::preset(d, exp.width, exp.height);
        for d in Domain::ALL {
            spec(d).check_d_max(d_max)?;
        }
        let seed = |base: u64| exp.data_seed.wrapping_mul(1_000_003).wrapping_add(base);
        let pretrain = make_dataset(&spec(Domain::APretrain), exp.n_pretrain, seed(seeds::PRETRAIN))?;
        let finetune = make_dataset(&spec(Domain::BTarget), exp.n_finetune, seed(seeds::FINETUNE))?;
        let eval = Domain::ALL
            .iter()
            .map(|&d| Ok((d, make_dataset(&spec(d), exp.n_eval, seed(seeds::EVAL))?)))
            .collect::<Result<_>>()?;
        Ok(Self { pretrain, finetune, eval })
    }

    pub fn eval_sets(&self) -> Vec<EvalSet<'_>> {
        self.eval.iter().map(|(d, s)| EvalSet { name: d.short_name(), samples: s }).collect()
    }
}

/// Pre-training config derived from the fine-tuning config.
pub fn pretrain_config(exp: &ExperimentConfig, cfg: &TrainConfig) -> TrainConfig {
    TrainConfig { steps: exp.pretrain_steps, lr: exp.pretrain_lr, ..cfg.clone() }
}

/// Datasets plus pre-trained weights, shared by every fine-tuning run.
pub struct Prepared {
    pub data: Datasets,
    pub pretrained: MatcherParams,
}

pub fn prepare(exp: &ExperimentConfig, cfg: &TrainConfig) -> Result<Prepared> {
    let data = Datasets::generate(exp, cfg.d_max)?;
    let pretrained = pretrain(&pretrain_config(exp, cfg), &data.pretrain)?;
    Ok(Prepared { data, pretrained })
}

impl Prepared {
    pub fn finetune(&self, strategy: Strategy, cfg: &TrainConfig) -> Result<RunReport> {
        finetune(strategy, cfg, &self.pretrained, &self.data.finetune, &self.data.eval_sets())
    }

    pub fn ablate(&self, strategies: &[Strategy], cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
        ablation_suite(strategies, cfg, &self.pretrained, &self.data.finetune, &self.data.eval_sets())
    }
}
