//! Final action selection from the policy distribution and the judge output.
//!
//! Training samples the policy distribution directly. In evaluation, when
//! the judge has an opinion (target visible), the rule is:
//!
//! - terminate outright when `p_terminate + p_done >= 1.5`, where `p_done`
//!   is the policy's own Done probability;
//! - otherwise draw from the judge's binary output: a "terminate" draw
//!   samples the full policy distribution, a "continue" draw samples it
//!   with Done removed and renormalized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::judge::JudgeOutput;

/// Gate threshold on `p_terminate + p_done`; inclusive.
pub const DONE_GATE_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    Train,
    Eval,
}

/// Which branch of the decision rule produced the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    ThresholdDone,
    JudgeDThenPcon,
    JudgeNThenPsub,
    TrainBypass,
    NoJudgePcon,
}

impl RuleFired {
    pub fn name(self) -> &'static str {
        match self {
            RuleFired::ThresholdDone => "threshold_done",
            RuleFired::JudgeDThenPcon => "judge_d_then_pcon",
            RuleFired::JudgeNThenPsub => "judge_n_then_psub",
            RuleFired::TrainBypass => "train_bypass",
            RuleFired::NoJudgePcon => "no_judge_pcon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDecision {
    pub action: Action,
    pub rule_fired: RuleFired,
}

/// Remove the Done entry and renormalize over the five motion actions.
/// A degenerate distribution with all mass on Done falls back to uniform.
pub fn restrict_to_sub(p_con: &[f64; 6]) -> [f64; 5] {
    let mut out = [0.0; 5];
    let rest: f64 = p_con[..Action::DONE_INDEX].iter().sum();
    if rest <= 0.0 {
        return [0.2; 5];
    }
    for (o, p) in out.iter_mut().zip(p_con) {
        *o = p / rest;
    }
    out
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    probs.len() - 1
}

/// Decide the final action.
///
/// `judge` must be provided exactly when evaluating an effective state
/// (target visible); passing it in training mode is a contract violation.
pub fn decide_action(
    p_con: &[f64; 6],
    judge: Option<&JudgeOutput>,
    mode: ControlMode,
    rng: &mut impl Rng,
) -> Result<ActionDecision> {
    match mode {
        ControlMode::Train => {
            if judge.is_some() {
                return Err(Error::Contract(
                    "judge output supplied in training mode".to_string(),
                ));
            }
            let action = Action::from_index(sample_index(p_con, rng))?;
            Ok(ActionDecision {
                action,
                rule_fired: RuleFired::TrainBypass,
            })
        }
        ControlMode::Eval => match judge {
            None => {
                let action = Action::from_index(sample_index(p_con, rng))?;
                Ok(ActionDecision {
                    action,
                    rule_fired: RuleFired::NoJudgePcon,
                })
            }
            Some(out) => {
                let p_done = p_con[Action::DONE_INDEX];
                if out.p_terminate + p_done >= DONE_GATE_THRESHOLD {
                    return Ok(ActionDecision {
                        action: Action::Done,
                        rule_fired: RuleFired::ThresholdDone,
                    });
                }
                let terminate_drawn = rng.gen::<f64>() < out.p_terminate;
                if terminate_drawn {
                    let action = Action::from_index(sample_index(p_con, rng))?;
                    Ok(ActionDecision {
                        action,
                        rule_fired: RuleFired::JudgeDThenPcon,
                    })
                } else {
                    let p_sub = restrict_to_sub(p_con);
                    let action = Action::from_index(sample_index(&p_sub, rng))?;
                    Ok(ActionDecision {
                        action,
                        rule_fired: RuleFired::JudgeNThenPsub,
                    })
                }
            }
        },
    }
}
