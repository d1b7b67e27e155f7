//! Post-rewrite reflection: a cost verdict and a recipe-realization verdict
//! select one of four continuations.

use serde::{Deserialize, Serialize};

use crate::engine::RewriteTrace;
use crate::gateway::{prompts, Gateway, GatewayRequest, Schema};
use crate::recipes::Recipe;
use crate::sql::render_query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Complete,
    Continue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    I,
    Ii,
    Iii,
    Iv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Finalize,
    RestartRound,
    ReorderWithUnused,
    RestartAfterThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionDecision {
    pub cost_verdict: Verdict,
    pub recipe_verdict: Verdict,
    pub branch: Branch,
    pub action: Action,
    /// Reorder visits in this round, including this one when it reorders.
    pub revisits: usize,
}

/// Per-round counter of visits to the reorder path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundState {
    pub revisits: usize,
    pub threshold: usize,
}

impl RoundState {
    pub fn new(threshold: usize) -> Self {
        RoundState { revisits: 0, threshold }
    }
}

/// The branch table. Every cost-continue verdict counts as a visit to the
/// reorder path; with recipes also unrealized, once visits exceed the
/// threshold the round restarts instead.
pub fn decide(cost: Verdict, recipe: Verdict, state: &mut RoundState) -> ReflectionDecision {
    use Verdict::*;
    let (branch, action) = match (cost, recipe) {
        (Complete, Complete) => (Branch::I, Action::Finalize),
        (Complete, Continue) => (Branch::Ii, Action::RestartRound),
        (Continue, Complete) => {
            state.revisits += 1;
            (Branch::Iii, Action::ReorderWithUnused)
        }
        (Continue, Continue) => {
            state.revisits += 1;
            if state.revisits > state.threshold {
                (Branch::Iv, Action::RestartAfterThreshold)
            } else {
                (Branch::Iv, Action::ReorderWithUnused)
            }
        }
    };
    ReflectionDecision {
        cost_verdict: cost,
        recipe_verdict: recipe,
        branch,
        action,
        revisits: state.revisits,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeCheck {
    pub recipe: String,
    /// `None` when the check failed at the gateway.
    pub realized: Option<bool>,
}

/// Asks whether each recipe is realized by the rewrite. No recipes counts
/// as realized; a failed check counts as not realized.
pub fn check_recipes(recipes: &[Recipe], trace: &RewriteTrace, gateway: &Gateway) -> (Verdict, Vec<RecipeCheck>) {
    let original = render_query(&trace.input);
    let rewritten = render_query(&trace.output);
    let fired = trace.fired_ids().join(", ");
    let mut checks = Vec::new();
    for r in recipes {
        let request = GatewayRequest::new(prompts::REALIZATION, Schema::Realized)
            .var("recipe", r.text.clone())
            .var("original", original.clone())
            .var("rewritten", rewritten.clone())
            .var("fired", fired.clone());
        let realized = match gateway.complete_with(&request, |v| Ok(v["realized"].as_bool().unwrap_or(false))) {
            Ok((v, _)) => Some(v),
            Err(e) => {
                tracing::warn!(recipe = %r.id, error = %e, "realization check failed");
                None
            }
        };
        checks.push(RecipeCheck {
            recipe: r.id.clone(),
            realized,
        });
    }
    let all = checks.iter().all(|c| c.realized == Some(true));
    (if all { Verdict::Complete } else { Verdict::Continue }, checks)
}

pub fn cost_verdict(prev_cost: f64, new_cost: f64) -> Verdict {
    if new_cost < prev_cost {
        Verdict::Complete
    } else {
        Verdict::Continue
    }
}

pub fn reflect(
    prev_cost: f64,
    new_cost: f64,
    recipes: &[Recipe],
    trace: &RewriteTrace,
    state: &mut RoundState,
    gateway: &Gateway,
) -> (ReflectionDecision, Vec<RecipeCheck>) {
    let (recipe, checks) = check_recipes(recipes, trace, gateway);
    (decide(cost_verdict(prev_cost, new_cost), recipe, state), checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Verdict::*;

    #[test]
    fn branch_table() {
        let mut s = RoundState::new(2);
        assert_eq!(decide(Complete, Complete, &mut s).action, Action::Finalize);
        assert_eq!(decide(Complete, Continue, &mut s).action, Action::RestartRound);
        assert_eq!(s.revisits, 0);
        assert_eq!(decide(Continue, Complete, &mut s).action, Action::ReorderWithUnused);
        assert_eq!(s.revisits, 1);
    }

    #[test]
    fn threshold_transition() {
        let mut s = RoundState::new(2);
        assert_eq!(decide(Continue, Complete, &mut s).branch, Branch::Iii);
        assert_eq!(decide(Continue, Complete, &mut s).branch, Branch::Iii);
        let d = decide(Continue, Continue, &mut s);
        assert_eq!((d.branch, d.action, d.revisits), (Branch::Iv, Action::RestartAfterThreshold, 3));
    }

    #[test]
    fn cost_ties_continue() {
        assert_eq!(cost_verdict(10.0, 10.0), Continue);
        assert_eq!(cost_verdict(10.0, 9.0), Complete);
    }
}
