use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dsl::{catalogue, parse, FactorExpr};
use crate::logic::{canonicalize_fields, check, compile, ConstraintSet, MarketLogic, MarketLogicStruct, Provenance};

use super::{call_agent, AgentConfig, AgentError, AgentName, AgentResponse, CompletionBackend, Result};

/// Agent operations over one backend.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    backend: &'a dyn CompletionBackend,
    pub config: AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Canonicalized {
    pub h_struct: MarketLogicStruct,
    /// Compiled locally; the agent's own Gamma is kept only for reference.
    pub gamma: ConstraintSet,
    pub agent_gamma: Value,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFactor {
    pub expression: FactorExpr,
    /// Canonical text of `expression`.
    pub text: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub expression: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub factors: Vec<GeneratedFactor>,
    pub rejected: Vec<Rejected>,
    /// Rejected expressions charged to the regeneration budget.
    pub regenerations: usize,
    pub calls: usize,
}

/// Validation metrics for one candidate as sent to the feedback agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetrics {
    pub expression: String,
    pub ic: f64,
    pub ir: f64,
    pub mdd: f64,
}

impl CandidateMetrics {
    fn to_payload(&self) -> Value {
        json!({"expression": self.expression, "metrics": {"IC": self.ic, "IR": self.ir, "MDD": self.mdd}})
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub best_expression: String,
    pub key_metrics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub action: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorFeedback {
    pub summary: FeedbackSummary,
    pub feedback: Vec<String>,
    pub suggested_edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementAction {
    pub action: String,
    pub target: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub refinement_actions: Vec<RefinementAction>,
    pub focus_variables: Vec<String>,
    pub horizon_suggestion: String,
    pub rationale: String,
}

/// Conditioning context for logic generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogicContext {
    pub library: Vec<String>,
    pub current: Option<String>,
    pub history: Vec<String>,
    pub evidence: Vec<Value>,
    pub feedback: Vec<Value>,
    pub round: u32,
}

#[derive(Deserialize)]
struct Component {
    name: String,
    expression: String,
    mathematical_meaning: String,
}

#[derive(Deserialize)]
struct LogicTexts {
    logic_text: String,
    c_text: String,
    b_text: String,
}

#[derive(Deserialize)]
struct FactorReply {
    factors: Vec<FactorItem>,
}

#[derive(Deserialize)]
struct FactorItem {
    expression: String,
    rationale: String,
}

fn decode<T: serde::de::DeserializeOwned>(r: &AgentResponse) -> Result<T> {
    serde_json::from_value(r.output_payload.clone())
        .map_err(|e| AgentError::Invariant { stage: r.agent_name, message: e.to_string() })
}

impl<'a> Agents<'a> {
    pub fn new(backend: &'a dyn CompletionBackend, config: AgentConfig) -> Self {
        Agents { backend, config }
    }

    pub fn call(&self, agent: AgentName, payload: Value) -> Result<AgentResponse> {
        call_agent(agent, payload, self.backend, self.config.max_retries)
    }

    /// Formula to market logic through the structure, semantics and
    /// abstraction stages. The semantics stage must echo each component's
    /// mathematical meaning unchanged.
    pub fn mine_logic(&self, id: &str, formula: &str) -> Result<MarketLogic> {
        parse(formula).map_err(|e| AgentError::Precondition(format!("formula does not parse: {e}")))?;
        let library = catalogue().render_library();
        let structure = self.call(
            AgentName::FormulaStructureAgent,
            json!({"formula": formula, "factor_operations_library": library}),
        )?;
        let semantics = self.call(
            AgentName::FinancialSemanticsMappingAgent,
            json!({
                "factor_formula": formula,
                "mathematical_analysis": {"components": structure.output_payload["components"].clone()},
                "factor_operations_library": library,
            }),
        )?;
        let before: Vec<Component> = serde_json::from_value(structure.output_payload["components"].clone())
            .map_err(|e| AgentError::Invariant { stage: AgentName::FormulaStructureAgent, message: e.to_string() })?;
        let after: Vec<Component> = serde_json::from_value(semantics.output_payload["components"].clone())
            .map_err(|e| AgentError::Invariant { stage: AgentName::FinancialSemanticsMappingAgent, message: e.to_string() })?;
        let stage = AgentName::FinancialSemanticsMappingAgent;
        if before.len() != after.len() {
            return Err(AgentError::Invariant {
                stage,
                message: format!("{} components in, {} out", before.len(), after.len()),
            });
        }
        for (b, a) in before.iter().zip(&after) {
            if (&b.name, &b.expression, &b.mathematical_meaning) != (&a.name, &a.expression, &a.mathematical_meaning) {
                return Err(AgentError::Invariant {
                    stage,
                    message: format!("component {:?} changed its mathematical meaning or identity", b.name),
                });
            }
        }
        let abstraction = self.call(
            AgentName::MarketLogicAbstractionAgent,
            json!({"component_analysis": {"components": semantics.output_payload["components"].clone()}}),
        )?;
        let t: LogicTexts = decode(&abstraction)?;
        Ok(MarketLogic::new(id, Provenance::Mined, t.logic_text, t.c_text, t.b_text)?)
    }

    /// Structured form from the agent, then local canonicalization and
    /// compilation.
    pub fn canonicalize(&self, h: &MarketLogic) -> Result<Canonicalized> {
        let r = self.call(
            AgentName::LogicToFinanceConstraintAgent,
            json!({
                "logic_text": h.logic_text,
                "c_text": h.c_text,
                "b_text": h.b_text,
                "dsl_operators": catalogue().callable_names(),
            }),
        )?;
        let h_struct = canonicalize_fields(&r.output_payload)?;
        let gamma = compile(&h_struct)?;
        Ok(Canonicalized {
            h_struct,
            gamma,
            agent_gamma: r.output_payload["Gamma"].clone(),
            notes: r.output_payload["canonicalization_notes"].as_str().unwrap_or_default().to_string(),
        })
    }

    /// Candidates that parse and pass `check` against `gamma`, at most
    /// `max_candidates`. Each rejected expression is charged to the
    /// regeneration budget; the agent is asked again only while nothing
    /// valid has been returned and budget remains.
    pub fn generate_factors(
        &self,
        gamma: &ConstraintSet,
        feedback: Option<&Value>,
        max_candidates: usize,
    ) -> Result<Generation> {
        if max_candidates == 0 {
            return Err(AgentError::Precondition("max_candidates must be positive".into()));
        }
        let mut out = Generation { factors: Vec::new(), rejected: Vec::new(), regenerations: 0, calls: 0 };
        loop {
            let fb = if out.calls == 0 {
                feedback.cloned().unwrap_or(Value::Null)
            } else {
                json!({"previous_feedback": feedback.cloned().unwrap_or(Value::Null), "rejected": out.rejected})
            };
            let r = self.call(
                AgentName::FactorExpressionGeneratorAgent,
                json!({"Gamma": gamma.to_agent_json(), "feedback": fb, "max_candidates": max_candidates}),
            )?;
            out.calls += 1;
            let reply: FactorReply = decode(&r)?;
            let before = out.rejected.len();
            for item in reply.factors {
                if out.factors.len() == max_candidates {
                    break;
                }
                let expr = match parse(&item.expression) {
                    Ok(e) => e,
                    Err(e) => {
                        out.rejected.push(Rejected { expression: item.expression, reason: e.to_string() });
                        continue;
                    }
                };
                let report = check(&expr, gamma);
                if !report.ok {
                    out.rejected.push(Rejected { expression: item.expression, reason: report.summary() });
                    continue;
                }
                let text = expr.to_string();
                if out.factors.iter().any(|f| f.text == text) {
                    continue;
                }
                out.factors.push(GeneratedFactor { expression: expr, text, rationale: item.rationale });
            }
            // an empty reply costs one unit so the loop always ends
            out.regenerations += (out.rejected.len() - before).max(usize::from(out.factors.is_empty()));
            if !out.factors.is_empty() {
                return Ok(out);
            }
            if out.regenerations >= self.config.regeneration_budget {
                return Err(AgentError::NoValidCandidates { regenerations: out.regenerations, rejected: out.rejected });
            }
        }
    }

    pub fn factor_feedback(&self, h_struct: &MarketLogicStruct, candidates: &[CandidateMetrics]) -> Result<FactorFeedback> {
        if candidates.is_empty() {
            return Err(AgentError::Precondition("feedback needs at least one evaluated candidate".into()));
        }
        let r = self.call(
            AgentName::FactorPerformanceFeedbackAgent,
            json!({
                "H_struct": serde_json::to_value(h_struct).expect("logic serializes"),
                "candidates": candidates.iter().map(CandidateMetrics::to_payload).collect::<Vec<_>>(),
            }),
        )?;
        decode(&r)
    }

    /// A new logic. Round 1 must carry the library only.
    pub fn generate_logic(&self, id: &str, ctx: &LogicContext) -> Result<MarketLogic> {
        if ctx.round == 0 {
            return Err(AgentError::Precondition("rounds start at 1".into()));
        }
        if ctx.round == 1
            && (ctx.current.is_some() || !ctx.history.is_empty() || !ctx.evidence.is_empty() || !ctx.feedback.is_empty())
        {
            return Err(AgentError::Precondition("round 1 conditions on the library alone".into()));
        }
        let r = self.call(
            AgentName::MarketLogicGeneratorAgent,
            json!({
                "H_init_lib": ctx.library,
                "H_current": ctx.current,
                "H_hist": ctx.history,
                "E_hist": ctx.evidence,
                "fb_hist": ctx.feedback,
                "round": ctx.round,
            }),
        )?;
        let t: LogicTexts = decode(&r)?;
        let provenance = if ctx.round == 1 { Provenance::Generated } else { Provenance::Refined };
        Ok(MarketLogic::new(id, provenance, t.logic_text, t.c_text, t.b_text)?)
    }

    pub fn refinement_direction(
        &self,
        current: &str,
        history: &[String],
        evidence: &[Value],
        feedback_history: &[Value],
    ) -> Result<RefinementRecord> {
        let r = self.call(
            AgentName::MarketLogicRefinementDirectionAgent,
            json!({"H_current": current, "H_hist": history, "E_hist": evidence, "fb_hist": feedback_history}),
        )?;
        decode(&r)
    }
}
