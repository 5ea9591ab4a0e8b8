use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{Agents, LogicContext};
use crate::logic::{LibraryEntry, MarketLogic};

use super::inner::{inner_loop, Evidence};
use super::objective::{argmax, Standing};
use super::run::RunDir;
use super::{CandidateEvaluator, LoopConfig, LoopError, Result};

pub const STATE_VERSION: u64 = 1;

/// Everything the outer loop carries between rounds; saved at each round
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterState {
    pub schema_version: u64,
    pub library: Vec<LibraryEntry>,
    pub initial_len: usize,
    pub h_current: MarketLogic,
    /// The first generated logic followed by one logic per round.
    pub h_hist: Vec<MarketLogic>,
    pub e_hist: Vec<Evidence>,
    pub fb_hist: Vec<Value>,
    /// Completed rounds.
    pub t: usize,
    /// Index into `e_hist` of the best evaluated logic.
    pub best: Option<usize>,
    pub skips: Vec<String>,
    pub completed: bool,
}

impl OuterState {
    pub fn best_evidence(&self) -> Option<&Evidence> {
        self.best.map(|i| &self.e_hist[i])
    }

    pub fn best_logic(&self) -> Option<&MarketLogic> {
        let id = &self.best_evidence()?.logic_id;
        self.library.iter().map(|e| &e.logic).find(|l| &l.id == id)
    }

    pub fn best_standing(&self) -> Option<Standing> {
        self.best_evidence().and_then(Evidence::standing)
    }

    fn library_texts(&self) -> Vec<String> {
        self.library.iter().map(|e| e.logic.render()).collect()
    }

    fn next_id(&self) -> String {
        next_id(&self.library, self.initial_len)
    }
}

fn next_id(library: &[LibraryEntry], initial_len: usize) -> String {
    let mut k = library.len() - initial_len + 1;
    loop {
        let id = format!("gen-{k:03}");
        if !library.iter().any(|e| e.logic.id == id) {
            return id;
        }
        k += 1;
    }
}

fn evidence_json(st: &OuterState) -> Vec<Value> {
    st.e_hist.iter().map(Evidence::to_agent_json).collect()
}

/// Logic generation and refinement across `cfg.t_outer` rounds. With a run
/// directory the state is saved after every round, and a saved state is
/// resumed instead of starting over.
pub fn outer_loop(
    initial: Vec<LibraryEntry>,
    agents: &Agents<'_>,
    evaluator: &dyn CandidateEvaluator,
    cfg: &LoopConfig,
    run: Option<&RunDir>,
) -> Result<OuterState> {
    cfg.validate()?;
    let resumed = match run {
        Some(r) => r.load_state()?,
        None => None,
    };
    let mut st = match resumed {
        Some(st) => {
            tracing::info!(rounds = st.t, "resuming run");
            st
        }
        None => {
            if initial.is_empty() {
                return Err(LoopError::Invalid("the initial logic library is empty".into()));
            }
            let initial_len = initial.len();
            let texts: Vec<String> = initial.iter().map(|e| e.logic.render()).collect();
            let ctx = LogicContext { library: texts, round: 1, ..LogicContext::default() };
            let first = agents.generate_logic(&next_id(&initial, initial_len), &ctx)?;
            let mut library = initial;
            library.push(LibraryEntry::bare(first.clone()));
            let st = OuterState {
                schema_version: STATE_VERSION,
                library,
                initial_len,
                h_current: first.clone(),
                h_hist: vec![first],
                e_hist: Vec::new(),
                fb_hist: Vec::new(),
                t: 0,
                best: None,
                skips: Vec::new(),
                completed: false,
            };
            if let Some(r) = run {
                r.save_state(&st)?;
            }
            st
        }
    };

    while st.t < cfg.t_outer {
        let round = st.t + 1;
        tracing::info!(round, logic = %st.h_current.id, "inner loop");
        let ev = inner_loop(&st.h_current, agents, evaluator, cfg)?;
        if let Some(entry) = st.library.iter_mut().find(|e| e.logic.id == ev.logic_id) {
            entry.h_struct = ev.h_struct.clone();
            entry.gamma = ev.gamma.clone();
        }
        st.e_hist.push(ev);

        let history: Vec<String> = st.h_hist.iter().map(MarketLogic::render).collect();
        let fb = match agents.refinement_direction(&st.h_current.render(), &history, &evidence_json(&st), &st.fb_hist) {
            Ok(r) => serde_json::to_value(r).expect("refinement serializes"),
            Err(e) => {
                tracing::warn!(round, error = %e, "refinement feedback unavailable");
                Value::Null
            }
        };
        st.fb_hist.push(fb);
        st.best = argmax(st.e_hist.iter().map(Evidence::standing));

        let ctx = LogicContext {
            library: st.library_texts(),
            current: Some(st.h_current.render()),
            history,
            evidence: evidence_json(&st),
            feedback: st.fb_hist.clone(),
            round: (round + 1) as u32,
        };
        match agents.generate_logic(&st.next_id(), &ctx) {
            Ok(h_new) => {
                st.library.push(LibraryEntry::bare(h_new.clone()));
                st.h_hist.push(h_new.clone());
                st.h_current = h_new;
            }
            Err(e) => {
                tracing::warn!(round, error = %e, "logic generation skipped");
                st.skips.push(format!("round {round}: {e}"));
            }
        }
        st.t = round;
        if let Some(r) = run {
            r.save_round(round, st.e_hist.last().expect("just pushed"))?;
            r.save_state(&st)?;
        }
    }
    st.completed = true;
    if let Some(r) = run {
        r.save_state(&st)?;
    }
    Ok(st)
}
