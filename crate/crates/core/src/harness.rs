//! Verification machinery: corpus generation, differential testing of the
//! two evaluators, per-step trace checking, sharing instrumentation, the
//! brute-force decomposition oracle, and the lookup-cost benchmark.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calculus::{
    self, eval_need, step_need, AnswerContext, CalculusError, EvalContext, EvalOutcome, Redex,
    StepNeed,
};
use crate::ckplus::{
    inject, locate_binding, locate_binding_linear, stack_metrics, step, unload, CompleteFrame,
    ContinuationStack, MachineError, MachineState, PartialFrame, Rule, StepRecord, Stepped,
};
use crate::renaming::RenamingEnv;
use crate::sc::{compact, CompactionPolicy, ScError};
use crate::syntax::{Term, TermRef};

// ---------------------------------------------------------------------
// Driving the machine

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    /// Hard cap on machine transitions.
    pub max_steps: u64,
    /// Cap on reduction steps (resume/assoc-L/assoc-R); `None` leaves only
    /// the step cap. Compaction scans count against neither.
    pub max_reductions: Option<u64>,
    pub policy: CompactionPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 100_000,
            max_reductions: None,
            policy: CompactionPolicy::Manual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStats {
    pub steps: u64,
    pub reductions: u64,
    pub compactions: u64,
    pub max_bind_count: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub outcome: EvalOutcome,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Compaction(#[from] ScError),
}

/// Run the CK+ machine under `cfg`, invoking `on_step` for every
/// transition (compaction scans are not transitions and are not
/// reported).
pub fn run_machine(
    t: &TermRef,
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunResult, HarnessError> {
    let mut state = inject(t)?;
    let mut stats = RunStats {
        steps: 0,
        reductions: 0,
        compactions: 0,
        max_bind_count: 0,
        max_depth: 0,
    };
    let note = |s: &MachineState, stats: &mut RunStats| {
        let m = stack_metrics(s);
        stats.max_bind_count = stats.max_bind_count.max(m.bind_count);
        stats.max_depth = stats.max_depth.max(m.depth);
    };
    note(&state, &mut stats);
    loop {
        if cfg.policy.fires(&state, stats.steps) {
            let compacted = compact(&state)?;
            if compacted != state {
                stats.compactions += 1;
                state = compacted;
            }
        }
        match step(&state)? {
            Stepped::Final => {
                return Ok(RunResult {
                    outcome: EvalOutcome::Answer(unload(&state)?),
                    stats,
                })
            }
            Stepped::Next { rule, state: next } => {
                if stats.steps == cfg.max_steps {
                    return Ok(RunResult {
                        outcome: EvalOutcome::BudgetExceeded,
                        stats,
                    });
                }
                if rule.is_reduction() {
                    if let Some(max) = cfg.max_reductions {
                        if stats.reductions == max {
                            return Ok(RunResult {
                                outcome: EvalOutcome::BudgetExceeded,
                                stats,
                            });
                        }
                    }
                    stats.reductions += 1;
                }
                stats.steps += 1;
                note(&next, &mut stats);
                on_step(&StepRecord {
                    rule,
                    before: state,
                    after: next.clone(),
                });
                state = next;
            }
        }
    }
}

/// Run and keep the whole trace.
pub fn trace_machine(
    t: &TermRef,
    cfg: &RunConfig,
) -> Result<(RunResult, Vec<StepRecord>), HarnessError> {
    let mut records = Vec::new();
    let result = run_machine(t, cfg, |r| records.push(r.clone()))?;
    Ok((result, records))
}

// ---------------------------------------------------------------------
// Binding erasure: the yardstick for compaction

/// Decrement the variables of `b` that cross a deleted binder at depth
/// `cutoff`. The caller guarantees no variable points at the binder
/// itself.
fn unshift(t: &TermRef, cutoff: u64) -> TermRef {
    match &**t {
        Term::Var(n) => {
            debug_assert_ne!(*n, cutoff, "erased binder still referenced");
            if *n > cutoff {
                Term::var(n - 1)
            } else {
                t.clone()
            }
        }
        Term::Lam(b) => Term::lam(unshift(b, cutoff + 1)),
        Term::App(f, a) => Term::app(unshift(f, cutoff), unshift(a, cutoff)),
    }
}

fn occurs(t: &Term, index: u64) -> bool {
    match t {
        Term::Var(n) => *n == index,
        Term::Lam(b) => occurs(b, index + 1),
        Term::App(f, a) => occurs(f, index) || occurs(a, index),
    }
}

/// Erase every binding whose variable is never used: rewrite
/// `(λ.B) M → B↓` wherever `0` does not occur in `B`, to a fixpoint.
pub fn normalize_bindings(t: &TermRef) -> TermRef {
    match &**t {
        Term::Var(_) => t.clone(),
        Term::Lam(b) => Term::lam(normalize_bindings(b)),
        Term::App(f, a) => {
            let f = normalize_bindings(f);
            let a = normalize_bindings(a);
            if let Term::Lam(body) = &*f {
                if !occurs(body, 0) {
                    return normalize_bindings(&unshift(body, 0));
                }
            }
            Term::app(f, a)
        }
    }
}

// ---------------------------------------------------------------------
// Brute-force decomposition oracle

/// Every way to write `t` as `plug(E, s)`, by exhaustive recursion over
/// the four context productions.
fn context_splits(t: &TermRef) -> Vec<(EvalContext, TermRef)> {
    let mut out = vec![(EvalContext::Hole, t.clone())];
    if let Term::App(f, a) = &**t {
        for (e, s) in context_splits(f) {
            out.push((EvalContext::AppL(Box::new(e), a.clone()), s));
        }
        if let Term::Lam(body) = &**f {
            for (e, s) in context_splits(body) {
                out.push((EvalContext::BindBody(Box::new(e), a.clone()), s));
            }
            // (λ.E'[n]) E requires the body to be E'[n] with n = Δ(E').
            for (e_body, s) in context_splits(body) {
                if let Term::Var(n) = &*s {
                    if *n == calculus::delta(&e_body) {
                        for (e_arg, s_arg) in context_splits(a) {
                            out.push((
                                EvalContext::BindArg(Box::new(e_body.clone()), Box::new(e_arg)),
                                s_arg,
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Every way to read `t` as `A[V]`.
fn answer_splits(t: &TermRef) -> Vec<(AnswerContext, TermRef)> {
    let mut out = Vec::new();
    if t.is_value() {
        out.push((AnswerContext::Hole, t.clone()));
    }
    if let Term::App(f, a) = &**t {
        if let Term::Lam(body) = &**f {
            for (inner, v) in answer_splits(body) {
                out.push((AnswerContext::Bind(Box::new(inner), a.clone()), v));
            }
        }
    }
    out
}

/// Does `s` match one of the three redex patterns?
fn match_redex(s: &TermRef) -> Vec<Redex> {
    let mut out = Vec::new();
    let Term::App(f, a) = &**s else {
        return out;
    };
    if let Term::Lam(body) = &**f {
        // deref and assoc-R share the operator shape (λ.E[n]), n = Δ(E).
        for (e, hole) in context_splits(body) {
            let Term::Var(n) = &*hole else { continue };
            if *n != calculus::delta(&e) {
                continue;
            }
            if a.is_value() {
                out.push(Redex::Deref {
                    body: e.clone(),
                    value: a.clone(),
                });
            }
            if let Term::App(af, aa) = &**a {
                if let Term::Lam(abody) = &**af {
                    for (inner, v) in answer_splits(abody) {
                        out.push(Redex::AssocR {
                            body: e.clone(),
                            inner,
                            value: v,
                            bind_arg: aa.clone(),
                        });
                    }
                }
            }
        }
    }
    if let Term::App(ff, fa) = &**f {
        if let Term::Lam(fbody) = &**ff {
            for (inner, v) in answer_splits(fbody) {
                out.push(Redex::AssocL {
                    inner,
                    value: v,
                    bind_arg: fa.clone(),
                    outer_arg: a.clone(),
                });
            }
        }
    }
    out
}

/// All (context, redex) splits of `t`, found by brute force. Unique
/// decomposition says a closed non-answer has exactly one.
pub fn brute_force_decompositions(t: &TermRef) -> Vec<(EvalContext, Redex)> {
    let mut out = Vec::new();
    for (e, s) in context_splits(t) {
        for r in match_redex(&s) {
            out.push((e.clone(), r));
        }
    }
    out
}

/// Is `t` an answer `A[V]`?
pub fn is_answer(t: &TermRef) -> bool {
    !answer_splits(t).is_empty()
}

// ---------------------------------------------------------------------
// Term enumeration and generation

/// All closed terms of at most `max_size` AST nodes.
pub fn enumerate_closed(max_size: usize) -> Vec<TermRef> {
    fn terms_of(size: usize, depth: u64, memo: &mut HashMap<(usize, u64), Vec<TermRef>>) -> Vec<TermRef> {
        if let Some(v) = memo.get(&(size, depth)) {
            return v.clone();
        }
        let mut out = Vec::new();
        if size == 1 {
            for n in 0..depth {
                out.push(Term::var(n));
            }
        } else if size >= 2 {
            for b in terms_of(size - 1, depth + 1, memo) {
                out.push(Term::lam(b));
            }
            for fsize in 1..size - 1 {
                let asize = size - 1 - fsize;
                for f in terms_of(fsize, depth, memo) {
                    for a in terms_of(asize, depth, memo) {
                        out.push(Term::app(f.clone(), a.clone()));
                    }
                }
            }
        }
        memo.insert((size, depth), out.clone());
        out
    }
    let mut memo = HashMap::new();
    let mut out = Vec::new();
    for size in 1..=max_size {
        out.extend(terms_of(size, 0, &mut memo));
    }
    out
}

/// One random closed term of at most `max_size` nodes, biased toward
/// applications whose operator is an abstraction so the need-driven rules
/// actually fire.
fn random_closed_term(rng: &mut ChaCha8Rng, max_size: usize) -> TermRef {
    if max_size <= 2 {
        return identity_term();
    }
    fn gen(rng: &mut ChaCha8Rng, fuel: usize, depth: u64) -> (TermRef, usize) {
        if fuel <= 1 {
            return if depth > 0 {
                (Term::var(rng.gen_range(0..depth)), 1)
            } else {
                (Term::lam(Term::var(0)), 2)
            };
        }
        let choice = rng.gen_range(0u32..10);
        if depth > 0 && choice < 3 {
            (Term::var(rng.gen_range(0..depth)), 1)
        } else if choice < 6 {
            let (b, used) = gen(rng, fuel - 1, depth + 1);
            (Term::lam(b), used + 1)
        } else {
            // Application; lean on λ operators.
            let split = rng.gen_range(1..fuel.max(2));
            let (f, fused) = if rng.gen_bool(0.65) && fuel >= 3 {
                let (b, used) = gen(rng, split.saturating_sub(1).max(1), depth + 1);
                (Term::lam(b), used + 1)
            } else {
                gen(rng, split, depth)
            };
            let (a, aused) = gen(rng, fuel - 1 - fused.min(fuel - 2), depth);
            (Term::app(f, a), fused + aused + 1)
        }
    }
    loop {
        let target = rng.gen_range(3..=max_size.max(3));
        let (t, _) = gen(rng, target, 0);
        if t.size() <= max_size && t.is_closed() {
            return t;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub term: TermRef,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

/// Identity, `λ.0`.
pub fn identity_term() -> TermRef {
    Term::lam(Term::var(0))
}

/// `K` nested bindings around the identity, each dead the moment the
/// machine descends past it: `(λ.(λ.…(λ.I)…I)I)I`.
pub fn lk_chain(k: usize) -> TermRef {
    let mut t = identity_term();
    for _ in 0..k {
        t = Term::app(Term::lam(t), identity_term());
    }
    t
}

/// Church numeral `n`.
pub fn church_numeral(n: u64) -> TermRef {
    let mut body = Term::var(0);
    for _ in 0..n {
        body = Term::app(Term::var(1), body);
    }
    Term::lam(Term::lam(body))
}

/// Church addition, `λm.λn.λs.λz. m s (n s z)`.
pub fn church_plus() -> TermRef {
    Term::lam(Term::lam(Term::lam(Term::lam(Term::app(
        Term::app(Term::var(3), Term::var(1)),
        Term::app(Term::app(Term::var(2), Term::var(1)), Term::var(0)),
    )))))
}

fn regression_terms() -> Vec<(String, TermRef)> {
    let db = |s: &str| crate::syntax::parse_debruijn(s).unwrap();
    let mut out: Vec<(String, TermRef)> = vec![
        ("reg-deref".into(), db("(\\. 0) (\\. 0)")),
        ("reg-identity".into(), identity_term()),
        ("reg-assoc-l".into(), db("(\\. \\. 0) (\\. 0) (\\. 0)")),
        ("reg-assoc-r".into(), db("(\\. 0) ((\\. \\. 0) (\\. 0))")),
        ("reg-left-spine".into(), db("((\\. 0) (\\. 0)) (\\. 0)")),
        ("reg-omega".into(), db("(\\. 0 0) (\\. 0 0)")),
        (
            "reg-op-internal-ref".into(),
            db("(\\. (\\. 1 0) (\\. 0)) ((\\. 0) (\\. 0))"),
        ),
        ("reg-dead-chain".into(), db("(\\. ((\\. \\. \\. 0) (\\. 0)) 0) (\\. 0)")),
        ("reg-live-crossing".into(), db("(\\. (\\. 1) (\\. 0)) (\\. 0)")),
        (
            "reg-church-2+2".into(),
            Term::app(
                Term::app(church_plus(), church_numeral(2)),
                church_numeral(2),
            ),
        ),
    ];
    for k in [3usize, 10] {
        out.push((format!("reg-lk-{k}"), lk_chain(k)));
    }
    out
}

/// A deterministic corpus: the fixed regression set plus `count` random
/// closed terms of at most `max_size` nodes drawn from `seed`.
pub fn gen_corpus(seed: u64, max_size: usize, count: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<CorpusEntry> = regression_terms()
        .into_iter()
        .map(|(name, term)| CorpusEntry { name, term })
        .collect();
    for i in 0..count {
        entries.push(CorpusEntry {
            name: format!("rand-{i:05}"),
            term: random_closed_term(&mut rng, max_size),
        });
    }
    Corpus { entries }
}

// ---------------------------------------------------------------------
// Trace verification: simulation, well-formedness, sharing

/// A violated check, with enough context to replay it.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub term: String,
    pub step: u64,
    pub rule: Option<String>,
    pub detail: String,
}

/// Checks applied while replaying a trace.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// φ-simulation: each step preserves the unloading or advances it by
    /// exactly one standard-reduction step, strictly for reduction rules.
    pub simulation: bool,
    /// State invariants: environment length matches bind count, lookups
    /// resolve in range, search values are abstractions.
    pub well_formedness: bool,
    /// Arguments are evaluated at most once per binding.
    pub sharing: bool,
    /// Compaction preserves meaning modulo dead-binding erasure, and is
    /// idempotent, on every evaluation state; `sc_state_cap` bounds how
    /// many states are checked per term.
    pub compaction: bool,
    pub sc_state_cap: usize,
}

impl VerifyOptions {
    pub fn all() -> Self {
        VerifyOptions {
            simulation: true,
            well_formedness: true,
            sharing: true,
            compaction: true,
            sc_state_cap: usize::MAX,
        }
    }

    pub fn none() -> Self {
        VerifyOptions {
            simulation: false,
            well_formedness: false,
            sharing: false,
            compaction: false,
            sc_state_cap: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifiedRun {
    pub outcome: Option<EvalOutcome>,
    pub steps: u64,
    pub reductions: u64,
    pub violations: Vec<Violation>,
    pub rule_counts: HashMap<Rule, u64>,
    pub max_bind_count: usize,
}

// Sharing instrumentation: a shadow stack mirrors the real one but stores
// only binding identities, so lookups can be charged to the binding they
// hit even as frames move between registers.

#[derive(Debug, Clone)]
enum ShadowPartial {
    Mt,
    Arg(Box<ShadowPartial>),
    Op(Box<ShadowSaved>, Box<ShadowPartial>),
}

#[derive(Debug, Clone)]
struct ShadowSaved {
    top: ShadowPartial,
    completes: Vec<ShadowComplete>,
    /// The binding the lookup consumed; resume re-creates it in place.
    reborn: u64,
}

#[derive(Debug, Clone)]
struct ShadowComplete {
    id: u64,
    inner: ShadowPartial,
}

#[derive(Debug, Clone)]
enum ShadowState {
    Eval {
        top: ShadowPartial,
        completes: Vec<ShadowComplete>,
    },
    Search {
        remaining: Vec<ShadowComplete>,
        answers: Vec<u64>,
    },
}

struct SharingTracker {
    state: ShadowState,
    next_id: u64,
    non_value_lookups: HashMap<u64, u64>,
}

impl SharingTracker {
    fn new() -> Self {
        SharingTracker {
            state: ShadowState::Eval {
                top: ShadowPartial::Mt,
                completes: Vec::new(),
            },
            next_id: 0,
            non_value_lookups: HashMap::new(),
        }
    }

    fn fresh(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// Mirror one transition; `record.before` supplies the indices the
    /// shadow cannot know.
    fn apply(&mut self, record: &StepRecord) -> Result<(), String> {
        let state = std::mem::replace(
            &mut self.state,
            ShadowState::Search {
                remaining: vec![],
                answers: vec![],
            },
        );
        self.state = match (record.rule, state) {
            (Rule::ShiftArg, ShadowState::Eval { top, completes }) => ShadowState::Eval {
                top: ShadowPartial::Arg(Box::new(top)),
                completes,
            },
            (Rule::DescendLam, ShadowState::Eval { top, completes }) => {
                let ShadowPartial::Arg(rest) = top else {
                    return Err("descend-lambda without an arg frame".into());
                };
                let id = self.fresh();
                let mut cs = Vec::with_capacity(completes.len() + 1);
                cs.push(ShadowComplete { id, inner: *rest });
                cs.extend(completes);
                ShadowState::Eval {
                    top: ShadowPartial::Mt,
                    completes: cs,
                }
            }
            (Rule::LookupArg, ShadowState::Eval { top, mut completes }) => {
                let MachineState::Eval {
                    control,
                    env,
                    stack,
                } = &record.before
                else {
                    return Err("lookup-arg from a search state".into());
                };
                let Term::Var(n) = &**control else {
                    return Err("lookup-arg without a variable".into());
                };
                let idx = locate_binding(stack, *n, env).map_err(|e| e.to_string())?;
                if completes.len() != stack.completes.len() {
                    return Err("shadow stack out of sync".into());
                }
                let remaining = completes.split_off(idx + 1);
                let target = completes.pop().expect("locate checked the index");
                if !stack.completes[idx].arg.is_value() {
                    *self.non_value_lookups.entry(target.id).or_insert(0) += 1;
                }
                ShadowState::Eval {
                    top: ShadowPartial::Op(
                        Box::new(ShadowSaved {
                            top,
                            completes,
                            reborn: target.id,
                        }),
                        Box::new(target.inner),
                    ),
                    completes: remaining,
                }
            }
            (Rule::Resume, ShadowState::Eval { top, completes }) => {
                let ShadowPartial::Op(saved, rest) = top else {
                    return Err("resume without an op frame".into());
                };
                let mut cs = Vec::with_capacity(saved.completes.len() + 1 + completes.len());
                cs.extend(saved.completes);
                cs.push(ShadowComplete {
                    id: saved.reborn,
                    inner: *rest,
                });
                cs.extend(completes);
                ShadowState::Eval {
                    top: saved.top,
                    completes: cs,
                }
            }
            (Rule::AnsSearch1, ShadowState::Eval { top, completes }) => {
                let ShadowPartial::Mt = top else {
                    return Err("ans-search1 without an empty frame".into());
                };
                ShadowState::Search {
                    remaining: completes,
                    answers: vec![],
                }
            }
            (Rule::AnsSearch2, ShadowState::Search { mut remaining, mut answers }) => {
                if remaining.is_empty() {
                    return Err("ans-search2 on an empty stack".into());
                }
                let head = remaining.remove(0);
                answers.push(head.id);
                ShadowState::Search { remaining, answers }
            }
            (Rule::AssocL, ShadowState::Search { mut remaining, answers }) => {
                if remaining.is_empty() {
                    return Err("assoc-L on an empty stack".into());
                }
                let head = remaining.remove(0);
                let ShadowPartial::Arg(k) = head.inner else {
                    return Err("assoc-L head is not an arg chain".into());
                };
                let id = self.fresh();
                let mut cs = Vec::with_capacity(answers.len() + 2 + remaining.len());
                cs.push(ShadowComplete {
                    id,
                    inner: ShadowPartial::Mt,
                });
                cs.extend(answers.into_iter().map(|id| ShadowComplete {
                    id,
                    inner: ShadowPartial::Mt,
                }));
                cs.push(ShadowComplete {
                    id: head.id,
                    inner: *k,
                });
                cs.extend(remaining);
                ShadowState::Eval {
                    top: ShadowPartial::Mt,
                    completes: cs,
                }
            }
            (Rule::AssocR, ShadowState::Search { mut remaining, answers }) => {
                if remaining.is_empty() {
                    return Err("assoc-R on an empty stack".into());
                }
                let head = remaining.remove(0);
                let ShadowPartial::Op(saved, k) = head.inner else {
                    return Err("assoc-R head is not an op chain".into());
                };
                let mut cs = Vec::with_capacity(answers.len() + 1 + remaining.len());
                cs.extend(answers.into_iter().map(|id| ShadowComplete {
                    id,
                    inner: ShadowPartial::Mt,
                }));
                cs.push(ShadowComplete {
                    id: head.id,
                    inner: *k,
                });
                cs.extend(remaining);
                ShadowState::Eval {
                    top: ShadowPartial::Op(saved, Box::new(ShadowPartial::Mt)),
                    completes: cs,
                }
            }
            (rule, _) => return Err(format!("rule {rule} from the wrong state kind")),
        };
        Ok(())
    }
}

/// The closed-program guarantee: every free variable of the focused term
/// has an offset slot and its effective address lands on an existing
/// bind. (The frame-shape half of well-formedness — one partial frame on
/// top, binds only in complete frames — holds by construction of the
/// stack types.)
fn check_well_formed(s: &MachineState) -> Result<(), String> {
    let (term, env, binds) = match s {
        MachineState::Eval {
            control,
            env,
            stack,
        } => (control, env, stack.bind_count()),
        MachineState::Search {
            value,
            env,
            remaining,
            answers,
        } => {
            if !value.is_value() {
                return Err("search value is not an abstraction".into());
            }
            (value, env, remaining.len() + answers.len())
        }
    };
    for slot in term.free_indices() {
        let off = env
            .lookup(slot)
            .map_err(|e| format!("free slot {slot}: {e}"))?;
        let reach = slot + off;
        if reach as usize >= binds {
            return Err(format!("slot {slot} reaches {reach} but only {binds} binds"));
        }
    }
    Ok(())
}

fn check_compaction(state: &MachineState) -> Result<(), String> {
    let compacted = compact(state).map_err(|e| format!("compaction failed: {e}"))?;
    let before = unload(state).map_err(|e| format!("unload failed: {e}"))?;
    let after = unload(&compacted).map_err(|e| format!("unload of compacted failed: {e}"))?;
    if normalize_bindings(&before) != normalize_bindings(&after) {
        return Err(format!(
            "compaction changed the program: {before} vs {after}"
        ));
    }
    let twice = compact(&compacted).map_err(|e| format!("re-compaction failed: {e}"))?;
    if twice != compacted {
        return Err("compaction is not idempotent".into());
    }
    Ok(())
}

/// Run the machine on `t` and verify the selected per-step properties.
pub fn run_verified(t: &TermRef, cfg: &RunConfig, opts: &VerifyOptions) -> VerifiedRun {
    let mut out = VerifiedRun::default();
    let name = t.to_string();
    let mut tracker = SharingTracker::new();
    let mut sc_checked = 0usize;

    let initial = match inject(t) {
        Ok(s) => s,
        Err(e) => {
            out.violations.push(Violation {
                term: name,
                step: 0,
                rule: None,
                detail: e.to_string(),
            });
            return out;
        }
    };
    if opts.well_formedness {
        if let Err(detail) = check_well_formed(&initial) {
            out.violations.push(Violation {
                term: name.clone(),
                step: 0,
                rule: None,
                detail,
            });
        }
    }
    if opts.compaction {
        if let Err(detail) = check_compaction(&initial) {
            out.violations.push(Violation {
                term: name.clone(),
                step: 0,
                rule: None,
                detail,
            });
        }
        sc_checked += 1;
    }

    let run = run_machine(t, cfg, |record| {
        let step_no = out.steps + 1;
        *out.rule_counts.entry(record.rule).or_insert(0) += 1;
        let violate = |detail: String, out: &mut VerifiedRun| {
            out.violations.push(Violation {
                term: name.clone(),
                step: step_no,
                rule: Some(record.rule.name().into()),
                detail,
            });
        };
        if opts.simulation {
            match (unload(&record.before), unload(&record.after)) {
                (Ok(before), Ok(after)) => {
                    if record.rule.is_reduction() {
                        match step_need(&before) {
                            Ok(StepNeed::Stepped(next)) => {
                                if next != after {
                                    violate(
                                        format!("expected one reduction: {before} to {after}"),
                                        &mut out,
                                    );
                                }
                            }
                            Ok(StepNeed::AtAnswer) => {
                                violate(format!("reduction rule on answer {before}"), &mut out)
                            }
                            Err(e) => violate(format!("oracle stuck: {e}"), &mut out),
                        }
                    } else if before != after {
                        violate(format!("φ changed on admin step: {before} vs {after}"), &mut out);
                    }
                }
                (Err(e), _) | (_, Err(e)) => violate(format!("unload failed: {e}"), &mut out),
            }
        }
        if opts.well_formedness {
            if let Err(detail) = check_well_formed(&record.after) {
                violate(detail, &mut out);
            }
        }
        if opts.sharing {
            if let Err(detail) = tracker.apply(record) {
                violate(format!("sharing tracker: {detail}"), &mut out);
            }
        }
        if opts.compaction && sc_checked < opts.sc_state_cap {
            if matches!(record.after, MachineState::Eval { .. }) {
                if let Err(detail) = check_compaction(&record.after) {
                    violate(detail, &mut out);
                }
                sc_checked += 1;
            }
        }
        out.steps = step_no;
        let m = stack_metrics(&record.after);
        out.max_bind_count = out.max_bind_count.max(m.bind_count);
    });

    match run {
        Ok(result) => {
            out.reductions = result.stats.reductions;
            out.max_bind_count = out.max_bind_count.max(result.stats.max_bind_count);
            if opts.sharing {
                for (id, count) in &tracker.non_value_lookups {
                    if *count > 1 {
                        out.violations.push(Violation {
                            term: name.clone(),
                            step: out.steps,
                            rule: None,
                            detail: format!(
                                "binding {id} had {count} non-value lookups (argument evaluated more than once)"
                            ),
                        });
                    }
                }
            }
            out.outcome = Some(result.outcome);
        }
        Err(e) => out.violations.push(Violation {
            term: name,
            step: out.steps,
            rule: None,
            detail: e.to_string(),
        }),
    }
    out
}

// ---------------------------------------------------------------------
// Differential testing

#[derive(Debug, Clone, Serialize)]
pub enum DiffOutcome {
    AgreeAnswer,
    AgreeBudget,
    Mismatch { need: String, ckplus: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffEntry {
    pub name: String,
    pub term: String,
    pub outcome: DiffOutcome,
    /// First simulation/well-formedness/sharing violation, when the trace
    /// checks ran.
    pub first_violation: Option<Violation>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct DiffReport {
    pub total: usize,
    pub agree_answer: usize,
    pub agree_budget: usize,
    pub mismatches: Vec<DiffEntry>,
    pub violations: Vec<Violation>,
}

impl DiffReport {
    pub fn clean(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty()
    }
}

fn outcome_str(o: &EvalOutcome) -> String {
    match o {
        EvalOutcome::Answer(t) => t.to_string(),
        EvalOutcome::BudgetExceeded => "BUDGET".into(),
    }
}

/// Evaluate every corpus entry with both evaluators under the same
/// reduction budget and compare answers. With `check_simulation` each
/// terminating machine run is also φ-checked step by step.
pub fn diff_corpus(corpus: &Corpus, budget: u64, check_simulation: bool) -> DiffReport {
    let entries: Vec<(usize, DiffEntry)> = corpus
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let need = eval_need(&entry.term, budget);
            let cfg = RunConfig {
                max_steps: u64::MAX,
                max_reductions: Some(budget),
                policy: CompactionPolicy::Manual,
            };
            let (machine, first_violation) = if check_simulation {
                let opts = VerifyOptions {
                    simulation: true,
                    well_formedness: true,
                    sharing: true,
                    compaction: false,
                    sc_state_cap: 0,
                };
                let verified = run_verified(&entry.term, &cfg, &opts);
                (
                    verified.outcome.ok_or(()),
                    verified.violations.into_iter().next(),
                )
            } else {
                (
                    run_machine(&entry.term, &cfg, |_| {})
                        .map(|r| r.outcome)
                        .map_err(|_| ()),
                    None,
                )
            };
            let outcome = match (need, machine) {
                (Ok(EvalOutcome::Answer(a)), Ok(EvalOutcome::Answer(b))) if a == b => {
                    DiffOutcome::AgreeAnswer
                }
                (Ok(EvalOutcome::BudgetExceeded), Ok(EvalOutcome::BudgetExceeded)) => {
                    DiffOutcome::AgreeBudget
                }
                (need, machine) => DiffOutcome::Mismatch {
                    need: need.map_or_else(|e| format!("error: {e:?}"), |o| outcome_str(&o)),
                    ckplus: machine.map_or("error".into(), |o| outcome_str(&o)),
                },
            };
            (
                i,
                DiffEntry {
                    name: entry.name.clone(),
                    term: entry.term.to_string(),
                    outcome,
                    first_violation,
                },
            )
        })
        .collect();

    let mut report = DiffReport {
        total: corpus.entries.len(),
        ..DiffReport::default()
    };
    let mut ordered = entries;
    ordered.sort_by_key(|(i, _)| *i);
    for (_, entry) in ordered {
        match &entry.outcome {
            DiffOutcome::AgreeAnswer => report.agree_answer += 1,
            DiffOutcome::AgreeBudget => report.agree_budget += 1,
            DiffOutcome::Mismatch { .. } => report.mismatches.push(entry.clone()),
        }
        if let Some(v) = &entry.first_violation {
            report.violations.push(v.clone());
        }
    }
    report
}

// ---------------------------------------------------------------------
// Lookup-cost benchmark

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub depth: usize,
    pub ns_per_lookup: f64,
}

/// A well-formed evaluation state whose focus variable binds at the very
/// bottom of a `depth`-deep stack.
pub fn deep_lookup_state(depth: usize) -> (ContinuationStack, RenamingEnv, u64) {
    let id = identity_term();
    let completes = (0..depth)
        .map(|_| CompleteFrame::new(id.clone(), RenamingEnv::empty(), PartialFrame::Mt))
        .collect();
    let stack = ContinuationStack {
        top: PartialFrame::Mt,
        completes,
    };
    let mut offsets = vec![0u64; depth];
    offsets[0] = depth as u64 - 1;
    (stack, RenamingEnv::from(offsets), 0)
}

/// Median nanoseconds per binding-location at each stack depth.
pub fn bench_lookup(depths: &[usize], reps: u64, linear_scan: bool) -> Vec<BenchRow> {
    let batches = 15u64;
    let per_batch = (reps / batches).max(1);
    depths
        .iter()
        .map(|&depth| {
            let (stack, env, var) = deep_lookup_state(depth.max(1));
            let mut samples = Vec::with_capacity(batches as usize);
            for _ in 0..batches {
                let start = Instant::now();
                for _ in 0..per_batch {
                    let idx = if linear_scan {
                        locate_binding_linear(&stack, var, &env).expect("well-formed state")
                    } else {
                        locate_binding(&stack, var, &env).expect("well-formed state")
                    };
                    std::hint::black_box(&stack.completes[idx]);
                }
                samples.push(start.elapsed().as_nanos() as f64 / per_batch as f64);
            }
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            BenchRow {
                depth,
                ns_per_lookup: samples[samples.len() / 2],
            }
        })
        .collect()
}
