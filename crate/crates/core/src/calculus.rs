//! Evaluation contexts, answer recognition, the three notions of
//! reduction, unique decomposition, and the standard-reduction evaluator.
//!
//! This evaluator re-partitions the whole program at every step; it is the
//! reference the control-stack machine is checked against.

use thiserror::Error;

use crate::syntax::{shift, Term, TermRef};

/// An evaluation context: a term with a hole along the demand path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalContext {
    /// `[]`
    Hole,
    /// `E M`
    AppL(Box<EvalContext>, TermRef),
    /// `(λ.E) M`
    BindBody(Box<EvalContext>, TermRef),
    /// `(λ.E'[n]) E` with `n = Δ(E')`: demand for a parameter drives the
    /// argument. The first field is the body context, the second the
    /// argument context holding the hole.
    BindArg(Box<EvalContext>, Box<EvalContext>),
}

/// An answer context: the binding-only prefix of an answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerContext {
    /// `[]`
    Hole,
    /// `(λ.A) M`
    Bind(Box<AnswerContext>, TermRef),
}

impl AnswerContext {
    /// Answer contexts are a subset of evaluation contexts.
    pub fn to_eval(&self) -> EvalContext {
        match self {
            AnswerContext::Hole => EvalContext::Hole,
            AnswerContext::Bind(a, m) => EvalContext::BindBody(Box::new(a.to_eval()), m.clone()),
        }
    }
}

/// `Δ`: how many binders an evaluation context wraps around its hole.
pub fn delta(e: &EvalContext) -> u64 {
    match e {
        EvalContext::Hole => 0,
        EvalContext::AppL(e, _) => delta(e),
        EvalContext::BindBody(e, _) => delta(e) + 1,
        EvalContext::BindArg(_, e) => delta(e),
    }
}

pub fn delta_answer(a: &AnswerContext) -> u64 {
    match a {
        AnswerContext::Hole => 0,
        AnswerContext::Bind(a, _) => delta_answer(a) + 1,
    }
}

/// Fill the hole of `e` with `t`.
pub fn plug(e: &EvalContext, t: &TermRef) -> TermRef {
    match e {
        EvalContext::Hole => t.clone(),
        EvalContext::AppL(e, m) => Term::app(plug(e, t), m.clone()),
        EvalContext::BindBody(e, m) => Term::app(Term::lam(plug(e, t)), m.clone()),
        EvalContext::BindArg(body, e) => {
            let n = delta(body);
            Term::app(Term::lam(plug(body, &Term::var(n))), plug(e, t))
        }
    }
}

pub fn plug_answer(a: &AnswerContext, t: &TermRef) -> TermRef {
    match a {
        AnswerContext::Hole => t.clone(),
        AnswerContext::Bind(a, m) => Term::app(Term::lam(plug_answer(a, t)), m.clone()),
    }
}

/// A redex together with the pieces its contraction needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Redex {
    /// `(λ.E[n]) V` with `n = Δ(E)` and `V` a value.
    Deref { body: EvalContext, value: TermRef },
    /// `((λ.A[V]) M) N`.
    AssocL {
        inner: AnswerContext,
        value: TermRef,
        bind_arg: TermRef,
        outer_arg: TermRef,
    },
    /// `(λ.E[n]) ((λ.A[V]) M)` with `n = Δ(E)`.
    AssocR {
        body: EvalContext,
        inner: AnswerContext,
        value: TermRef,
        bind_arg: TermRef,
    },
}

impl Redex {
    /// Reassemble the redex as a term (the left-hand side of its rule).
    pub fn to_term(&self) -> TermRef {
        match self {
            Redex::Deref { body, value } => {
                let n = delta(body);
                Term::app(Term::lam(plug(body, &Term::var(n))), value.clone())
            }
            Redex::AssocL {
                inner,
                value,
                bind_arg,
                outer_arg,
            } => Term::app(
                Term::app(Term::lam(plug_answer(inner, value)), bind_arg.clone()),
                outer_arg.clone(),
            ),
            Redex::AssocR {
                body,
                inner,
                value,
                bind_arg,
            } => {
                let n = delta(body);
                Term::app(
                    Term::lam(plug(body, &Term::var(n))),
                    Term::app(Term::lam(plug_answer(inner, value)), bind_arg.clone()),
                )
            }
        }
    }
}

/// Result of splitting a program: either it is an answer `A[V]`, or it has
/// a unique context/redex split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition {
    IsAnswer(AnswerContext, TermRef),
    Decomposed(EvalContext, Redex),
}

impl Decomposition {
    /// Plugging reconstructs the input term exactly.
    pub fn reassemble(&self) -> TermRef {
        match self {
            Decomposition::IsAnswer(a, v) => plug_answer(a, v),
            Decomposition::Decomposed(e, r) => plug(e, &r.to_term()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalculusError {
    #[error("stuck: free variable {index} demanded (open program?)")]
    Stuck { index: u64 },
    #[error("open program: free index {index}")]
    OpenTerm { index: u64 },
}

enum Aux {
    Redex(EvalContext, Redex),
    Answer(AnswerContext, TermRef),
    /// The term is `E[Var n]` and the demanded binder lies outside it;
    /// `depth` caches `Δ` of the context.
    Demands {
        ctx: EvalContext,
        var: u64,
        depth: u64,
    },
}

fn aux(t: &TermRef) -> Aux {
    match &**t {
        Term::Var(n) => Aux::Demands {
            ctx: EvalContext::Hole,
            var: *n,
            depth: 0,
        },
        Term::Lam(_) => Aux::Answer(AnswerContext::Hole, t.clone()),
        Term::App(f, a) => match &**f {
            Term::Lam(body) => match aux(body) {
                Aux::Redex(e, r) => Aux::Redex(EvalContext::BindBody(Box::new(e), a.clone()), r),
                Aux::Answer(ab, v) => Aux::Answer(AnswerContext::Bind(Box::new(ab), a.clone()), v),
                Aux::Demands { ctx, var, depth } => {
                    if var == depth {
                        // This binder is demanded; evaluation moves to the
                        // argument.
                        demand_argument(ctx, a)
                    } else {
                        debug_assert!(var > depth, "spine variable below its own binder");
                        Aux::Demands {
                            ctx: EvalContext::BindBody(Box::new(ctx), a.clone()),
                            var,
                            depth: depth + 1,
                        }
                    }
                }
            },
            _ => match aux(f) {
                Aux::Redex(e, r) => Aux::Redex(EvalContext::AppL(Box::new(e), a.clone()), r),
                Aux::Answer(af, v) => match af {
                    AnswerContext::Hole => unreachable!("value operator is a Lam"),
                    AnswerContext::Bind(inner, m) => Aux::Redex(
                        EvalContext::Hole,
                        Redex::AssocL {
                            inner: *inner,
                            value: v,
                            bind_arg: m,
                            outer_arg: a.clone(),
                        },
                    ),
                },
                Aux::Demands { ctx, var, depth } => Aux::Demands {
                    ctx: EvalContext::AppL(Box::new(ctx), a.clone()),
                    var,
                    depth,
                },
            },
        },
    }
}

fn demand_argument(body_ctx: EvalContext, arg: &TermRef) -> Aux {
    match aux(arg) {
        Aux::Redex(e, r) => Aux::Redex(
            EvalContext::BindArg(Box::new(body_ctx), Box::new(e)),
            r,
        ),
        Aux::Answer(aa, v) => match aa {
            AnswerContext::Hole => Aux::Redex(
                EvalContext::Hole,
                Redex::Deref {
                    body: body_ctx,
                    value: v,
                },
            ),
            AnswerContext::Bind(inner, m) => Aux::Redex(
                EvalContext::Hole,
                Redex::AssocR {
                    body: body_ctx,
                    inner: *inner,
                    value: v,
                    bind_arg: m,
                },
            ),
        },
        Aux::Demands { ctx, var, depth } => Aux::Demands {
            ctx: EvalContext::BindArg(Box::new(body_ctx), Box::new(ctx)),
            var,
            depth,
        },
    }
}

/// Split a closed term into an answer or the unique context/redex pair.
pub fn decompose(t: &TermRef) -> Result<Decomposition, CalculusError> {
    match aux(t) {
        Aux::Redex(e, r) => Ok(Decomposition::Decomposed(e, r)),
        Aux::Answer(a, v) => Ok(Decomposition::IsAnswer(a, v)),
        Aux::Demands { var, depth, .. } => Err(CalculusError::Stuck { index: var - depth }),
    }
}

/// Contract a redex: the three rules, with `↑` keeping free variables of
/// everything pulled under a λ pointing at the right binders.
pub fn contract(r: &Redex) -> TermRef {
    match r {
        Redex::Deref { body, value } => {
            let d = delta(body);
            Term::app(
                Term::lam(plug(body, &shift(value, d + 1, 0))),
                value.clone(),
            )
        }
        Redex::AssocL {
            inner,
            value,
            bind_arg,
            outer_arg,
        } => {
            let d = delta_answer(inner);
            Term::app(
                Term::lam(plug_answer(
                    inner,
                    &Term::app(value.clone(), shift(outer_arg, d + 1, 0)),
                )),
                bind_arg.clone(),
            )
        }
        Redex::AssocR {
            body,
            inner,
            value,
            bind_arg,
        } => {
            let n = delta(body);
            let operator = Term::lam(plug(body, &Term::var(n)));
            let d = delta_answer(inner);
            Term::app(
                Term::lam(plug_answer(
                    inner,
                    &Term::app(shift(&operator, d + 1, 0), value.clone()),
                )),
                bind_arg.clone(),
            )
        }
    }
}

/// One standard-reduction step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepNeed {
    Stepped(TermRef),
    AtAnswer,
}

pub fn step_need(t: &TermRef) -> Result<StepNeed, CalculusError> {
    match decompose(t)? {
        Decomposition::IsAnswer(..) => Ok(StepNeed::AtAnswer),
        Decomposition::Decomposed(e, r) => Ok(StepNeed::Stepped(plug(&e, &contract(&r)))),
    }
}

/// Result of running an evaluator under a budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalOutcome {
    Answer(TermRef),
    BudgetExceeded,
}

/// Iterate standard reduction until an answer or until `budget`
/// contractions have been spent.
pub fn eval_need(t: &TermRef, budget: u64) -> Result<EvalOutcome, CalculusError> {
    if let Some(&i) = t.free_indices().iter().next() {
        return Err(CalculusError::OpenTerm { index: i });
    }
    let mut cur = t.clone();
    let mut used = 0u64;
    loop {
        match step_need(&cur)? {
            StepNeed::AtAnswer => return Ok(EvalOutcome::Answer(cur)),
            StepNeed::Stepped(next) => {
                if used == budget {
                    return Ok(EvalOutcome::BudgetExceeded);
                }
                used += 1;
                cur = next;
            }
        }
    }
}
