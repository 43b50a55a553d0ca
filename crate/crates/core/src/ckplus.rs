//! The CK+ machine: a control string, a renaming environment, and a
//! continuation stack organized so that the binding frame for a variable
//! `n` sits exactly `n + R(n) + 1` frames down. Locating a binding is
//! index arithmetic, not a search.
//!
//! The stack keeps one partial (bind-free) frame on top that accumulates
//! context; every deeper frame is complete and carries exactly one bind.

use std::fmt;

use thiserror::Error;

use crate::calculus::EvalOutcome;
use crate::renaming::{RenamingEnv, RenamingError};
use crate::syntax::{Term, TermRef};

/// A bind-free frame: context accumulated since the machine last went
/// under a λ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartialFrame {
    Mt,
    /// A pending argument: the hole is in operator position of `[] (R·M)`.
    Arg(TermRef, RenamingEnv, Box<PartialFrame>),
    /// A suspended context saved while its demanded argument evaluates;
    /// the hole is in argument position of `(λ.Ŝ[…]) []`.
    Op(Box<ContinuationStack>, Box<PartialFrame>),
}

impl PartialFrame {
    pub fn arg(t: TermRef, env: RenamingEnv, rest: PartialFrame) -> PartialFrame {
        PartialFrame::Arg(t, env, Box::new(rest))
    }

    pub fn op(saved: ContinuationStack, rest: PartialFrame) -> PartialFrame {
        PartialFrame::Op(Box::new(saved), Box::new(rest))
    }
}

/// A complete frame: one bind, outermost, wrapping a partial rest-chain.
/// `(λ.[]) (R·M)` plus whatever context `inner` accumulated around it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteFrame {
    pub arg: TermRef,
    pub env: RenamingEnv,
    pub inner: PartialFrame,
}

impl CompleteFrame {
    pub fn new(arg: TermRef, env: RenamingEnv, inner: PartialFrame) -> Self {
        CompleteFrame { arg, env, inner }
    }
}

/// The control stack: a partial frame on top, complete frames below
/// (index 0 nearest the top), with O(1) access by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContinuationStack {
    pub top: PartialFrame,
    pub completes: Vec<CompleteFrame>,
}

impl ContinuationStack {
    /// A stack holding a single empty frame.
    pub fn initial() -> Self {
        ContinuationStack {
            top: PartialFrame::Mt,
            completes: Vec::new(),
        }
    }

    /// Total frame count, the top partial frame included.
    pub fn len(&self) -> usize {
        1 + self.completes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bind_count(&self) -> usize {
        self.completes.len()
    }
}

/// A complete frame whose rest-chain is empty: the machine shape of one
/// retained binding of an answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerFrame {
    pub arg: TermRef,
    pub env: RenamingEnv,
}

impl AnswerFrame {
    pub fn to_complete(&self) -> CompleteFrame {
        CompleteFrame::new(self.arg.clone(), self.env.clone(), PartialFrame::Mt)
    }
}

/// Machine states: evaluation, or the answer-search mode that peels
/// retained bindings off the stack to recognize `A[V]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MachineState {
    Eval {
        control: TermRef,
        env: RenamingEnv,
        stack: ContinuationStack,
    },
    Search {
        value: TermRef,
        env: RenamingEnv,
        remaining: Vec<CompleteFrame>,
        answers: Vec<AnswerFrame>,
    },
}

impl MachineState {
    pub fn is_final(&self) -> bool {
        matches!(self, MachineState::Search { remaining, .. } if remaining.is_empty())
    }
}

/// The eight transition rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    ShiftArg,
    DescendLam,
    LookupArg,
    Resume,
    AnsSearch1,
    AnsSearch2,
    AssocL,
    AssocR,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::ShiftArg,
        Rule::DescendLam,
        Rule::LookupArg,
        Rule::Resume,
        Rule::AnsSearch1,
        Rule::AnsSearch2,
        Rule::AssocL,
        Rule::AssocR,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::ShiftArg => "shift-arg",
            Rule::DescendLam => "descend-lambda",
            Rule::LookupArg => "lookup-arg",
            Rule::Resume => "resume",
            Rule::AnsSearch1 => "ans-search1",
            Rule::AnsSearch2 => "ans-search2",
            Rule::AssocL => "assoc-L",
            Rule::AssocR => "assoc-R",
        }
    }

    /// Whether the rule performs a reduction in the calculus sense; the
    /// other five only shuttle context between registers.
    pub fn is_reduction(&self) -> bool {
        matches!(self, Rule::Resume | Rule::AssocL | Rule::AssocR)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("open program: free index {index}")]
    OpenTerm { index: u64 },
    #[error(transparent)]
    Renaming(#[from] RenamingError),
    #[error("malformed state: lookup of effective index {effective} but only {binds} binds")]
    LookupOutOfRange { effective: u64, binds: usize },
    #[error("malformed state: {0}")]
    Malformed(&'static str),
}

/// One traced transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub rule: Rule,
    pub before: MachineState,
    pub after: MachineState,
}

/// Build the initial state `⟨M, ∅, ⟨mt⟩⟩` for a closed program.
pub fn inject(t: &TermRef) -> Result<MachineState, MachineError> {
    if let Some(&i) = t.free_indices().iter().next() {
        return Err(MachineError::OpenTerm { index: i });
    }
    Ok(MachineState::Eval {
        control: t.clone(),
        env: RenamingEnv::empty(),
        stack: ContinuationStack::initial(),
    })
}

/// Index of the complete frame binding variable `var`: the effective
/// address `var + R(var)`. This is the machine's O(1) address
/// computation; the frame then sits at `completes[index]`.
pub fn locate_binding(
    stack: &ContinuationStack,
    var: u64,
    env: &RenamingEnv,
) -> Result<usize, MachineError> {
    let effective = var
        .checked_add(env.lookup(var)?)
        .expect("effective index overflow");
    let idx = effective as usize;
    if idx >= stack.completes.len() {
        return Err(MachineError::LookupOutOfRange {
            effective,
            binds: stack.completes.len(),
        });
    }
    Ok(idx)
}

/// Baseline that finds the same frame by walking the stack one frame at a
/// time, the way a flat frame list must.
pub fn locate_binding_linear(
    stack: &ContinuationStack,
    var: u64,
    env: &RenamingEnv,
) -> Result<usize, MachineError> {
    let effective = var
        .checked_add(env.lookup(var)?)
        .expect("effective index overflow");
    let mut walked = 0u64;
    for (i, frame) in stack.completes.iter().enumerate() {
        std::hint::black_box(frame);
        if walked == effective {
            return Ok(i);
        }
        walked += 1;
    }
    Err(MachineError::LookupOutOfRange {
        effective,
        binds: stack.completes.len(),
    })
}

/// Shift a saved stack by `x` before re-planting it `x` binders deeper:
/// exactly the offsets whose reach leaves the saved stack (and its
/// wrapping λ) move; references internal to the saved stack stay put.
pub fn bump(stack: &ContinuationStack, x: u64) -> ContinuationStack {
    map_stack_envs::<std::convert::Infallible>(stack, 0, &mut |_, env, level| {
        Ok(env.add_past(x, level))
    })
    .unwrap_or_else(|e| match e {})
}

/// Rewrite every (term, env) payload of a stack. `level` is the number of
/// binders between the payload and the bottom of the stack: complete
/// frames below it, plus one per op-λ and saved bind crossed on the way
/// out of nested saved stacks.
pub(crate) fn map_stack_envs<E>(
    stack: &ContinuationStack,
    base: u64,
    f: &mut impl FnMut(&TermRef, &RenamingEnv, u64) -> Result<RenamingEnv, E>,
) -> Result<ContinuationStack, E> {
    let c = stack.completes.len() as u64;
    let top = map_partial_envs(&stack.top, base + c, f)?;
    let mut completes = Vec::with_capacity(stack.completes.len());
    for (j, frame) in stack.completes.iter().enumerate() {
        let level = base + (c - 1 - j as u64);
        completes.push(CompleteFrame {
            arg: frame.arg.clone(),
            env: f(&frame.arg, &frame.env, level)?,
            inner: map_partial_envs(&frame.inner, level, f)?,
        });
    }
    Ok(ContinuationStack { top, completes })
}

fn map_partial_envs<E>(
    k: &PartialFrame,
    level: u64,
    f: &mut impl FnMut(&TermRef, &RenamingEnv, u64) -> Result<RenamingEnv, E>,
) -> Result<PartialFrame, E> {
    Ok(match k {
        PartialFrame::Mt => PartialFrame::Mt,
        PartialFrame::Arg(t, env, rest) => PartialFrame::Arg(
            t.clone(),
            f(t, env, level)?,
            Box::new(map_partial_envs(rest, level, f)?),
        ),
        PartialFrame::Op(saved, rest) => PartialFrame::Op(
            // The op's λ is one more binder on the way out.
            Box::new(map_stack_envs(saved, level + 1, f)?),
            Box::new(map_partial_envs(rest, level, f)?),
        ),
    })
}

/// Outcome of one transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stepped {
    Next { rule: Rule, state: MachineState },
    Final,
}

/// Apply the single applicable rule. Exactly one rule matches any
/// well-formed non-final state.
pub fn step(s: &MachineState) -> Result<Stepped, MachineError> {
    match s {
        MachineState::Eval {
            control,
            env,
            stack,
        } => step_eval(control, env, stack),
        MachineState::Search {
            value,
            env,
            remaining,
            answers,
        } => step_search(value, env, remaining, answers),
    }
}

fn step_eval(
    control: &TermRef,
    env: &RenamingEnv,
    stack: &ContinuationStack,
) -> Result<Stepped, MachineError> {
    match &**control {
        // [shift-arg]: move the argument into the top frame.
        Term::App(m, n) => {
            let state = MachineState::Eval {
                control: m.clone(),
                env: env.clone(),
                stack: ContinuationStack {
                    top: PartialFrame::arg(n.clone(), env.clone(), stack.top.clone()),
                    completes: stack.completes.clone(),
                },
            };
            Ok(Stepped::Next {
                rule: Rule::ShiftArg,
                state,
            })
        }
        // [lookup-arg]: split the stack at the effective address, save the
        // split-off prefix in an op, and evaluate the bound argument.
        Term::Var(n) => {
            let idx = locate_binding(stack, *n, env)?;
            let mut completes = stack.completes.clone();
            let remaining = completes.split_off(idx + 1);
            let target = completes.pop().expect("index checked by locate_binding");
            let saved = ContinuationStack {
                top: stack.top.clone(),
                completes,
            };
            let state = MachineState::Eval {
                control: target.arg,
                env: target.env,
                stack: ContinuationStack {
                    top: PartialFrame::op(saved, target.inner),
                    completes: remaining,
                },
            };
            Ok(Stepped::Next {
                rule: Rule::LookupArg,
                state,
            })
        }
        Term::Lam(body) => match &stack.top {
            // [descend-λ]: complete the top frame into a bind and push a
            // fresh empty frame.
            PartialFrame::Arg(n, arg_env, rest) => {
                let mut completes = Vec::with_capacity(stack.completes.len() + 1);
                completes.push(CompleteFrame::new(
                    n.clone(),
                    arg_env.clone(),
                    (**rest).clone(),
                ));
                completes.extend_from_slice(&stack.completes);
                let state = MachineState::Eval {
                    control: body.clone(),
                    env: env.cons_zero(),
                    stack: ContinuationStack {
                        top: PartialFrame::Mt,
                        completes,
                    },
                };
                Ok(Stepped::Next {
                    rule: Rule::DescendLam,
                    state,
                })
            }
            // [resume]: the demanded argument is a value; restore the
            // saved frames and re-bind the value in place.
            PartialFrame::Op(saved, rest) => {
                let amount = saved.len() as u64;
                let new_env = env.add_all(amount);
                let mut completes =
                    Vec::with_capacity(saved.completes.len() + 1 + stack.completes.len());
                completes.extend_from_slice(&saved.completes);
                completes.push(CompleteFrame::new(
                    control.clone(),
                    env.clone(),
                    (**rest).clone(),
                ));
                completes.extend_from_slice(&stack.completes);
                let state = MachineState::Eval {
                    control: control.clone(),
                    env: new_env,
                    stack: ContinuationStack {
                        top: saved.top.clone(),
                        completes,
                    },
                };
                Ok(Stepped::Next {
                    rule: Rule::Resume,
                    state,
                })
            }
            // [ans-search1]: a value over an empty frame starts the
            // answer search.
            PartialFrame::Mt => {
                let state = MachineState::Search {
                    value: control.clone(),
                    env: env.clone(),
                    remaining: stack.completes.clone(),
                    answers: Vec::new(),
                };
                Ok(Stepped::Next {
                    rule: Rule::AnsSearch1,
                    state,
                })
            }
        },
    }
}

fn step_search(
    value: &TermRef,
    env: &RenamingEnv,
    remaining: &[CompleteFrame],
    answers: &[AnswerFrame],
) -> Result<Stepped, MachineError> {
    let Some(head) = remaining.first() else {
        return Ok(Stepped::Final);
    };
    let rest = &remaining[1..];
    match &head.inner {
        // [ans-search2]: the frame is a retained binding; move it to the
        // answer register.
        PartialFrame::Mt => {
            let mut answers = answers.to_vec();
            answers.push(AnswerFrame {
                arg: head.arg.clone(),
                env: head.env.clone(),
            });
            Ok(Stepped::Next {
                rule: Rule::AnsSearch2,
                state: MachineState::Search {
                    value: value.clone(),
                    env: env.clone(),
                    remaining: rest.to_vec(),
                    answers,
                },
            })
        }
        // [assoc-L]: the answer is the operator of a pending application;
        // hoist its bindings and descend into the value.
        PartialFrame::Arg(n, arg_env, k) => {
            let Term::Lam(body) = &**value else {
                return Err(MachineError::Malformed("search value is not an abstraction"));
            };
            let hoisted = answers.len() as u64;
            let arg_env = arg_env.add_all(hoisted + 1);
            let mut completes = Vec::with_capacity(answers.len() + 2 + rest.len());
            completes.push(CompleteFrame::new(n.clone(), arg_env, PartialFrame::Mt));
            completes.extend(answers.iter().map(AnswerFrame::to_complete));
            completes.push(CompleteFrame::new(
                head.arg.clone(),
                head.env.clone(),
                (**k).clone(),
            ));
            completes.extend_from_slice(rest);
            Ok(Stepped::Next {
                rule: Rule::AssocL,
                state: MachineState::Eval {
                    control: body.clone(),
                    env: env.cons_zero(),
                    stack: ContinuationStack {
                        top: PartialFrame::Mt,
                        completes,
                    },
                },
            })
        }
        // [assoc-R]: the answer was a demanded argument; hoist its
        // bindings past the saved context. The saved stack moves
        // `answers + 1` binders deeper, so its escaping offsets shift by
        // that amount. A [resume] step follows and performs the
        // substitution itself.
        PartialFrame::Op(saved, k) => {
            let hoisted = answers.len() as u64 + 1;
            let saved = bump(saved, hoisted);
            let mut completes = Vec::with_capacity(answers.len() + 1 + rest.len());
            completes.extend(answers.iter().map(AnswerFrame::to_complete));
            completes.push(CompleteFrame::new(
                head.arg.clone(),
                head.env.clone(),
                (**k).clone(),
            ));
            completes.extend_from_slice(rest);
            Ok(Stepped::Next {
                rule: Rule::AssocR,
                state: MachineState::Eval {
                    control: value.clone(),
                    env: env.clone(),
                    stack: ContinuationStack {
                        top: PartialFrame::op(saved, PartialFrame::Mt),
                        completes,
                    },
                },
            })
        }
    }
}

/// Plug `t` through a whole stack: the top frame first, then each
/// complete frame.
pub fn plug_stack(stack: &ContinuationStack, t: &TermRef) -> Result<TermRef, MachineError> {
    let mut cur = plug_partial(&stack.top, t)?;
    for frame in &stack.completes {
        cur = plug_complete(frame, &cur)?;
    }
    Ok(cur)
}

fn plug_partial(k: &PartialFrame, t: &TermRef) -> Result<TermRef, MachineError> {
    match k {
        PartialFrame::Mt => Ok(t.clone()),
        PartialFrame::Arg(n, env, rest) => {
            plug_partial(rest, &Term::app(t.clone(), env.apply(n)?))
        }
        PartialFrame::Op(saved, rest) => {
            let hole_var = Term::var(saved.len() as u64 - 1);
            let ctx = Term::lam(plug_stack(saved, &hole_var)?);
            plug_partial(rest, &Term::app(ctx, t.clone()))
        }
    }
}

fn plug_complete(frame: &CompleteFrame, t: &TermRef) -> Result<TermRef, MachineError> {
    plug_partial(
        &frame.inner,
        &Term::app(Term::lam(t.clone()), frame.env.apply(&frame.arg)?),
    )
}

/// φ: reconstruct the whole program a state stands for.
pub fn unload(s: &MachineState) -> Result<TermRef, MachineError> {
    match s {
        MachineState::Eval {
            control,
            env,
            stack,
        } => plug_stack(stack, &env.apply(control)?),
        MachineState::Search {
            value,
            env,
            remaining,
            answers,
        } => {
            let mut cur = env.apply(value)?;
            for frame in answers {
                cur = Term::app(Term::lam(cur), frame.env.apply(&frame.arg)?);
            }
            for frame in remaining {
                cur = plug_complete(frame, &cur)?;
            }
            Ok(cur)
        }
    }
}

/// Frame counts of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackMetrics {
    /// Frames in the active stack register (the top partial one included).
    pub depth: usize,
    /// Binds in scope, the answer register included.
    pub bind_count: usize,
    /// Frames already moved to the answer register.
    pub answer_frames: usize,
}

pub fn stack_metrics(s: &MachineState) -> StackMetrics {
    match s {
        MachineState::Eval { stack, .. } => StackMetrics {
            depth: stack.len(),
            bind_count: stack.bind_count(),
            answer_frames: 0,
        },
        MachineState::Search {
            remaining, answers, ..
        } => StackMetrics {
            depth: remaining.len(),
            bind_count: remaining.len() + answers.len(),
            answer_frames: answers.len(),
        },
    }
}

/// Run the machine for at most `max_steps` transitions and unload the
/// final state.
pub fn eval_ckplus(t: &TermRef, max_steps: u64) -> Result<EvalOutcome, MachineError> {
    let mut state = inject(t)?;
    let mut steps = 0u64;
    loop {
        match step(&state)? {
            Stepped::Final => return Ok(EvalOutcome::Answer(unload(&state)?)),
            Stepped::Next { state: next, .. } => {
                if steps == max_steps {
                    return Ok(EvalOutcome::BudgetExceeded);
                }
                steps += 1;
                state = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{eval_need, step_need, EvalOutcome, StepNeed};
    use crate::syntax::parse_debruijn;

    fn db(src: &str) -> TermRef {
        parse_debruijn(src).unwrap()
    }

    fn renv(offsets: &[u64]) -> RenamingEnv {
        RenamingEnv::from(offsets.to_vec())
    }

    fn run_rules(t: &TermRef) -> (Vec<Rule>, MachineState) {
        let mut state = inject(t).unwrap();
        let mut rules = Vec::new();
        loop {
            match step(&state).unwrap() {
                Stepped::Final => return (rules, state),
                Stepped::Next { rule, state: next } => {
                    rules.push(rule);
                    state = next;
                    assert!(rules.len() < 10_000, "runaway machine");
                }
            }
        }
    }

    #[test]
    fn inject_examples() {
        let t = db("(\\. 0) (\\. 0)");
        assert_eq!(
            inject(&t).unwrap(),
            MachineState::Eval {
                control: t,
                env: RenamingEnv::empty(),
                stack: ContinuationStack::initial(),
            }
        );
        assert!(matches!(
            inject(&Term::var(0)),
            Err(MachineError::OpenTerm { index: 0 })
        ));
    }

    #[test]
    fn deref_trace_rules_and_answer() {
        let t = db("(\\. 0) (\\. 0)");
        let (rules, final_state) = run_rules(&t);
        assert_eq!(
            rules,
            vec![
                Rule::ShiftArg,
                Rule::DescendLam,
                Rule::LookupArg,
                Rule::Resume,
                Rule::AnsSearch1,
                Rule::AnsSearch2,
            ]
        );
        assert_eq!(unload(&final_state).unwrap(), db("(\\. \\. 0) (\\. 0)"));
    }

    #[test]
    fn deref_trace_states() {
        // The six-step run of (λ.0)(λ.0), checked state by state.
        let id = db("\\. 0");
        let t = db("(\\. 0) (\\. 0)");
        let s0 = inject(&t).unwrap();

        let Stepped::Next { rule, state: s1 } = step(&s0).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::ShiftArg);
        assert_eq!(
            s1,
            MachineState::Eval {
                control: id.clone(),
                env: renv(&[]),
                stack: ContinuationStack {
                    top: PartialFrame::arg(id.clone(), renv(&[]), PartialFrame::Mt),
                    completes: vec![],
                },
            }
        );

        let Stepped::Next { rule, state: s2 } = step(&s1).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::DescendLam);
        assert_eq!(
            s2,
            MachineState::Eval {
                control: Term::var(0),
                env: renv(&[0]),
                stack: ContinuationStack {
                    top: PartialFrame::Mt,
                    completes: vec![CompleteFrame::new(id.clone(), renv(&[]), PartialFrame::Mt)],
                },
            }
        );
        assert_eq!(unload(&s2).unwrap(), t);

        let Stepped::Next { rule, state: s3 } = step(&s2).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::LookupArg);
        assert_eq!(
            s3,
            MachineState::Eval {
                control: id.clone(),
                env: renv(&[]),
                stack: ContinuationStack {
                    top: PartialFrame::op(ContinuationStack::initial(), PartialFrame::Mt),
                    completes: vec![],
                },
            }
        );
        assert_eq!(unload(&s3).unwrap(), t);

        let Stepped::Next { rule, state: s4 } = step(&s3).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::Resume);
        assert_eq!(
            s4,
            MachineState::Eval {
                control: id.clone(),
                env: renv(&[]),
                stack: ContinuationStack {
                    top: PartialFrame::Mt,
                    completes: vec![CompleteFrame::new(id.clone(), renv(&[]), PartialFrame::Mt)],
                },
            }
        );
        // [resume] is the deref: φ must advance one standard step.
        assert_eq!(unload(&s4).unwrap(), db("(\\. \\. 0) (\\. 0)"));

        let Stepped::Next { rule, state: s5 } = step(&s4).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::AnsSearch1);
        let Stepped::Next { rule, state: s6 } = step(&s5).unwrap() else {
            panic!()
        };
        assert_eq!(rule, Rule::AnsSearch2);
        assert_eq!(
            s6,
            MachineState::Search {
                value: id.clone(),
                env: renv(&[]),
                remaining: vec![],
                answers: vec![AnswerFrame {
                    arg: id.clone(),
                    env: renv(&[]),
                }],
            }
        );
        assert!(s6.is_final());
        assert_eq!(unload(&s6).unwrap(), db("(\\. \\. 0) (\\. 0)"));
    }

    #[test]
    fn unload_of_inject_is_identity() {
        for src in ["(\\. 0) (\\. 0)", "\\. 0", "(\\. \\. 0) (\\. 0) (\\. 0)"] {
            let t = db(src);
            assert_eq!(unload(&inject(&t).unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(
            eval_ckplus(&db("(\\. 0) (\\. 0)"), 100).unwrap(),
            EvalOutcome::Answer(db("(\\. \\. 0) (\\. 0)"))
        );
        assert_eq!(
            eval_ckplus(&db("\\. 0"), 100).unwrap(),
            EvalOutcome::Answer(db("\\. 0"))
        );
        assert_eq!(
            eval_ckplus(&db("(\\. 0 0) (\\. 0 0)"), 1000).unwrap(),
            EvalOutcome::BudgetExceeded
        );
    }

    #[test]
    fn stack_metrics_examples() {
        let t = db("(\\. 0) (\\. 0)");
        let s0 = inject(&t).unwrap();
        assert_eq!(
            stack_metrics(&s0),
            StackMetrics {
                depth: 1,
                bind_count: 0,
                answer_frames: 0
            }
        );
        let (_, final_state) = run_rules(&t);
        assert_eq!(
            stack_metrics(&final_state),
            StackMetrics {
                depth: 0,
                bind_count: 1,
                answer_frames: 1
            }
        );
    }

    // The assoc-R regression: the operator's saved context contains a
    // reference internal to the saved stack; hoisting must leave it
    // untouched while still shifting escaping references.
    #[test]
    fn assoc_r_preserves_saved_internal_references() {
        let t = db("(\\. (\\. 1 0) (\\. 0)) ((\\. 0) (\\. 0))");
        // Oracle: T ↦ deref inside the argument ↦ assoc-R ↦ deref ↦ ...
        let expected = match eval_need(&t, 100).unwrap() {
            EvalOutcome::Answer(a) => a,
            other => panic!("oracle did not finish: {other:?}"),
        };
        let got = match eval_ckplus(&t, 10_000).unwrap() {
            EvalOutcome::Answer(a) => a,
            other => panic!("machine did not finish: {other:?}"),
        };
        assert_eq!(got, expected);
        assert_eq!(
            expected,
            db("(\\. (\\. (\\. (\\. \\. 0) (\\. 0)) (\\. 0)) (\\. 0)) (\\. 0)")
        );
    }

    // Each machine step moves φ by at most one standard-reduction step,
    // strictly for the three reduction rules.
    #[test]
    fn phi_simulation_on_assoc_r_trace() {
        let t = db("(\\. (\\. 1 0) (\\. 0)) ((\\. 0) (\\. 0))");
        let mut state = inject(&t).unwrap();
        loop {
            let before = unload(&state).unwrap();
            match step(&state).unwrap() {
                Stepped::Final => break,
                Stepped::Next { rule, state: next } => {
                    let after = unload(&next).unwrap();
                    if rule.is_reduction() {
                        match step_need(&before).unwrap() {
                            StepNeed::Stepped(stepped) => assert_eq!(
                                stepped, after,
                                "rule {rule} must track one standard step"
                            ),
                            StepNeed::AtAnswer => panic!("reduction rule at an answer"),
                        }
                    } else {
                        assert_eq!(before, after, "rule {rule} must preserve φ");
                    }
                    state = next;
                }
            }
        }
    }

    #[test]
    fn assoc_l_example() {
        let t = db("(\\. \\. 0) (\\. 0) (\\. 0)");
        let (rules, final_state) = run_rules(&t);
        assert!(rules.contains(&Rule::AssocL));
        assert_eq!(
            unload(&final_state).unwrap(),
            match eval_need(&t, 100).unwrap() {
                EvalOutcome::Answer(a) => a,
                other => panic!("{other:?}"),
            }
        );
    }

    #[test]
    fn locate_binding_agrees_with_linear_scan() {
        let id = db("\\. 0");
        let frames: Vec<CompleteFrame> = (0..8)
            .map(|_| CompleteFrame::new(id.clone(), RenamingEnv::empty(), PartialFrame::Mt))
            .collect();
        let stack = ContinuationStack {
            top: PartialFrame::Mt,
            completes: frames,
        };
        for (var, off) in [(0u64, 0u64), (0, 5), (3, 2), (7, 0)] {
            let mut offsets = vec![0u64; (var + 1) as usize];
            offsets[var as usize] = off;
            let env = RenamingEnv::from(offsets);
            assert_eq!(
                locate_binding(&stack, var, &env).unwrap(),
                locate_binding_linear(&stack, var, &env).unwrap()
            );
        }
        let env = RenamingEnv::from(vec![20u64]);
        assert!(locate_binding(&stack, 0, &env).is_err());
    }
}
