//! Stack compaction: a scan machine that walks the continuation stack
//! top-down, keeps every frame some live variable can still reach, pops
//! the rest, and re-points the surviving offsets.
//!
//! The free-variable family, the pop adjustment and the saved-stack shift
//! all share one piece of bookkeeping: how many binders lie between a
//! (term, env) payload and the point of interest.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use thiserror::Error;

use crate::ckplus::{
    map_stack_envs, CompleteFrame, ContinuationStack, MachineState, PartialFrame,
};
use crate::renaming::{RenamingEnv, RenamingError};
use crate::syntax::{Term, TermRef};

/// Elements are distances: `d` means some live variable reaches the
/// `d`-th complete frame below the scan point.
pub type FreeSet = BTreeSet<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScError {
    #[error("compaction requires an evaluation state")]
    NotEvalState,
    #[error(transparent)]
    Renaming(#[from] RenamingError),
    #[error("malformed compaction state: {0}")]
    Malformed(&'static str),
}

/// Distances of the variables of `(t, r)` that reach at least `m` binders
/// out: each occurrence contributes `n + R(n) − m` when `n + R(n) ≥ m`,
/// with the environment growing a zero per λ crossed inside `t`.
pub fn fv_term(t: &Term, env: &RenamingEnv, m: u64) -> Result<FreeSet, RenamingError> {
    fn go(
        t: &Term,
        env: &RenamingEnv,
        depth: u64,
        m: u64,
        out: &mut FreeSet,
    ) -> Result<(), RenamingError> {
        match t {
            Term::Var(n) => {
                if *n >= depth {
                    let reach = n + env.lookup(n - depth)?;
                    // `reach` counts from under the local binders; the scan
                    // point lies `depth + m` binders out.
                    if reach >= depth + m {
                        out.insert(reach - depth - m);
                    }
                }
                Ok(())
            }
            Term::Lam(b) => go(b, env, depth + 1, m, out),
            Term::App(f, a) => {
                go(f, env, depth, m, out)?;
                go(a, env, depth, m, out)
            }
        }
    }
    let mut out = FreeSet::new();
    go(t, env, 0, m, &mut out)?;
    Ok(out)
}

/// Free distances of a partial frame scanned `m` binders above the point
/// of interest.
pub fn fv_partial(k: &PartialFrame, m: u64) -> Result<FreeSet, RenamingError> {
    match k {
        PartialFrame::Mt => Ok(FreeSet::new()),
        PartialFrame::Arg(t, env, rest) => {
            let mut out = fv_term(t, env, m)?;
            out.extend(fv_partial(rest, m)?);
            Ok(out)
        }
        PartialFrame::Op(saved, rest) => {
            let mut out = fv_saved(saved, m)?;
            out.extend(fv_partial(rest, m)?);
            Ok(out)
        }
    }
}

/// Free distances of a complete frame. Its own bind satisfies references
/// from above, never from its own payloads, so everything here is scanned
/// at the frame's base level.
pub fn fv_complete(frame: &CompleteFrame, m: u64) -> Result<FreeSet, RenamingError> {
    let mut out = fv_term(&frame.arg, &frame.env, m)?;
    out.extend(fv_partial(&frame.inner, m)?);
    Ok(out)
}

/// A stack saved in an op frame reconstructs under one extra λ; each of
/// its complete frames adds another binder on the way out.
fn fv_saved(saved: &ContinuationStack, m: u64) -> Result<FreeSet, RenamingError> {
    let p = saved.completes.len() as u64;
    let mut out = fv_partial(&saved.top, m + 1 + p)?;
    for (j, frame) in saved.completes.iter().enumerate() {
        out.extend(fv_complete(frame, m + 1 + (p - 1 - j as u64))?);
    }
    Ok(out)
}

/// Decrement every distance; the zero entries were aimed at the frame
/// just scanned and drop out.
pub fn dec(f: &FreeSet) -> FreeSet {
    f.iter().filter(|&&d| d >= 1).map(|d| d - 1).collect()
}

/// `Ŝ @ k`: graft `k` onto the innermost rest-position of the bottom
/// frame of the stack.
pub fn merge(stack: ContinuationStack, k: PartialFrame) -> ContinuationStack {
    fn graft(chain: PartialFrame, k: PartialFrame) -> PartialFrame {
        match chain {
            PartialFrame::Mt => k,
            PartialFrame::Arg(t, env, rest) => PartialFrame::Arg(t, env, Box::new(graft(*rest, k))),
            PartialFrame::Op(saved, rest) => PartialFrame::Op(saved, Box::new(graft(*rest, k))),
        }
    }
    let ContinuationStack { top, mut completes } = stack;
    match completes.pop() {
        None => ContinuationStack {
            top: graft(top, k),
            completes,
        },
        Some(bottom) => {
            completes.push(CompleteFrame::new(
                bottom.arg,
                bottom.env,
                graft(bottom.inner, k),
            ));
            ContinuationStack { top, completes }
        }
    }
}

/// The scan state: live distances, the focus pair, frames still to scan,
/// and the compacted prefix built so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScState {
    pub free: FreeSet,
    pub focus_term: TermRef,
    pub focus_env: RenamingEnv,
    pub input_top: Option<PartialFrame>,
    pub input_completes: VecDeque<CompleteFrame>,
    pub output: Option<ContinuationStack>,
}

/// Which scan rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScRule {
    ShiftPartialFrame,
    ShiftCompleteFrame,
    PopFrame,
    /// The frame is unused but deleting it would need a negative offset on
    /// a live slot, which naturals cannot carry; it is kept instead.
    RetainFrame,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScStep {
    Continue(ScRule, ScState),
    Done {
        env: RenamingEnv,
        stack: ContinuationStack,
    },
}

/// Start a scan over an evaluation state.
pub fn sc_start(s: &MachineState) -> Result<ScState, ScError> {
    let MachineState::Eval {
        control,
        env,
        stack,
    } = s
    else {
        return Err(ScError::NotEvalState);
    };
    Ok(ScState {
        free: fv_term(control, env, 0)?,
        focus_term: control.clone(),
        focus_env: env.clone(),
        input_top: Some(stack.top.clone()),
        input_completes: stack.completes.iter().cloned().collect(),
        output: None,
    })
}

/// One scan transition.
pub fn sc_step(mut s: ScState) -> Result<ScStep, ScError> {
    if let Some(top) = s.input_top.take() {
        // [shift-partial-frame]
        if s.output.is_some() {
            return Err(ScError::Malformed("partial frame after output started"));
        }
        s.free.extend(fv_partial(&top, 0)?);
        s.output = Some(ContinuationStack {
            top,
            completes: Vec::new(),
        });
        return Ok(ScStep::Continue(ScRule::ShiftPartialFrame, s));
    }
    let Some(frame) = s.input_completes.pop_front() else {
        let stack = s
            .output
            .ok_or(ScError::Malformed("scan finished before any frame"))?;
        return Ok(ScStep::Done {
            env: s.focus_env,
            stack,
        });
    };
    let output = s
        .output
        .as_mut()
        .ok_or(ScError::Malformed("complete frame before the partial one"))?;
    debug_assert!(
        s.free.iter().all(|&d| (d as usize) <= s.input_completes.len()),
        "live distance past the remaining stack"
    );
    if s.free.contains(&0) {
        // [shift-complete-frame]: the bind is reachable; keep it.
        s.free = dec(&s.free);
        s.free.extend(fv_complete(&frame, 0)?);
        output.completes.push(frame);
        return Ok(ScStep::Continue(ScRule::ShiftCompleteFrame, s));
    }
    // [pop-frame]: the bind is unused. Its binder vanishes, so every
    // offset reaching strictly past it drops by one — in the focus and in
    // every payload of the output, each at its own binder level. The
    // frame's accumulated rest-chain survives and is grafted onto the
    // output bottom; it sits below the deleted binder and needs no
    // adjustment, but its references join the live set.
    let threshold = output.completes.len() as u64;
    let adjusted = (|| -> Result<(RenamingEnv, ContinuationStack), RenamingError> {
        let env = s.focus_env.adjust(&s.focus_term, -1, threshold)?;
        let stack = map_stack_envs(output, 0, &mut |term, env, level| {
            env.adjust(term, -1, level)
        })?;
        Ok((env, stack))
    })();
    match adjusted {
        Ok((env, stack)) => {
            s.focus_env = env;
            s.free = dec(&s.free);
            s.free.extend(fv_partial(&frame.inner, 0)?);
            s.output = Some(merge(stack, frame.inner));
            Ok(ScStep::Continue(ScRule::PopFrame, s))
        }
        Err(RenamingError::NegativeOffset { .. }) => {
            // Unrepresentable pop: keep the frame as if it were live.
            s.free = dec(&s.free);
            s.free.extend(fv_complete(&frame, 0)?);
            output.completes.push(frame);
            Ok(ScStep::Continue(ScRule::RetainFrame, s))
        }
        Err(e) => Err(e.into()),
    }
}

/// The compaction transition: scan an evaluation state to the end and
/// replace its environment and stack with the compacted versions.
pub fn compact(s: &MachineState) -> Result<MachineState, ScError> {
    let MachineState::Eval { control, .. } = s else {
        return Err(ScError::NotEvalState);
    };
    let mut scan = sc_start(s)?;
    loop {
        match sc_step(scan)? {
            ScStep::Continue(_, next) => scan = next,
            ScStep::Done { env, stack } => {
                return Ok(MachineState::Eval {
                    control: control.clone(),
                    env,
                    stack,
                })
            }
        }
    }
}

/// When the machine runs compaction on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompactionPolicy {
    /// Never during evaluation (explicit calls only).
    Manual,
    /// Before every `n`-th machine step.
    EveryN(u64),
    /// Whenever at least `d` binds are in scope.
    DepthThreshold(usize),
}

impl CompactionPolicy {
    /// Should compaction run before the next step? `steps` counts machine
    /// steps taken so far; only evaluation states are eligible.
    pub fn fires(&self, s: &MachineState, steps: u64) -> bool {
        if !matches!(s, MachineState::Eval { .. }) {
            return false;
        }
        match self {
            CompactionPolicy::Manual => false,
            CompactionPolicy::EveryN(n) => steps > 0 && steps % n == 0,
            CompactionPolicy::DepthThreshold(d) => match s {
                MachineState::Eval { stack, .. } => stack.bind_count() >= *d,
                _ => false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckplus::{inject, unload};
    use crate::renaming::RenamingEnv;
    use crate::syntax::parse_debruijn;

    fn db(src: &str) -> TermRef {
        parse_debruijn(src).unwrap()
    }

    fn renv(offsets: &[u64]) -> RenamingEnv {
        RenamingEnv::from(offsets.to_vec())
    }

    fn mt_bind(src: &str, offsets: &[u64]) -> CompleteFrame {
        CompleteFrame::new(db(src), renv(offsets), PartialFrame::Mt)
    }

    #[test]
    fn fv_term_examples() {
        assert_eq!(
            fv_term(&Term::Var(0), &renv(&[0]), 0).unwrap(),
            FreeSet::from([0])
        );
        assert_eq!(
            fv_term(&db("\\. 0"), &renv(&[]), 0).unwrap(),
            FreeSet::new()
        );
        assert_eq!(
            fv_term(&Term::Var(0), &renv(&[2]), 1).unwrap(),
            FreeSet::from([1])
        );
    }

    #[test]
    fn fv_frame_examples() {
        assert_eq!(fv_partial(&PartialFrame::Mt, 0).unwrap(), FreeSet::new());
        assert_eq!(
            fv_partial(
                &PartialFrame::arg(Term::var(0), renv(&[1]), PartialFrame::Mt),
                0
            )
            .unwrap(),
            FreeSet::from([1])
        );
        assert_eq!(
            fv_complete(&mt_bind("\\. 0", &[]), 0).unwrap(),
            FreeSet::new()
        );
    }

    #[test]
    fn dec_examples() {
        assert_eq!(dec(&FreeSet::from([0])), FreeSet::new());
        assert_eq!(dec(&FreeSet::from([1, 3])), FreeSet::from([0, 2]));
        assert_eq!(dec(&FreeSet::new()), FreeSet::new());
    }

    #[test]
    fn merge_examples() {
        let k = PartialFrame::arg(db("\\. 0"), renv(&[]), PartialFrame::Mt);
        // mt @ k = k
        let merged = merge(ContinuationStack::initial(), k.clone());
        assert_eq!(merged.top, k);
        assert!(merged.completes.is_empty());
        // ⟨mt, bind(M,R,mt)⟩ @ k grafts into the bind's chain.
        let merged = merge(
            ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![mt_bind("\\. 0", &[])],
            },
            k.clone(),
        );
        assert_eq!(merged.top, PartialFrame::Mt);
        assert_eq!(merged.completes[0].inner, k);
        // ⟨arg(N,R,mt)⟩ @ k grafts into the partial chain.
        let merged = merge(
            ContinuationStack {
                top: PartialFrame::arg(db("\\. 0"), renv(&[]), PartialFrame::Mt),
                completes: vec![],
            },
            k.clone(),
        );
        assert_eq!(
            merged.top,
            PartialFrame::arg(db("\\. 0"), renv(&[]), k)
        );
    }

    #[test]
    fn sc_worked_example() {
        // focus (Var 0, (0)); stack ⟨mt, bind(λ.0), bind(λ.λ.0)⟩: the
        // second bind is unreferenced and pops, the first stays.
        let state = MachineState::Eval {
            control: Term::var(0),
            env: renv(&[0]),
            stack: ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![mt_bind("\\. 0", &[]), mt_bind("\\. \\. 0", &[])],
            },
        };

        let scan = sc_start(&state).unwrap();
        assert_eq!(scan.free, FreeSet::from([0]));

        let ScStep::Continue(rule, scan) = sc_step(scan).unwrap() else {
            panic!()
        };
        assert_eq!(rule, ScRule::ShiftPartialFrame);
        assert_eq!(scan.free, FreeSet::from([0]));

        let ScStep::Continue(rule, scan) = sc_step(scan).unwrap() else {
            panic!()
        };
        assert_eq!(rule, ScRule::ShiftCompleteFrame);
        assert_eq!(scan.free, FreeSet::new());

        let ScStep::Continue(rule, scan) = sc_step(scan).unwrap() else {
            panic!()
        };
        assert_eq!(rule, ScRule::PopFrame);
        assert_eq!(scan.focus_env, renv(&[0]));

        let ScStep::Done { env, stack } = sc_step(scan).unwrap() else {
            panic!()
        };
        assert_eq!(env, renv(&[0]));
        assert_eq!(
            stack,
            ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![mt_bind("\\. 0", &[])],
            }
        );

        assert_eq!(
            compact(&state).unwrap(),
            MachineState::Eval {
                control: Term::var(0),
                env: renv(&[0]),
                stack: ContinuationStack {
                    top: PartialFrame::Mt,
                    completes: vec![mt_bind("\\. 0", &[])],
                },
            }
        );
    }

    #[test]
    fn compact_of_initial_state_is_identity() {
        let s = inject(&db("(\\. 0) (\\. 0)")).unwrap();
        assert_eq!(compact(&s).unwrap(), s);
    }

    #[test]
    fn compact_keeps_fully_referenced_stacks() {
        // focus Var 0 over a single referenced bind.
        let state = MachineState::Eval {
            control: Term::var(0),
            env: renv(&[0]),
            stack: ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![mt_bind("\\. 0", &[])],
            },
        };
        assert_eq!(compact(&state).unwrap(), state);
    }

    // A popped frame's rest-chain keeps its own references alive: here the
    // chain holds `0` pointing at the outer bind, which must survive even
    // though the focus ignores everything.
    #[test]
    fn pop_keeps_rest_chain_references_live() {
        // From (λ. ((λ. λ.λ.0) (λ.0)) 0) (λ.0) after two descents.
        let state = MachineState::Eval {
            control: db("\\. \\. 0"),
            env: renv(&[0, 0]),
            stack: ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![
                    CompleteFrame::new(
                        db("\\. 0"),
                        renv(&[0]),
                        PartialFrame::arg(Term::var(0), renv(&[0]), PartialFrame::Mt),
                    ),
                    mt_bind("\\. 0", &[]),
                ],
            },
        };
        let compacted = compact(&state).unwrap();
        match &compacted {
            MachineState::Eval { stack, .. } => {
                assert_eq!(stack.bind_count(), 1, "outer bind must survive");
                assert_eq!(
                    stack.top,
                    PartialFrame::arg(Term::var(0), renv(&[0]), PartialFrame::Mt)
                );
            }
            _ => unreachable!(),
        }
        // And the reconstruction still means the same program, minus the
        // erased binder.
        assert_eq!(
            unload(&compacted).unwrap(),
            db("(\\. (\\. \\. 0) 0) (\\. 0)")
        );
    }

    // A pop whose adjustment would need a negative offset on a live slot
    // retains the frame instead.
    #[test]
    fn unrepresentable_pop_retains_frame() {
        // From (λ. (λ. 1) (λ.0)) (λ.0) after two descents: focus Var 1
        // crosses the unused inner bind with offset 0.
        let state = MachineState::Eval {
            control: Term::var(1),
            env: renv(&[0, 0]),
            stack: ContinuationStack {
                top: PartialFrame::Mt,
                completes: vec![mt_bind("\\. 0", &[0]), mt_bind("\\. 0", &[])],
            },
        };
        let compacted = compact(&state).unwrap();
        assert_eq!(compacted, state, "retained scan leaves the state intact");
    }

    #[test]
    fn compact_is_idempotent_on_examples() {
        let states = vec![
            MachineState::Eval {
                control: db("\\. \\. 0"),
                env: renv(&[0, 0]),
                stack: ContinuationStack {
                    top: PartialFrame::Mt,
                    completes: vec![mt_bind("\\. 0", &[0]), mt_bind("\\. 0", &[])],
                },
            },
            MachineState::Eval {
                control: Term::var(0),
                env: renv(&[0]),
                stack: ContinuationStack {
                    top: PartialFrame::Mt,
                    completes: vec![mt_bind("\\. 0", &[]), mt_bind("\\. \\. 0", &[])],
                },
            },
        ];
        for s in states {
            let once = compact(&s).unwrap();
            assert_eq!(compact(&once).unwrap(), once);
        }
    }

    #[test]
    fn policies_fire_only_on_eval_states() {
        let s = inject(&db("(\\. 0) (\\. 0)")).unwrap();
        assert!(!CompactionPolicy::Manual.fires(&s, 10));
        assert!(CompactionPolicy::EveryN(5).fires(&s, 10));
        assert!(!CompactionPolicy::EveryN(5).fires(&s, 0));
        assert!(!CompactionPolicy::DepthThreshold(1).fires(&s, 3));
        let final_state = MachineState::Search {
            value: db("\\. 0"),
            env: RenamingEnv::empty(),
            remaining: vec![],
            answers: vec![],
        };
        assert!(!CompactionPolicy::EveryN(1).fires(&final_state, 5));
    }
}
