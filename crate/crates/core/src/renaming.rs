//! Renaming environments: per-binder index offsets that delay de Bruijn
//! adjustments until a variable is actually used.
//!
//! Slot `n` holds the offset for variable `n`; the effective address of an
//! occurrence is `n + R(n)`. Environments grow by a zero on the front each
//! time the machine moves under a λ, so slots always line up with raw
//! indices.

use std::fmt;

use thiserror::Error;

use crate::syntax::{Term, TermRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenamingError {
    #[error("malformed state: variable {index} has no offset slot (env length {len})")]
    MissingSlot { index: u64, len: usize },
    #[error("offset for live slot {slot} would become negative")]
    NegativeOffset { slot: u64 },
}

/// A sequence of natural offsets, one per binder in scope.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct RenamingEnv {
    offsets: Vec<u64>,
}

impl RenamingEnv {
    pub fn empty() -> Self {
        RenamingEnv::default()
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    /// `R(n)`: the offset for variable `n`.
    pub fn lookup(&self, n: u64) -> Result<u64, RenamingError> {
        self.offsets
            .get(n as usize)
            .copied()
            .ok_or(RenamingError::MissingSlot {
                index: n,
                len: self.offsets.len(),
            })
    }

    /// Push a zero offset for a binder just entered.
    pub fn cons_zero(&self) -> Self {
        let mut offsets = Vec::with_capacity(self.offsets.len() + 1);
        offsets.push(0);
        offsets.extend_from_slice(&self.offsets);
        RenamingEnv { offsets }
    }

    /// `ρ(R, M)`: rewrite every variable to its effective address. The
    /// empty environment is the identity; otherwise every free variable of
    /// `t` must have a slot.
    pub fn apply(&self, t: &TermRef) -> Result<TermRef, RenamingError> {
        if self.is_empty() {
            return Ok(t.clone());
        }
        fn go(env: &RenamingEnv, t: &TermRef, depth: u64) -> Result<TermRef, RenamingError> {
            match &**t {
                Term::Var(n) => {
                    if *n < depth {
                        Ok(t.clone())
                    } else {
                        let off = env.lookup(n - depth)?;
                        Ok(Term::var(n.checked_add(off).expect("index overflow")))
                    }
                }
                Term::Lam(b) => Ok(Term::lam(go(env, b, depth + 1)?)),
                Term::App(f, a) => Ok(Term::app(go(env, f, depth)?, go(env, a, depth)?)),
            }
        }
        go(self, t, 0)
    }

    /// `R ↑ x`: every offset incremented by `x`.
    pub fn add_all(&self, x: u64) -> Self {
        RenamingEnv {
            offsets: self
                .offsets
                .iter()
                .map(|o| o.checked_add(x).expect("offset overflow"))
                .collect(),
        }
    }

    /// Increment by `x` exactly the slots whose reach crosses `threshold`
    /// (`j + R(j) > threshold`). This is the stack-replanting shift: slots
    /// resolving at or above the threshold are left alone.
    pub fn add_past(&self, x: u64, threshold: u64) -> Self {
        RenamingEnv {
            offsets: self
                .offsets
                .iter()
                .enumerate()
                .map(|(j, o)| {
                    if j as u64 + o > threshold {
                        o.checked_add(x).expect("offset overflow")
                    } else {
                        *o
                    }
                })
                .collect(),
        }
    }

    /// `(M, R) ⇕ (x, ℓ)`: add `x` to every slot reaching past `ℓ`
    /// (`j + R(j) > ℓ`). A slot that would go negative is saturated to
    /// zero when `M` never uses it, and is an error when it does — the
    /// occurrence's raw index cannot shrink, so no natural offset can
    /// represent the result.
    pub fn adjust(&self, term: &Term, x: i64, threshold: u64) -> Result<Self, RenamingError> {
        if x == 0 {
            return Ok(self.clone());
        }
        let live = term.free_indices();
        let mut offsets = Vec::with_capacity(self.offsets.len());
        for (j, &o) in self.offsets.iter().enumerate() {
            let j = j as u64;
            if j + o > threshold {
                let v = o as i64 + x;
                if v >= 0 {
                    offsets.push(v as u64);
                } else if live.contains(&j) {
                    return Err(RenamingError::NegativeOffset { slot: j });
                } else {
                    offsets.push(0);
                }
            } else {
                offsets.push(o);
            }
        }
        Ok(RenamingEnv { offsets })
    }
}

impl From<Vec<u64>> for RenamingEnv {
    fn from(offsets: Vec<u64>) -> Self {
        RenamingEnv { offsets }
    }
}

impl fmt::Display for RenamingEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, o) in self.offsets.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{o}")?;
        }
        write!(f, ")")
    }
}
