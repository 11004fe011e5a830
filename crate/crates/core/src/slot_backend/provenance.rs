//! Operation history for simulated ciphertexts.
//!
//! Every `SlotVector` points at the node of the operation that produced it.
//! Nodes are shared, so a value reused in several places is counted once when
//! the history is walked. This is what makes counters exact for kernels that
//! reuse intermediate ciphertexts (fold) as well as ones that fan out from a
//! single input (the DFT diagonal method).

use std::collections::HashSet;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OpKind {
    Fresh,
    Add,
    AddPlain,
    Sub,
    Mult,
    MultPlain,
    Rotate,
}

#[derive(Debug)]
pub(crate) struct OpNode {
    kind: OpKind,
    parents: Vec<Arc<OpNode>>,
}

impl OpNode {
    pub(crate) fn fresh() -> Arc<Self> {
        Arc::new(Self {
            kind: OpKind::Fresh,
            parents: Vec::new(),
        })
    }

    pub(crate) fn derive(kind: OpKind, parents: Vec<Arc<OpNode>>) -> Arc<Self> {
        Arc::new(Self { kind, parents })
    }
}

// Long chains (naive summation over 2048 slots) would otherwise recurse once
// per node on drop.
impl Drop for OpNode {
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(parent) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(parent) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// Distinct homomorphic operations in the history of a ciphertext.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub rotations: usize,
    /// Ciphertext-ciphertext multiplications.
    pub mults: usize,
    /// Ciphertext-plaintext multiplications.
    pub plain_mults: usize,
    /// Additions and subtractions, with either operand kind.
    pub adds: usize,
}

impl OpCounts {
    pub fn total_mults(&self) -> usize {
        self.mults + self.plain_mults
    }
}

pub(crate) fn count(root: &Arc<OpNode>) -> OpCounts {
    let mut seen: HashSet<*const OpNode> = HashSet::new();
    let mut stack: Vec<&Arc<OpNode>> = vec![root];
    let mut counts = OpCounts::default();
    while let Some(node) = stack.pop() {
        if !seen.insert(Arc::as_ptr(node)) {
            continue;
        }
        match node.kind {
            OpKind::Fresh => {}
            OpKind::Add | OpKind::AddPlain | OpKind::Sub => counts.adds += 1,
            OpKind::Mult => counts.mults += 1,
            OpKind::MultPlain => counts.plain_mults += 1,
            OpKind::Rotate => counts.rotations += 1,
        }
        stack.extend(node.parents.iter());
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_parents_counted_once() {
        let x = OpNode::fresh();
        let r = OpNode::derive(OpKind::Rotate, vec![x.clone()]);
        let s = OpNode::derive(OpKind::Add, vec![x, r.clone()]);
        let r2 = OpNode::derive(OpKind::Rotate, vec![s.clone()]);
        let s2 = OpNode::derive(OpKind::Add, vec![s, r2]);
        let c = count(&s2);
        assert_eq!(c.rotations, 2);
        assert_eq!(c.adds, 2);
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let mut node = OpNode::fresh();
        for _ in 0..200_000 {
            node = OpNode::derive(OpKind::Rotate, vec![node]);
        }
        assert_eq!(count(&node).rotations, 200_000);
        drop(node);
    }
}
