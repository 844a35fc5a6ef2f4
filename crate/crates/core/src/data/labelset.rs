use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered subset of the global labels together with its reverse index,
/// which maps a global label id to the local classifier row holding it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LabelSet {
    global: Vec<usize>,
    reverse: BTreeMap<usize, usize>,
}

impl LabelSet {
    pub fn new(global: Vec<usize>) -> Result<Self> {
        let mut reverse = BTreeMap::new();
        for (local, &g) in global.iter().enumerate() {
            if reverse.insert(g, local).is_some() {
                return Err(Error::config(format!("label {g} appears twice in a label set")));
            }
        }
        Ok(LabelSet { global, reverse })
    }

    /// `{0, .., n-1}` in identity order.
    pub fn full(n: usize) -> Self {
        LabelSet::new((0..n).collect()).expect("distinct by construction")
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn global_labels(&self) -> &[usize] {
        &self.global
    }

    pub fn contains(&self, global: usize) -> bool {
        self.reverse.contains_key(&global)
    }

    /// Reverse index: global id → local row.
    pub fn local(&self, global: usize) -> Option<usize> {
        self.reverse.get(&global).copied()
    }

    /// Local row → global id.
    pub fn global(&self, local: usize) -> usize {
        self.global[local]
    }

    pub fn to_local(&self, globals: &[usize]) -> Result<Vec<usize>> {
        globals
            .iter()
            .map(|&g| {
                self.local(g)
                    .ok_or_else(|| Error::usage(format!("label {g} is outside the label set")))
            })
            .collect()
    }

    pub fn to_global(&self, locals: &[usize]) -> Vec<usize> {
        locals.iter().map(|&l| self.global[l]).collect()
    }

    /// Checks that the reverse index is a bijection onto `0..len`.
    pub fn validate(&self) -> Result<()> {
        if self.reverse.len() != self.global.len() {
            return Err(Error::usage("reverse index size does not match label list"));
        }
        let mut seen = vec![false; self.global.len()];
        for (&g, &l) in &self.reverse {
            if l >= seen.len() || seen[l] || self.global[l] != g {
                return Err(Error::usage(format!(
                    "reverse index maps label {g} to inconsistent local row {l}"
                )));
            }
            seen[l] = true;
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for LabelSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<usize> {
    fn from(s: LabelSet) -> Self {
        s.global
    }
}

/// True when every label in `0..num_labels` is held by some set.
pub fn covers(sets: &[LabelSet], num_labels: usize) -> bool {
    let mut seen = vec![false; num_labels];
    for s in sets {
        for &g in s.global_labels() {
            if g < num_labels {
                seen[g] = true;
            }
        }
    }
    seen.into_iter().all(|b| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reverse_index_follows_order() {
        let s = LabelSet::new(vec![2, 0]).unwrap();
        assert_eq!(s.local(2), Some(0));
        assert_eq!(s.local(0), Some(1));
        assert_eq!(s.local(1), None);
        assert!(LabelSet::new(vec![1, 1]).is_err());
    }

    #[test]
    fn coverage() {
        let a = LabelSet::new(vec![0, 1]).unwrap();
        let b = LabelSet::new(vec![1, 2]).unwrap();
        assert!(covers(&[a.clone(), b], 3));
        assert!(!covers(&[a], 3));
    }

    proptest! {
        #[test]
        fn reverse_then_forward_is_identity(labels in proptest::sample::subsequence((0..20usize).collect::<Vec<_>>(), 0..20)
            .prop_shuffle()) {
            let s = LabelSet::new(labels.clone()).unwrap();
            s.validate().unwrap();
            for &g in &labels {
                prop_assert_eq!(s.global(s.local(g).unwrap()), g);
            }
            let locals: Vec<usize> = (0..labels.len()).collect();
            prop_assert_eq!(s.to_local(&s.to_global(&locals)).unwrap(), locals);
        }
    }
}
