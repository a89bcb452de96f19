use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKey {
    Global(u32),
    Local(u32),
    Conjunction(u32, u32),
}

/// Which indicator families a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Full,
    GlobalOnly,
    LocalOnly,
}

/// Column layout of the indicator features. Conjunctions exist only for
/// pairs observed in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub num_global: usize,
    pub num_local: usize,
    pub subset: FeatureSubset,
    keys: Vec<FeatureKey>,
    #[serde(skip)]
    columns: BTreeMap<FeatureKey, usize>,
}

impl FeatureLayout {
    pub fn new(
        num_global: usize,
        num_local: usize,
        subset: FeatureSubset,
        observed_pairs: &BTreeSet<(u32, u32)>,
    ) -> Self {
        let mut keys = Vec::new();
        if subset != FeatureSubset::LocalOnly {
            keys.extend((0..num_global as u32).map(FeatureKey::Global));
        }
        if subset != FeatureSubset::GlobalOnly {
            keys.extend((0..num_local as u32).map(FeatureKey::Local));
        }
        if subset == FeatureSubset::Full {
            keys.extend(observed_pairs.iter().map(|&(g, l)| FeatureKey::Conjunction(g, l)));
        }
        let columns = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        Self {
            num_global,
            num_local,
            subset,
            keys,
            columns,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    pub fn column(&self, key: FeatureKey) -> Option<usize> {
        self.columns.get(&key).copied()
    }

    fn check(&self, g: u32, l: u32) -> Result<()> {
        if g as usize >= self.num_global || l as usize >= self.num_local {
            return Err(TheoryError::OutOfRange(format!(
                "context ({g}, {l}) outside {} x {}",
                self.num_global, self.num_local
            )));
        }
        Ok(())
    }

    /// Columns active for context `(g, l)`, ascending.
    pub fn active(&self, g: u32, l: u32) -> Result<Vec<usize>> {
        self.check(g, l)?;
        let mut out: Vec<usize> = [FeatureKey::Global(g), FeatureKey::Local(l), FeatureKey::Conjunction(g, l)]
            .into_iter()
            .filter_map(|k| self.column(k))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Restores the lookup table after deserialization.
    pub fn rebuild_index(&mut self) {
        self.columns = self.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    }
}

/// Dense binary feature vector for context `(g, l)`.
pub fn featurize(layout: &FeatureLayout, g: u32, l: u32) -> Result<Vec<u8>> {
    let mut v = vec![0u8; layout.len()];
    for c in layout.active(g, l)? {
        v[c] = 1;
    }
    Ok(v)
}
