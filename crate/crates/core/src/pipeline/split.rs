use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::SpectraSet;
use crate::error::{Error, Result};
use crate::labels::{CoreType, Subtype};
use crate::model::Head;

pub const N_FOLDS: usize = 4;

/// A held-out patient and the core it contributes to type testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPatient {
    pub patient_id: u32,
    pub subtype: Subtype,
    pub type_core: CoreType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<u32>,
    pub dev: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test: Vec<TestPatient>,
    pub folds: Vec<Fold>,
}

/// Dev-set sizes of the four folds for `n` cross-validation patients:
/// `max(1, n/5)` for the first three and one more for the last when the
/// division leaves a remainder and room is left.
pub fn dev_sizes(n: usize) -> Result<[usize; N_FOLDS]> {
    if n < N_FOLDS {
        return Err(Error::Label(format!(
            "{n} cross-validation patients cannot fill {N_FOLDS} dev sets"
        )));
    }
    let d = (n / 5).max(1);
    let last = if n % 5 != 0 && 4 * d < n { d + 1 } else { d };
    Ok([d, d, d, last])
}

/// One random test patient per subtype, the rest spread over four folds
/// with subtype-interleaved dev sets. Two test patients contribute their
/// cancer core to type testing and two their adjacent core.
pub fn make_split(patients: &[(u32, Subtype)], seed: u64) -> Result<SplitPlan> {
    let mut by_subtype: BTreeMap<Subtype, Vec<u32>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for &(p, s) in patients {
        if !seen.insert(p) {
            return Err(Error::Label(format!("patient {p} listed twice")));
        }
        by_subtype.entry(s).or_default().push(p);
    }
    if let Some(s) = Subtype::ALL.iter().find(|s| !by_subtype.contains_key(s)) {
        return Err(Error::Label(format!("no patients with subtype {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::with_capacity(4);
    let mut pools: Vec<Vec<u32>> = Vec::with_capacity(4);
    for s in Subtype::ALL {
        let mut ids = by_subtype.remove(&s).unwrap_or_default();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        test.push(TestPatient {
            patient_id: ids[0],
            subtype: s,
            type_core: CoreType::Cancer,
        });
        pools.push(ids[1..].to_vec());
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.shuffle(&mut rng);
    for &i in &order[2..] {
        test[i].type_core = CoreType::Adjacent;
    }

    let mut interleaved = Vec::new();
    let longest = pools.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..longest {
        for pool in &pools {
            if let Some(&p) = pool.get(k) {
                interleaved.push(p);
            }
        }
    }
    let sizes = dev_sizes(interleaved.len())?;
    let mut folds = Vec::with_capacity(N_FOLDS);
    let mut start = 0;
    for size in sizes {
        let dev: Vec<u32> = interleaved[start..start + size].to_vec();
        let mut train: Vec<u32> = interleaved
            .iter()
            .copied()
            .filter(|p| !dev.contains(p))
            .collect();
        train.sort_unstable();
        let mut dev = dev;
        dev.sort_unstable();
        folds.push(Fold { train, dev });
        start += size;
    }
    let plan = SplitPlan { seed, test, folds };
    plan.check_leakage()?;
    Ok(plan)
}

impl SplitPlan {
    pub fn test_ids(&self) -> Vec<u32> {
        self.test.iter().map(|t| t.patient_id).collect()
    }

    /// Every fold keeps train, dev and test disjoint.
    pub fn check_leakage(&self) -> Result<()> {
        let test: BTreeSet<u32> = self.test_ids().into_iter().collect();
        for (k, f) in self.folds.iter().enumerate() {
            for p in &f.dev {
                if f.train.contains(p) || test.contains(p) {
                    return Err(Error::Label(format!(
                        "fold {k}: patient {p} leaks out of dev"
                    )));
                }
            }
            if let Some(p) = f.train.iter().find(|p| test.contains(p)) {
                return Err(Error::Label(format!("fold {k}: test patient {p} in train")));
            }
        }
        Ok(())
    }

    /// Spectra of `patients` usable by `head`: all cores for the type head,
    /// cancer cores only for the subtype head.
    pub fn select(set: &SpectraSet, patients: &[u32], head: Head) -> SpectraSet {
        let idx = set.indices_where(|i| {
            patients.contains(&i.patient_id)
                && (head == Head::Type || i.core_type == CoreType::Cancer)
        });
        set.subset(&idx)
    }

    pub fn fold_sets(
        &self,
        set: &SpectraSet,
        fold: usize,
        head: Head,
    ) -> Result<(SpectraSet, SpectraSet)> {
        let f = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::InvalidParameter(format!("fold {fold} out of range")))?;
        Ok((
            Self::select(set, &f.train, head),
            Self::select(set, &f.dev, head),
        ))
    }

    /// Held-out spectra: one core per test patient for the type head, the
    /// four cancer cores for the subtype head.
    pub fn test_set(&self, set: &SpectraSet, head: Head) -> SpectraSet {
        let idx = set.indices_where(|i| {
            self.test.iter().any(|t| {
                t.patient_id == i.patient_id
                    && match head {
                        Head::Type => i.core_type == t.type_core,
                        Head::Subtype => i.core_type == CoreType::Cancer,
                    }
            })
        });
        set.subset(&idx)
    }
}

/// Patient subtypes read off the cancer-core spectra of a set.
pub fn patient_subtypes(set: &SpectraSet) -> Result<Vec<(u32, Subtype)>> {
    let mut map: BTreeMap<u32, Option<Subtype>> = BTreeMap::new();
    for i in set.infos() {
        let e = map.entry(i.patient_id).or_insert(None);
        if let Some(s) = i.subtype {
            match e {
                Some(prev) if *prev != s => {
                    return Err(Error::Label(format!(
                        "patient {} has subtypes {prev} and {s}",
                        i.patient_id
                    )))
                }
                _ => *e = Some(s),
            }
        }
    }
    map.into_iter()
        .map(|(p, s)| {
            s.map(|s| (p, s)).ok_or_else(|| {
                Error::Label(format!(
                    "patient {p} has no cancer spectra, subtype unknown"
                ))
            })
        })
        .collect()
}
