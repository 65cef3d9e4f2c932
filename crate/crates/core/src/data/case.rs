use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CsclError, Result};

use super::{PatchBag, StainId};

/// Bags of one tissue sample across stains, aligned row-for-row: row `i` of
/// every bag is the same tissue location.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCase {
    pub case_id: String,
    bags: BTreeMap<StainId, PatchBag>,
}

impl AlignedCase {
    /// Checks stain presence and cross-stain alignment. With `require_ihc`
    /// at least one IHC bag must be present (training cases).
    pub fn new(
        case_id: impl Into<String>,
        bags: impl IntoIterator<Item = PatchBag>,
        require_ihc: bool,
    ) -> Result<Self> {
        let case_id = case_id.into();
        let mut map = BTreeMap::new();
        for bag in bags {
            let stain = bag.stain;
            if map.insert(stain, bag).is_some() {
                return Err(CsclError::Alignment {
                    case: case_id,
                    stain,
                    reason: "stain appears twice".into(),
                });
            }
        }
        let he = map.get(&StainId::HE).ok_or_else(|| CsclError::Case {
            case: case_id.clone(),
            reason: "missing HE bag".into(),
        })?;
        if require_ihc && map.len() < 2 {
            return Err(CsclError::Case {
                case: case_id,
                reason: "training case needs at least one IHC bag".into(),
            });
        }
        for (&stain, bag) in &map {
            bag.validate()?;
            if bag.n_patches() != he.n_patches() {
                return Err(CsclError::Alignment {
                    case: case_id.clone(),
                    stain,
                    reason: format!("N = {} but HE has N = {}", bag.n_patches(), he.n_patches()),
                });
            }
            if bag.dim() != he.dim() {
                return Err(CsclError::Alignment {
                    case: case_id.clone(),
                    stain,
                    reason: format!("D = {} but HE has D = {}", bag.dim(), he.dim()),
                });
            }
            if let Some(i) = bag.coords.iter().zip(&he.coords).position(|(a, b)| a != b) {
                return Err(CsclError::Alignment {
                    case: case_id.clone(),
                    stain,
                    reason: format!(
                        "coordinate {:?} at row {i} differs from HE {:?}",
                        bag.coords[i], he.coords[i]
                    ),
                });
            }
        }
        Ok(Self { case_id, bags: map })
    }

    pub fn he(&self) -> &PatchBag {
        &self.bags[&StainId::HE]
    }

    pub fn bag(&self, stain: StainId) -> Option<&PatchBag> {
        self.bags.get(&stain)
    }

    /// IHC bags in stain-code order.
    pub fn ihc(&self) -> impl Iterator<Item = &PatchBag> {
        self.bags.values().filter(|b| !b.stain.is_anchor())
    }

    /// All bags, HE first.
    pub fn bags(&self) -> impl Iterator<Item = &PatchBag> {
        self.bags.values()
    }

    pub fn stains(&self) -> impl Iterator<Item = StainId> + '_ {
        self.bags.keys().copied()
    }

    pub fn has_ihc(&self) -> bool {
        self.bags.len() > 1
    }

    pub fn n_patches(&self) -> usize {
        self.he().n_patches()
    }

    pub fn dim(&self) -> usize {
        self.he().dim()
    }

    /// Drops every IHC bag.
    pub fn he_only(&self) -> Self {
        let mut bags = BTreeMap::new();
        bags.insert(StainId::HE, self.he().clone());
        Self {
            case_id: self.case_id.clone(),
            bags,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Survival {
    pub time: f64,
    pub event: bool,
}

/// Cases with optional downstream targets. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSet {
    pub cases: Vec<AlignedCase>,
    pub labels: Option<Vec<u8>>,
    pub survival: Option<Vec<Survival>>,
}

impl CaseSet {
    pub fn new(
        cases: Vec<AlignedCase>,
        labels: Option<Vec<u8>>,
        survival: Option<Vec<Survival>>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != cases.len() {
                return Err(CsclError::invalid("labels do not cover every case"));
            }
            if l.iter().any(|&y| y > 1) {
                return Err(CsclError::invalid("labels must be 0 or 1"));
            }
        }
        if let Some(s) = &survival {
            if s.len() != cases.len() {
                return Err(CsclError::invalid("survival does not cover every case"));
            }
            if let Some(bad) = s.iter().find(|s| !(s.time > 0.0) || !s.time.is_finite()) {
                return Err(CsclError::invalid(format!(
                    "survival time must be positive, got {}",
                    bad.time
                )));
            }
        }
        let dim = cases.first().map(AlignedCase::dim);
        if let Some(c) = cases.iter().find(|c| Some(c.dim()) != dim) {
            return Err(CsclError::Case {
                case: c.case_id.clone(),
                reason: format!("embedding dim {} differs from {}", c.dim(), dim.unwrap()),
            });
        }
        Ok(Self {
            cases,
            labels,
            survival,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.cases.first().map(AlignedCase::dim)
    }

    /// Fails unless every case carries at least one IHC bag.
    pub fn require_training_ready(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(CsclError::precondition("empty dataset"));
        }
        if let Some(c) = self.cases.iter().find(|c| !c.has_ihc()) {
            return Err(CsclError::Case {
                case: c.case_id.clone(),
                reason: "training case needs at least one IHC bag".into(),
            });
        }
        Ok(())
    }
}
