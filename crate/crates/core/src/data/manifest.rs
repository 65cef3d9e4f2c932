use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CsclError, Result};

use super::{read_bag_file, write_bag_file, AlignedCase, CaseSet, StainId, Survival};

/// Stain name → bag path relative to the manifest's directory.
pub type BagPaths = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// When false, HE-only cases are accepted (inference cohorts).
    #[serde(default = "default_true")]
    pub require_ihc: bool,
    pub cases: Vec<ManifestCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub case_id: String,
    pub bags: BagPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<SurvivalEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEntry {
    pub time: f64,
    pub event: bool,
}

fn default_true() -> bool {
    true
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CaseSet> {
    load_manifest_with(path, None)
}

/// Loads a manifest and every bag it references. `require_ihc` overrides
/// the manifest's own flag when given.
pub fn load_manifest_with(path: impl AsRef<Path>, require_ihc: Option<bool>) -> Result<CaseSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CsclError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CsclError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let require_ihc = require_ihc.unwrap_or(manifest.require_ihc);
    let base = path.parent().unwrap_or(Path::new("."));

    let mut cases = Vec::with_capacity(manifest.cases.len());
    let mut labels = Vec::new();
    let mut survival = Vec::new();
    for mc in &manifest.cases {
        let mut bags = Vec::with_capacity(mc.bags.len());
        for (name, rel) in &mc.bags {
            let stain: StainId = name.parse().map_err(|_| CsclError::Case {
                case: mc.case_id.clone(),
                reason: format!("unknown stain {name:?}"),
            })?;
            let file = base.join(rel);
            if !file.is_file() {
                return Err(CsclError::Manifest {
                    path: path.to_path_buf(),
                    reason: format!(
                        "case {}: {stain} bag {} does not exist",
                        mc.case_id,
                        file.display()
                    ),
                });
            }
            let bag = read_bag_file(&file).map_err(|e| CsclError::Case {
                case: mc.case_id.clone(),
                reason: format!("{}: {e}", file.display()),
            })?;
            if bag.stain != stain {
                return Err(CsclError::Alignment {
                    case: mc.case_id.clone(),
                    stain,
                    reason: format!("file {} holds a {} bag", file.display(), bag.stain),
                });
            }
            bags.push(bag);
        }
        cases.push(AlignedCase::new(mc.case_id.clone(), bags, require_ihc)?);
        labels.push(mc.label);
        survival.push(mc.survival.map(|s| Survival {
            time: s.time,
            event: s.event,
        }));
    }
    let labels = all_or_none(labels, "label", path)?;
    let survival = all_or_none(survival, "survival", path)?;
    CaseSet::new(cases, labels, survival)
}

fn all_or_none<T>(v: Vec<Option<T>>, what: &str, path: &Path) -> Result<Option<Vec<T>>> {
    let present = v.iter().filter(|x| x.is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    if present != v.len() {
        return Err(CsclError::Manifest {
            path: path.to_path_buf(),
            reason: format!("{what} given for {present} of {} cases", v.len()),
        });
    }
    Ok(Some(v.into_iter().map(Option::unwrap).collect()))
}

/// Writes every bag under `dir/bags/` and a manifest at `dir/<manifest_name>`.
/// Returns the manifest path.
pub fn save_case_set(set: &CaseSet, dir: impl AsRef<Path>, manifest_name: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let bag_dir = dir.join("bags");
    fs::create_dir_all(&bag_dir)?;
    let mut cases = Vec::with_capacity(set.len());
    let mut require_ihc = true;
    for (i, case) in set.cases.iter().enumerate() {
        require_ihc &= case.has_ihc();
        let mut bags = BagPaths::new();
        for bag in case.bags() {
            let rel = format!("bags/{}_{}.cseb", sanitize(&case.case_id), bag.stain);
            write_bag_file(bag, dir.join(&rel))?;
            bags.insert(bag.stain.to_string(), rel);
        }
        cases.push(ManifestCase {
            case_id: case.case_id.clone(),
            bags,
            label: set.labels.as_ref().map(|l| l[i]),
            survival: set.survival.as_ref().map(|s| SurvivalEntry {
                time: s[i].time,
                event: s[i].event,
            }),
        });
    }
    let manifest = Manifest { require_ihc, cases };
    let path = dir.join(manifest_name);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
