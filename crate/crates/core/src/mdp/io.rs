use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_mdp, validate_policy, Mdp, TabularPolicy};
use crate::error::{Error, Result};

/// On-disk JSON layout. Numbers are written in shortest round-trip form, so
/// `load(save(x)) == x` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl MdpFile {
    pub fn from_parts(m: &Mdp, policy: Option<&TabularPolicy>) -> Self {
        MdpFile {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            discount: m.discount,
            initial_dist: m.initial_dist.clone(),
            reward: m.reward.clone(),
            transition: m.transition.clone(),
            policy: policy.map(|p| p.per_step.clone()),
            labels: m.labels.clone(),
        }
    }

    /// Splits into a validated MDP and optional policy.
    pub fn into_parts(self) -> Result<(Mdp, Option<TabularPolicy>)> {
        let m = Mdp {
            num_states: self.num_states,
            num_actions: self.num_actions,
            reward: self.reward,
            transition: self.transition,
            horizon: self.horizon,
            initial_dist: self.initial_dist,
            discount: self.discount,
            labels: self.labels,
        };
        let mut violations = validate_mdp(&m);
        let policy = self.policy.map(TabularPolicy::new);
        if let Some(pi) = &policy {
            if violations.is_empty() {
                violations.extend(validate_policy(&m, pi));
            }
        }
        if violations.is_empty() {
            Ok((m, policy))
        } else {
            Err(Error::Validation(violations))
        }
    }
}

fn schema_error(err: serde_json::Error) -> Error {
    let message = err.to_string();
    let path = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
        .unwrap_or("$")
        .to_string();
    Error::Schema { path, message }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<(Mdp, Option<TabularPolicy>)> {
    let text = read(path.as_ref())?;
    let file: MdpFile = serde_json::from_str(&text).map_err(schema_error)?;
    file.into_parts()
}

/// Loads a policy file: either a bare `[H][S][A]` array or an object with a
/// `policy` key (such as an MDP file).
pub fn load_policy(path: impl AsRef<Path>, m: &Mdp) -> Result<TabularPolicy> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum PolicyFile {
        Bare(Vec<Vec<Vec<f64>>>),
        Wrapped { policy: Vec<Vec<Vec<f64>>> },
    }
    let text = read(path.as_ref())?;
    let parsed: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: "policy".into(),
        message: e.to_string(),
    })?;
    let pi = match parsed {
        PolicyFile::Bare(t) | PolicyFile::Wrapped { policy: t } => TabularPolicy::new(t),
    };
    let violations = validate_policy(m, &pi);
    if violations.is_empty() {
        Ok(pi)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn save_mdp(path: impl AsRef<Path>, m: &Mdp, policy: Option<&TabularPolicy>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&MdpFile::from_parts(m, policy))
        .expect("MDP tables are always serializable");
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
