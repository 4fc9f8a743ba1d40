use std::collections::BTreeMap;

use splatstream_core::Gaussian3D;

use crate::error::{Error, Result};
use crate::update::{ModelState, ModelUpdate, UpdateKind};

/// Client-side replica built from received updates.
#[derive(Debug, Clone, Default)]
pub struct ClientModel {
    state: ModelState,
}

impl ClientModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.state.revision
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn gaussians(&self) -> &BTreeMap<u64, Gaussian3D> {
        &self.state.gaussians
    }

    pub fn len(&self) -> usize {
        self.state.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.gaussians.is_empty()
    }

    /// Apply an update atomically: on error the model is unchanged.
    pub fn apply(&mut self, u: &ModelUpdate) -> Result<()> {
        u.validate()?;
        match u.kind {
            UpdateKind::Snapshot => {
                self.state = ModelState {
                    revision: u.revision_to,
                    sh_degree: u.sh_degree,
                    gaussians: u.added.iter().map(|g| (g.id, g.clone())).collect(),
                };
            }
            UpdateKind::Delta => {
                if u.revision_from != self.state.revision {
                    return Err(Error::ResyncRequired {
                        client: self.state.revision,
                        update_from: u.revision_from,
                    });
                }
                if u.sh_degree != self.state.sh_degree {
                    return Err(Error::Protocol(format!(
                        "delta has sh degree {}, model has {}",
                        u.sh_degree, self.state.sh_degree
                    )));
                }
                let g = &self.state.gaussians;
                if let Some(a) = u.added.iter().find(|a| g.contains_key(&a.id)) {
                    return Err(Error::Protocol(format!("added id {} already present", a.id)));
                }
                if let Some(m) = u.modified.iter().find(|m| !g.contains_key(&m.id)) {
                    return Err(Error::Protocol(format!("modified id {} unknown", m.id)));
                }
                if let Some(r) = u.removed.iter().find(|r| !g.contains_key(r)) {
                    return Err(Error::Protocol(format!("removed id {r} unknown")));
                }
                let g = &mut self.state.gaussians;
                for x in u.added.iter().chain(&u.modified) {
                    g.insert(x.id, x.clone());
                }
                for r in &u.removed {
                    g.remove(r);
                }
                self.state.revision = u.revision_to;
            }
        }
        Ok(())
    }
}
