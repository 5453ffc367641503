//! Run manifests: the constants a run instantiated, its audits, and hashes
//! of every emitted artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NilError, Result};
use crate::highway::{ConstantsBundle, Mode};
use crate::shape::AuditReport;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub group: String,
    pub mode: Mode,
    pub constants: ConstantsBundle,
    /// Per-edge probability that truncation changes the resolution.
    pub truncation_bound: f64,
    pub audits: Vec<AuditReport>,
    /// File name to SHA-256 of its content.
    pub artifacts: BTreeMap<String, String>,
    /// SHA-256 of this manifest with `content_hash` blank and the wall
    /// clock zeroed.
    pub content_hash: String,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    fn hashed_form(&self) -> Result<String> {
        let mut m = self.clone();
        m.content_hash.clear();
        m.wall_clock_secs = 0.0;
        Ok(serde_json::to_string(&m)?)
    }

    pub fn seal(&mut self) -> Result<()> {
        self.content_hash = sha256_hex(self.hashed_form()?.as_bytes());
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.audits.iter().all(|a| a.passed())
    }

    /// Reads a manifest and re-checks its hash and every constant.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NilError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        let want = sha256_hex(m.hashed_form()?.as_bytes());
        if want != m.content_hash {
            return Err(NilError::Integrity(format!(
                "manifest {} content hash mismatch",
                path.display()
            )));
        }
        m.constants.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupModel;
    use crate::highway::Construction;
    use crate::norm::Norm;

    fn manifest() -> RunManifest {
        let z2 = GroupModel::abelian(2).unwrap();
        let cons = Construction::build(&z2, &Norm::lp(2.0, 2).unwrap(), Mode::Simple, 6, 0).unwrap();
        let mut m = RunManifest {
            tool_version: "test".into(),
            command: "run".into(),
            config_hash: sha256_hex(b"{}"),
            group: "zd:2".into(),
            mode: Mode::Simple,
            truncation_bound: cons.truncation_bound(),
            constants: cons.constants,
            audits: vec![],
            artifacts: BTreeMap::new(),
            content_hash: String::new(),
            wall_clock_secs: 1.5,
        };
        m.seal().unwrap();
        m
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn load_revalidates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = manifest();
        std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);

        // the wall clock is outside the hash
        let mut later = m.clone();
        later.wall_clock_secs = 99.0;
        std::fs::write(&path, serde_json::to_string_pretty(&later).unwrap()).unwrap();
        assert!(RunManifest::load(&path).is_ok());

        // a constant that breaks its inequality is caught even if resealed
        let mut bad = m.clone();
        bad.constants.k = 0.5;
        bad.seal().unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&bad).unwrap()).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(NilError::Integrity(_))));

        let mut tampered = m;
        tampered.truncation_bound = 0.0;
        std::fs::write(&path, serde_json::to_string_pretty(&tampered).unwrap()).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(NilError::Integrity(_))));
    }
}
