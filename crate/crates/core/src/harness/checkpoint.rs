//! Training checkpoints as JSON. Floats are written in shortest round-trip
//! form, so a reloaded run continues bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::neural::{AgentRecord, Mlp};
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Ducm1,
    Ducm2,
}

/// Policies of the best periodic greedy evaluation so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPolicies {
    pub episode: usize,
    pub connected: usize,
    pub policies: Vec<Mlp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub trainer: TrainerKind,
    /// Episodes completed.
    pub episode: usize,
    pub agents: Vec<AgentRecord>,
    pub best: Option<BestPolicies>,
    /// Quit-order stream of the dynamic trainer.
    pub plan_rng: Option<RngState>,
}

impl Checkpoint {
    /// Refuses a checkpoint written under a different configuration.
    pub fn verify_config(&self, cfg: &RunConfig) -> Result<()> {
        let expected = cfg.hash();
        if self.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                found: self.config_hash.clone(),
                expected,
            });
        }
        Ok(())
    }

    pub fn policies(&self) -> Vec<Mlp> {
        self.agents.iter().map(|a| a.main.clone()).collect()
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptCheckpoint("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let ckpt: Checkpoint =
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if ckpt.config.hash() != ckpt.config_hash {
        return Err(Error::CorruptCheckpoint("embedded config does not match its hash".into()));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ducm1::Ducm1Trainer;
    use crate::ducm2::Ducm2Trainer;

    fn tiny() -> RunConfig {
        let mut c = RunConfig {
            seed: 11,
            ..Default::default()
        };
        c.grid.m = 5;
        c.users.n_users = 20;
        c.users.n_hotspots = 1;
        c.fleet.n_uavs = 2;
        c.learning.n_episodes = 4;
        c.learning.batch_size = 8;
        c.learning.eval_every = 1;
        c.ducm1.steps_per_episode = 10;
        c.ducm1.hidden = Some(vec![8, 8]);
        c.ducm2.steps_per_episode = 20;
        c.ducm2.hidden = vec![8, 8];
        c
    }

    #[test]
    fn ducm1_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut a = Ducm1Trainer::new(tiny()).unwrap();
        a.run_episode().unwrap();
        a.run_episode().unwrap();
        save_checkpoint(&path, &a.checkpoint()).unwrap();
        let next = a.run_episode().unwrap();

        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.episode, 2);
        let mut b = Ducm1Trainer::from_checkpoint(tiny(), ckpt).unwrap();
        assert_eq!(b.run_episode().unwrap(), next);
        assert_eq!(b.checkpoint(), a.checkpoint());
    }

    #[test]
    fn ducm2_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut a = Ducm2Trainer::new(tiny()).unwrap();
        a.run_episode().unwrap();
        save_checkpoint(&path, &a.checkpoint()).unwrap();
        let r2 = a.run_episode().unwrap();
        let r3 = a.run_episode().unwrap();

        let mut b = Ducm2Trainer::from_checkpoint(tiny(), load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(b.run_episode().unwrap(), r2);
        assert_eq!(b.run_episode().unwrap(), r3);
    }

    #[test]
    fn refuses_other_config_and_trainer() {
        let t = Ducm1Trainer::new(tiny()).unwrap();
        let mut other = tiny();
        other.reward.d_p = 0.5;
        let err = Ducm1Trainer::from_checkpoint(other, t.checkpoint()).err().unwrap();
        assert!(matches!(err, Error::ConfigHashMismatch { .. }));
        let err = Ducm2Trainer::from_checkpoint(tiny(), t.checkpoint()).err().unwrap();
        assert!(matches!(err, Error::CorruptCheckpoint(_)));
    }

    #[test]
    fn damaged_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let t = Ducm1Trainer::new(tiny()).unwrap();
        save_checkpoint(&path, &t.checkpoint()).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

        fs::write(&path, text.replacen("\"format_version\":1", "\"format_version\":99", 1)).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));

        fs::write(&path, text.replacen("\"seed\":11", "\"seed\":12", 1)).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

        assert!(matches!(load_checkpoint(&dir.path().join("missing.json")), Err(Error::Io { .. })));
    }
}
