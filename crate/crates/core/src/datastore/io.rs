//! `BVED` layout, all little-endian:
//!
//! ```text
//! "BVED" | u16 version | u32 len + header JSON
//! per episode:
//!   u32 episode_id | u32 T | (T+1) x obs_dim f32 states | T i32 actions
//!   i32 final next action (-1 absent) | u8 final terminal flag
//!   T f64 rewards | T f64 returns-to-go | f64 episode return
//! u32 CRC32 of all preceding bytes
//! ```

use std::path::Path;

use super::{Dataset, DatasetError, DatasetHeader, EpisodeLog};
use crate::binfmt::{EnvelopeReader, EnvelopeWriter};
use crate::envs::Observation;

pub const DATASET_MAGIC: &[u8; 4] = b"BVED";
pub const DATASET_VERSION: u16 = 1;

pub fn to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut w = EnvelopeWriter::new(DATASET_MAGIC, DATASET_VERSION);
    w.blob(serde_json::to_string(dataset.header()).expect("header serializes").as_bytes());
    for ep in dataset.episodes() {
        let last = ep.last().expect("episodes are non-empty");
        w.u32(last.episode_id);
        w.u32(ep.len() as u32);
        for state in ep.iter().map(|r| &r.state).chain(std::iter::once(&last.next_state)) {
            state.iter().for_each(|&x| w.f32(x as f32));
        }
        ep.iter().for_each(|r| w.i32(r.action as i32));
        w.i32(last.next_action.map_or(-1, |a| a as i32));
        w.u8(last.terminal as u8);
        ep.iter().for_each(|r| w.f64(r.reward));
        ep.iter().for_each(|r| w.f64(r.return_to_go));
        w.f64(last.episode_return);
    }
    w.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    let mut r = EnvelopeReader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let header: DatasetHeader = serde_json::from_slice(r.blob()?)
        .map_err(|e| DatasetError::Inconsistent(format!("header json: {e}")))?;
    let dim = header.env_spec.observation_dim;
    let mut logs = Vec::with_capacity(header.num_episodes);
    let mut stored = Vec::with_capacity(header.num_episodes);
    for _ in 0..header.num_episodes {
        let episode_id = r.u32()?;
        let steps = r.u32()? as usize;
        let mut states = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            states.push(Observation::new((0..dim).map(|_| r.f32().map(f64::from)).collect::<Result<_, _>>()?));
        }
        let actions = (0..steps)
            .map(|_| r.i32().map(|a| a as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let next = r.i32()?;
        let terminal = r.u8()? != 0;
        let rewards = (0..steps).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let rtg = (0..steps).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let episode_return = r.f64()?;
        logs.push(EpisodeLog {
            episode_id,
            states,
            actions,
            rewards,
            terminal,
            final_next_action: (next >= 0).then_some(next as usize),
        });
        stored.push((rtg, episode_return));
    }
    r.expect_end()?;

    let mut dataset = Dataset::from_logs(
        header.env_spec.clone(),
        header.gamma,
        header.noise_epsilon,
        header.generator_description.clone(),
        logs,
    )?;
    // restore the stored annotations, then check them against the recursion
    for (ep, (rtg, ret)) in dataset.episodes.iter_mut().zip(stored) {
        for (rec, g) in ep.iter_mut().zip(rtg) {
            rec.return_to_go = g;
            rec.episode_return = ret;
        }
    }
    if dataset.header.num_transitions != header.num_transitions {
        return Err(DatasetError::Inconsistent("header transition count differs from body".into()));
    }
    dataset.header = header;
    dataset.validate()?;
    Ok(dataset)
}

fn with_path(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    std::fs::write(path.as_ref(), to_bytes(dataset)).map_err(|e| with_path(path.as_ref(), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    from_bytes(&std::fs::read(path.as_ref()).map_err(|e| with_path(path.as_ref(), e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{log_episodes, UniformPolicy};
    use crate::envs::{ActionNoise, Catch};

    fn catch_dataset() -> Dataset {
        let mut env = ActionNoise::new(Catch::new(), 0.25, 5).unwrap();
        log_episodes(&mut env, &mut UniformPolicy::new(3, 1), 12, 0.99, 2).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = catch_dataset();
        let bytes = to_bytes(&d);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catch.bved");
        let d = catch_dataset().subsample(0.5, 1).unwrap();
        save(&d, &path).unwrap();
        assert_eq!(load(&path).unwrap(), d);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = to_bytes(&catch_dataset());
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 10]), Err(DatasetError::ChecksumMismatch)));
        let mut magic = bytes.clone();
        magic[..4].copy_from_slice(b"BVEQ");
        assert!(matches!(from_bytes(&magic), Err(DatasetError::FormatVersionMismatch(_))));
    }
}
