//! Picks the transport for a run. `--mock` never constructs a socket-capable
//! transport at all.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use dba_core::cassette::{RecordingTransport, ReplayTransport};
use dba_core::http::{Transport, UreqTransport};
use dba_core::maps::mock::MockMapsService;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetMode {
    Mock,
    Replay(PathBuf),
    Record(PathBuf),
    Live,
}

pub struct Net {
    pub mode: NetMode,
    pub transport: Arc<dyn Transport>,
    recorder: Option<Arc<RecordingTransport<UreqTransport>>>,
}

impl Net {
    pub fn open(mode: NetMode) -> anyhow::Result<Net> {
        let (transport, recorder): (Arc<dyn Transport>, _) = match &mode {
            NetMode::Mock => (Arc::new(MockMapsService::new()), None),
            NetMode::Replay(path) => {
                if !path.is_file() {
                    anyhow::bail!("replay cassette {} does not exist; nothing can be replayed", path.display());
                }
                let replay = ReplayTransport::from_file(path)
                    .with_context(|| format!("cannot load cassette {}", path.display()))?;
                (Arc::new(replay), None)
            }
            NetMode::Record(_) => {
                let rec = Arc::new(RecordingTransport::new(UreqTransport::default()));
                (rec.clone(), Some(rec))
            }
            NetMode::Live => (Arc::new(UreqTransport::default()), None),
        };
        Ok(Net {
            mode,
            transport,
            recorder,
        })
    }

    pub fn is_mock(&self) -> bool {
        self.mode == NetMode::Mock
    }

    pub fn is_offline(&self) -> bool {
        matches!(self.mode, NetMode::Mock | NetMode::Replay(_))
    }

    /// Writes the recorded cassette, if recording.
    pub fn finish(&self) -> anyhow::Result<Option<&Path>> {
        match (&self.recorder, &self.mode) {
            (Some(rec), NetMode::Record(path)) => {
                rec.save(path)
                    .with_context(|| format!("cannot write cassette {}", path.display()))?;
                Ok(Some(path.as_path()))
            }
            _ => Ok(None),
        }
    }
}
