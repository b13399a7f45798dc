//! Annotation review service.
//!
//! One review task per manipulation region. Annotators fetch tasks, post
//! their codings, and the service resolves consensus by majority. Every
//! accepted write is appended to a journal and synced before it is
//! acknowledged; the task board is rebuilt from the journal on start.
//!
//! Endpoints (all under `/v1`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/tasks?status=` | task list |
//! | GET | `/tasks/{id}` | one task |
//! | POST | `/tasks/{id}/annotations` | store an `AnnotationRecord` |
//! | GET | `/tasks/{id}/consensus` | consensus and vote counts |
//! | POST | `/tasks/{id}/reopen` | send an escalated task back to pending |
//! | GET | `/images/{id}` | image bytes |
//! | GET | `/images/{id}/overlay` | region and face geometry |
//! | GET | `/agreement` | Cohen's and Fleiss' kappa over completed tasks |
//! | GET | `/export` | consensus JSONL |
//! | POST | `/hints` | replace machine hints from classifier predictions |

mod agreement;
mod api;
mod board;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use facegate::providers::{FaceSidecar, Manifest, ManipulationRegion};
use facegate::records::RecordError;
use tokio::sync::{Mutex, RwLock};

pub use agreement::{agreement, AgreementReport, FieldAgreement, PairAgreement, FIELDS};
pub use api::router;
pub use board::{Board, BoardError, Task, TaskStatus, TaskView};
pub use store::Store;

pub const PORT_ENV: &str = "FACEGATE_ANNOT_PORT";
pub const DATA_ENV: &str = "FACEGATE_ANNOT_DATA";
pub const DEFAULT_PORT: u16 = 8750;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Directory holding `journal.jsonl`.
    pub data_dir: PathBuf,
    /// Records needed before a task's consensus is computed.
    pub annotators: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            data_dir: PathBuf::from("annotations"),
            annotators: 3,
        }
    }
}

impl ServiceConfig {
    /// Applies `FACEGATE_ANNOT_PORT` and `FACEGATE_ANNOT_DATA` when set.
    pub fn with_env(mut self) -> Result<Self, String> {
        if let Ok(p) = std::env::var(PORT_ENV) {
            let port = p.parse().map_err(|_| format!("{PORT_ENV}={p} is not a port number"))?;
            self.bind.set_port(port);
        }
        if let Ok(d) = std::env::var(DATA_ENV) {
            self.data_dir = PathBuf::from(d);
        }
        Ok(self)
    }

    pub fn journal_path(&self) -> PathBuf {
        self.data_dir.join("journal.jsonl")
    }
}

pub struct Corpus {
    pub manifest: Manifest,
    pub regions: Vec<ManipulationRegion>,
    pub faces: Vec<FaceSidecar>,
}

pub struct AppState {
    pub(crate) board: RwLock<Board>,
    pub(crate) store: Mutex<Store>,
    pub(crate) manifest: Manifest,
}

pub struct Startup {
    pub state: Arc<AppState>,
    /// Entries replayed from the journal.
    pub replayed: usize,
    pub skipped: Vec<String>,
    pub truncated_tail: bool,
}

/// Loads the journal and rebuilds the task board.
pub fn open(config: &ServiceConfig, corpus: Corpus) -> Result<Startup, RecordError> {
    let (store, replay) = Store::open(&config.journal_path())?;
    let mut board = Board::new(&corpus.manifest, &corpus.regions, &corpus.faces, config.annotators);
    let mut skipped = Vec::new();
    for e in &replay.entries {
        if let Err(err) = board.apply(e) {
            skipped.push(err.to_string());
        }
    }
    Ok(Startup {
        state: Arc::new(AppState { board: RwLock::new(board), store: Mutex::new(store), manifest: corpus.manifest }),
        replayed: replay.entries.len(),
        skipped,
        truncated_tail: replay.truncated_tail,
    })
}

/// Serves until ctrl-c. Prints the bound address on stdout once listening.
pub async fn serve(config: &ServiceConfig, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
