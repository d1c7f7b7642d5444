//! Live host service. Ingests device frames from a TCP peer or replays a
//! stored session, fans samples out to dashboard clients over WebSocket,
//! accepts operator annotations on a control socket and optionally records
//! everything as a new session.
//!
//! Endpoints on the UI address:
//! - `GET /ws/stream`: JSON [`StreamMessage`]s (`sample`, `event`, `health`)
//! - `GET /ws/control`: JSON [`ControlRequest`]s in, [`ControlReply`]s out
//! - `GET /api/health`: current [`HealthSnapshot`]
//! - anything else: static files from the UI directory

mod ingest;
pub mod messages;
mod web;

use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use innervsense_core::event::Event;
use innervsense_core::session::{self, Manifest, SessionError, SessionRecorder};
use innervsense_core::telemetry::{HealthSnapshot, Pacing, StreamHealth, TelemetryError};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch, Notify};
use tokio::task::JoinHandle;

pub use messages::{ControlAction, ControlReply, ControlRequest, StreamMessage};

/// Per-client stream queue length; the oldest messages are dropped beyond it.
pub const DEFAULT_QUEUE: usize = 1024;

#[derive(Debug, Error)]
pub enum HostError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: std::io::Error },
    #[error("ingest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("task failed: {0}")]
    Join(String),
}

pub type Result<T, E = HostError> = std::result::Result<T, E>;

/// Where frames come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Dial a device (or emulator) listening on this address.
    Connect(String),
    /// Accept device connections on this address, one at a time.
    Listen(SocketAddr),
    /// Replay a stored session through the same decode path.
    Replay { dir: PathBuf, pacing: Pacing },
}

impl FromStr for Source {
    type Err = String;

    /// `listen:<addr>` listens, an existing directory replays in real time,
    /// anything else is dialled.
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(a) = s.strip_prefix("listen:") {
            return a.parse().map(Source::Listen).map_err(|e| format!("bad listen address {a:?}: {e}"));
        }
        if Path::new(s).is_dir() {
            return Ok(Source::Replay { dir: s.into(), pacing: Pacing::Realtime });
        }
        if s.is_empty() {
            return Err("empty source".into());
        }
        Ok(Source::Connect(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub source: Source,
    pub ui_addr: SocketAddr,
    /// Static dashboard assets; a placeholder page is served when absent.
    pub ui_dir: Option<PathBuf>,
    /// Record the ingested stream and control events as a new session here.
    pub record: Option<PathBuf>,
    pub overwrite: bool,
    pub queue_capacity: usize,
    pub health_interval: Duration,
    /// How long to keep retrying a [`Source::Connect`] peer.
    pub connect_timeout: Duration,
    /// Hold a replay until the first stream client subscribes.
    pub wait_for_client: bool,
}

impl HostConfig {
    pub fn new(source: Source, ui_addr: SocketAddr) -> Self {
        Self {
            source,
            ui_addr,
            ui_dir: None,
            record: None,
            overwrite: false,
            queue_capacity: DEFAULT_QUEUE,
            health_interval: Duration::from_secs(1),
            connect_timeout: Duration::from_secs(10),
            wait_for_client: false,
        }
    }
}

#[allow(clippy::large_enum_variant)] // one per host
enum EventLog {
    Recorder(SessionRecorder),
    /// Append straight to an existing session's event log.
    File(PathBuf),
}

impl EventLog {
    fn append(&mut self, e: &Event) -> Result<()> {
        match self {
            EventLog::Recorder(r) => Ok(r.append_event(e)?),
            EventLog::File(p) => {
                let mut f = OpenOptions::new().append(true).open(p)?;
                writeln!(f, "{}", serde_json::to_string(e).expect("event serializes"))?;
                Ok(())
            }
        }
    }
}

/// Device-timeline clock: the last sample timestamp advanced by wall time
/// since it arrived. Control events are stamped from it so they line up with
/// the data, and are forced strictly increasing.
struct Clock {
    started: Instant,
    last_sample: Option<(i64, Instant)>,
    last_control_us: Option<i64>,
}

impl Clock {
    fn now_us(&self) -> i64 {
        match self.last_sample {
            Some((t, at)) => t + at.elapsed().as_micros() as i64,
            None => self.started.elapsed().as_micros() as i64,
        }
    }

    fn stamp_control(&mut self) -> i64 {
        let mut t = self.now_us();
        if let Some(prev) = self.last_control_us {
            t = t.max(prev + 1);
        }
        self.last_control_us = Some(t);
        t
    }
}

pub(crate) struct Shared {
    tx: broadcast::Sender<Arc<StreamMessage>>,
    health: Arc<StreamHealth>,
    clock: Mutex<Clock>,
    log: Mutex<Option<EventLog>>,
    source_ended: watch::Sender<bool>,
    shutdown: watch::Receiver<bool>,
    client_joined: Notify,
}

/// Resolves once shutdown is requested.
pub(crate) async fn stopped(rx: &mut watch::Receiver<bool>) {
    // An error means the host was dropped, which also means stop.
    let _ = rx.wait_for(|s| *s).await;
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn publish(&self, m: StreamMessage) {
        // No receivers is not an error.
        let _ = self.tx.send(Arc::new(m));
    }

    fn note_sample(&self, t_us: i64) {
        lock(&self.clock).last_sample = Some((t_us, Instant::now()));
    }

    fn device_time_s(&self) -> f64 {
        lock(&self.clock).last_sample.map_or(0.0, |(t, _)| t as f64 * 1e-6)
    }

    fn record_raw(&self, bytes: &[u8]) -> Result<()> {
        if let Some(EventLog::Recorder(r)) = lock(&self.log).as_mut() {
            r.append_raw(bytes)?;
        }
        Ok(())
    }

    fn health_message(&self) -> StreamMessage {
        StreamMessage::Health {
            t_s: self.device_time_s(),
            health: self.health.snapshot(),
            dropped: 0,
            clients: self.tx.receiver_count(),
            source_ended: *self.source_ended.borrow(),
        }
    }

    /// Stamps, persists and broadcasts an operator event.
    fn control(&self, req: ControlRequest) -> ControlReply {
        let t_us = lock(&self.clock).stamp_control();
        let mut e = Event::new(t_us, req.action.into()).source("control");
        e.label = req.label;
        e.condition = req.condition;
        e.mass_kg = req.mass_kg;
        e.angle_deg = req.angle_deg;
        e.host_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_millis() as u64);
        let persisted = match lock(&self.log).as_mut() {
            None => Ok(false),
            Some(log) => log.append(&e).map(|_| true),
        };
        match persisted {
            Ok(persisted) => {
                self.publish(StreamMessage::Event { t_s: e.t_s(), event: e.clone() });
                ControlReply::Ack { id: req.id, event: e, persisted }
            }
            Err(err) => {
                log::error!("persisting control event failed: {err}");
                ControlReply::Error { id: req.id, message: format!("not persisted: {err}") }
            }
        }
    }
}

/// A running host. Dropping it without [`shutdown`](Self::shutdown) leaves
/// the recording without a manifest.
pub struct Host {
    ui_addr: SocketAddr,
    ingest_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    ingest: JoinHandle<Result<()>>,
    ticker: JoinHandle<()>,
}

impl Host {
    pub async fn start(cfg: HostConfig) -> Result<Host> {
        let log = match (&cfg.record, &cfg.source) {
            (Some(dir), src) => {
                let address = match src {
                    Source::Connect(a) => a.clone(),
                    Source::Listen(a) => format!("listen:{a}"),
                    Source::Replay { dir, .. } => dir.display().to_string(),
                };
                let id = dir.file_name().map_or_else(|| "recording".into(), |n| n.to_string_lossy().into_owned());
                let rec = SessionRecorder::create(dir, Manifest::for_device(id, address, 0), cfg.overwrite)?;
                Some(EventLog::Recorder(rec))
            }
            (None, Source::Replay { dir, .. }) => {
                session::read_manifest(dir)?;
                Some(EventLog::File(dir.join(session::EVENTS)))
            }
            (None, _) => None,
        };

        let (tx, _) = broadcast::channel(cfg.queue_capacity.max(1));
        let (shutdown, shutdown_rx) = watch::channel(false);
        let (source_ended, _) = watch::channel(false);
        let shared = Arc::new(Shared {
            tx,
            health: Arc::new(StreamHealth::default()),
            clock: Mutex::new(Clock { started: Instant::now(), last_sample: None, last_control_us: None }),
            log: Mutex::new(log),
            source_ended,
            shutdown: shutdown_rx,
            client_joined: Notify::new(),
        });

        let ui = TcpListener::bind(cfg.ui_addr).await.map_err(|source| HostError::Bind { addr: cfg.ui_addr, source })?;
        let ui_addr = ui.local_addr()?;
        let (ingest_listener, ingest_addr) = match &cfg.source {
            Source::Listen(addr) => {
                let l = TcpListener::bind(addr).await.map_err(|source| HostError::Bind { addr: *addr, source })?;
                let a = l.local_addr()?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };

        let server = web::spawn(ui, shared.clone(), cfg.ui_dir.clone());
        let ingest = ingest::spawn(cfg.clone(), ingest_listener, shared.clone());
        let ticker = {
            let shared = shared.clone();
            let mut stop = shared.shutdown.clone();
            let every = cfg.health_interval;
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                loop {
                    tokio::select! {
                        _ = tick.tick() => shared.publish(shared.health_message()),
                        _ = stop.changed() => break,
                    }
                }
            })
        };
        log::info!("host serving on http://{ui_addr}");
        Ok(Host { ui_addr, ingest_addr, shared, shutdown, server, ingest, ticker })
    }

    pub fn ui_addr(&self) -> SocketAddr {
        self.ui_addr
    }

    /// Bound device-ingest address for [`Source::Listen`].
    pub fn ingest_addr(&self) -> Option<SocketAddr> {
        self.ingest_addr
    }

    pub fn health(&self) -> HealthSnapshot {
        self.shared.health.snapshot()
    }

    /// Resolves once the source has ended (peer closed or replay finished).
    pub async fn source_ended(&self) {
        let mut rx = self.shared.source_ended.subscribe();
        // The sender lives in `shared`, so this cannot fail.
        let _ = rx.wait_for(|ended| *ended).await;
    }

    /// Stops all tasks and finalizes the recording, returning its health.
    pub async fn shutdown(self) -> Result<Option<HealthSnapshot>> {
        let _ = self.shutdown.send(true);
        let ingest = self.ingest.await.map_err(|e| HostError::Join(e.to_string()))?;
        let _ = self.ticker.await;
        match self.server.await {
            Ok(Ok(())) => {}
            Ok(Err(e)) => log::warn!("ui server ended with error: {e}"),
            Err(e) => log::warn!("ui server task failed: {e}"),
        }
        let log = lock(&self.shared.log).take();
        let health = match log {
            Some(EventLog::Recorder(r)) => Some(r.finish()?),
            _ => None,
        };
        ingest?;
        Ok(health)
    }
}
