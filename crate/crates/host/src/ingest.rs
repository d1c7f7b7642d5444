//! Frame sources: TCP peer, TCP listener, or session replay.

use std::io::{self, BufWriter, Write};
use std::sync::Arc;
use std::time::Instant;

use innervsense_core::event::{Event, EventKind};
use innervsense_core::model::PA_PER_COUNT;
use innervsense_core::session::Session;
use innervsense_core::telemetry::{emulate_device, DeviceStream, Frame, MsgType, Payload, StreamDecoder, TelemetryError};
use tokio::io::AsyncReadExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::messages::StreamMessage;
use crate::{HostConfig, HostError, Result, Shared, Source};

pub(crate) fn spawn(cfg: HostConfig, listener: Option<TcpListener>, shared: Arc<Shared>) -> JoinHandle<Result<()>> {
    tokio::spawn(async move {
        let mut stop = shared.shutdown.clone();
        let run = run(&cfg, listener, &shared);
        let out = tokio::select! {
            r = run => r,
            _ = crate::stopped(&mut stop) => Ok(()),
        };
        if let Err(e) = &out {
            log::error!("ingest stopped: {e}");
        }
        shared.source_ended.send_replace(true);
        shared.publish(shared.health_message());
        out
    })
}

async fn run(cfg: &HostConfig, listener: Option<TcpListener>, shared: &Arc<Shared>) -> Result<()> {
    match &cfg.source {
        Source::Connect(addr) => {
            let stream = connect(addr, cfg).await?;
            log::info!("connected to device at {addr}");
            pump_tcp(stream, shared).await
        }
        Source::Listen(_) => {
            let listener = listener.expect("listener bound for Listen source");
            loop {
                let (stream, peer) = listener.accept().await?;
                log::info!("device connected from {peer}");
                if let Err(e) = pump_tcp(stream, shared).await {
                    log::warn!("device {peer}: {e}");
                }
                log::info!("device {peer} disconnected");
            }
        }
        Source::Replay { dir, pacing } => {
            let (session, _) = Session::read(dir)?;
            let (pressure, _) = session.pressure()?;
            let (tx, mut rx) = mpsc::channel::<Vec<u8>>(256);
            let pacing = *pacing;
            if cfg.wait_for_client && shared.tx.receiver_count() == 0 {
                log::info!("replay waiting for a stream client");
                shared.client_joined.notified().await;
            }
            let emu = tokio::task::spawn_blocking(move || {
                let stream = DeviceStream {
                    device_id: session.manifest.device_id,
                    meta: None,
                    pressure: &pressure,
                    events: &session.events,
                };
                let mut sink = BufWriter::with_capacity(4096, ChannelWriter(tx));
                let report = emulate_device(stream, pacing, &mut sink)?;
                sink.flush().map_err(|source| TelemetryError::SinkClosed { report: report.clone(), source })?;
                Ok::<_, TelemetryError>(report)
            });
            let mut decoder = StreamDecoder::with_health(shared.health.clone());
            while let Some(chunk) = rx.recv().await {
                ingest_chunk(shared, &mut decoder, &chunk)?;
            }
            finish(shared, &mut decoder);
            let report = emu.await.map_err(|e| HostError::Join(e.to_string()))??;
            log::info!("replay finished: {} data frames in {:.2} s", report.data_frames, report.elapsed_s);
            Ok(())
        }
    }
}

async fn connect(addr: &str, cfg: &HostConfig) -> Result<TcpStream> {
    let deadline = Instant::now() + cfg.connect_timeout;
    let mut backoff = std::time::Duration::from_millis(50);
    loop {
        match TcpStream::connect(addr).await {
            Ok(s) => return Ok(s),
            Err(source) if Instant::now() + backoff >= deadline => {
                return Err(HostError::Connect { addr: addr.to_string(), source })
            }
            Err(e) => {
                log::debug!("connect {addr}: {e}; retrying");
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(std::time::Duration::from_secs(1));
            }
        }
    }
}

async fn pump_tcp(mut stream: TcpStream, shared: &Arc<Shared>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut decoder = StreamDecoder::with_health(shared.health.clone());
    let mut buf = vec![0u8; 8192];
    loop {
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            break;
        }
        ingest_chunk(shared, &mut decoder, &buf[..n])?;
    }
    finish(shared, &mut decoder);
    Ok(())
}

fn ingest_chunk(shared: &Shared, decoder: &mut StreamDecoder, bytes: &[u8]) -> Result<()> {
    shared.record_raw(bytes)?;
    decoder.push(bytes);
    while let Some(f) = decoder.next_frame() {
        publish_frame(shared, f);
    }
    Ok(())
}

fn finish(shared: &Shared, decoder: &mut StreamDecoder) {
    decoder.finish();
    while let Some(f) = decoder.next_frame() {
        publish_frame(shared, f);
    }
}

fn publish_frame(shared: &Shared, f: Frame) {
    let t_us = f.timestamp_us as i64;
    match &f.payload {
        Payload::Samples(counts) => {
            shared.note_sample(t_us);
            // Single-cavity pad: the first channel is the pressure.
            if let Some(&c) = counts.first() {
                shared.publish(StreamMessage::Sample {
                    t_s: t_us as f64 * 1e-6,
                    pa: f64::from(c) * PA_PER_COUNT,
                    device_id: f.device_id,
                    seq: f.seq,
                });
            }
        }
        Payload::Text(text) if f.msg_type == MsgType::Event => {
            let event = serde_json::from_str::<Event>(text)
                .unwrap_or_else(|_| Event::new(t_us, EventKind::Annotate).label(text.as_str()));
            shared.publish(StreamMessage::Event { t_s: event.t_s(), event });
        }
        Payload::Text(text) => log::info!("device meta: {text}"),
    }
}

/// Blocking writer feeding an async channel; a dropped receiver reads as a
/// broken pipe.
struct ChannelWriter(mpsc::Sender<Vec<u8>>);

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0
            .blocking_send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "host stopped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
