//! Live subcommands: device emulator, recorder and dashboard host.

use std::net::{SocketAddr, TcpListener};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use innervsense_core::session::{Manifest, Session, SessionRecorder};
use innervsense_core::sim::run_scenario;
use innervsense_core::telemetry::{emulate_device, DeviceStream, TelemetryError};
use innervsense_host::{Host, HostConfig, Source};
use serde_json::{json, Value};
use tokio::io::AsyncReadExt;

use crate::{read_session, DeviceEmuArgs, RecordArgs, ServeArgs};

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub(crate) fn device_emu(a: &DeviceEmuArgs) -> Result<Value> {
    let (session, label) = match &a.session {
        Some(dir) => (read_session(dir)?, dir.display().to_string()),
        None => {
            let sc = a.scenario.resolve()?;
            let data = run_scenario(&sc, &sc.pad)?;
            let label = format!("{}:{}", sc.name(), sc.seed);
            (Session::from_simulation(&data, a.device_id)?, label)
        }
    };
    let (pressure, _) = session.pressure()?;
    let meta = json!({ "source": label, "sample_rate_hz": session.manifest.sample_rate_hz }).to_string();

    let listener = TcpListener::bind(a.listen).with_context(|| format!("cannot listen on {}", a.listen))?;
    let addr = listener.local_addr()?;
    // Scripts read the bound address from here when asking for port 0.
    eprintln!("listening on {addr}");
    let mut reports = Vec::new();
    let mut served = 0u32;
    while a.connections == 0 || served < a.connections {
        let (mut sock, peer) = listener.accept()?;
        sock.set_nodelay(true)?;
        log::info!("client {peer} connected");
        let stream = DeviceStream { device_id: a.device_id, meta: Some(&meta), pressure: &pressure, events: &session.events };
        let report = match emulate_device(stream, a.pacing, &mut sock) {
            Ok(r) => json!({ "peer": peer, "completed": true, "report": r }),
            Err(TelemetryError::SinkClosed { report, source }) => {
                log::warn!("client {peer} went away: {source}");
                json!({ "peer": peer, "completed": false, "report": report })
            }
            Err(e) => return Err(e.into()),
        };
        drop(sock);
        reports.push(report);
        served += 1;
    }
    Ok(json!({ "listen": addr, "pacing": a.pacing, "samples": pressure.len(), "clients": reports }))
}

async fn dial(addr: &str, timeout: Duration) -> Result<tokio::net::TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match tokio::net::TcpStream::connect(addr).await {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e).with_context(|| format!("cannot connect to {addr}")),
            Err(_) => tokio::time::sleep(Duration::from_millis(100)).await,
        }
    }
}

pub(crate) fn record(a: &RecordArgs) -> Result<Value> {
    if !(a.connect_timeout >= 0.0 && a.connect_timeout.is_finite()) {
        bail!("--connect-timeout must be a non-negative number of seconds");
    }
    let id = a.out.file_name().map_or_else(|| "recording".to_string(), |n| n.to_string_lossy().into_owned());
    let mut rec = SessionRecorder::create(&a.out, Manifest::for_device(id, a.connect.clone(), 0), a.overwrite)
        .with_context(|| format!("creating session {}", a.out.display()))?;
    let rt = runtime()?;
    let (bytes, interrupted) = rt.block_on(async {
        let mut sock = dial(&a.connect, Duration::from_secs_f64(a.connect_timeout)).await?;
        log::info!("recording {} into {}", a.connect, a.out.display());
        let mut buf = vec![0u8; 8192];
        let mut total = 0u64;
        loop {
            tokio::select! {
                n = sock.read(&mut buf) => {
                    let n = n.context("reading device stream")?;
                    if n == 0 {
                        return Ok::<_, anyhow::Error>((total, false));
                    }
                    rec.append_raw(&buf[..n])?;
                    total += n as u64;
                }
                _ = tokio::signal::ctrl_c() => return Ok((total, true)),
            }
        }
    })?;
    let health = rec.finish()?;
    let (session, _) = Session::read(&a.out)?;
    let (pressure, _) = session.pressure()?;
    Ok(json!({
        "out": a.out,
        "bytes": bytes,
        "interrupted": interrupted,
        "samples": pressure.len(),
        "events": session.events.len(),
        "health": health,
    }))
}

pub(crate) fn serve(a: &ServeArgs) -> Result<Value> {
    let mut source: Source = a.source.parse().map_err(anyhow::Error::msg)?;
    let replay = matches!(source, Source::Replay { .. });
    if let Source::Replay { pacing, .. } = &mut source {
        *pacing = a.pacing;
    }
    let mut cfg = HostConfig::new(source, SocketAddr::new(a.ui_host, a.ui_port));
    cfg.ui_dir = a.ui_dir.clone();
    cfg.record = a.record.clone();
    cfg.overwrite = a.overwrite;
    cfg.wait_for_client = replay;
    let rt = runtime()?;
    rt.block_on(async {
        let host = Host::start(cfg).await?;
        eprintln!("dashboard on http://{}", host.ui_addr());
        if let Some(ingest) = host.ingest_addr() {
            eprintln!("device ingest on {ingest}");
        }
        let interrupted = if a.exit_on_end {
            tokio::select! {
                _ = host.source_ended() => false,
                _ = tokio::signal::ctrl_c() => true,
            }
        } else {
            tokio::signal::ctrl_c().await?;
            true
        };
        let health = host.health();
        let recording = host.shutdown().await?;
        Ok(json!({ "interrupted": interrupted, "health": health, "recording": recording }))
    })
}
