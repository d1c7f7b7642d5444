//! HTTP side: WebSocket stream and control endpoints plus static assets.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::messages::{ControlReply, ControlRequest, StreamMessage};
use crate::Shared;

const PLACEHOLDER: &str = "<!doctype html><meta charset=utf-8><title>innervsense host</title>\
<p>Dashboard assets are not installed. Live endpoints: \
<code>/ws/stream</code>, <code>/ws/control</code>, <code>/api/health</code>.</p>";

pub(crate) fn spawn(listener: TcpListener, shared: Arc<Shared>, ui_dir: Option<PathBuf>) -> JoinHandle<std::io::Result<()>> {
    let mut stop = shared.shutdown.clone();
    let api = Router::new()
        .route("/ws/stream", get(ws_stream))
        .route("/ws/control", get(ws_control))
        .route("/api/health", get(health))
        .with_state(shared);
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { Html(PLACEHOLDER) }),
    };
    tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                crate::stopped(&mut stop).await;
            })
            .await
    })
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<StreamMessage> {
    Json(shared.health_message())
}

async fn ws_stream(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| stream_client(socket, shared))
}

async fn ws_control(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| control_client(socket, shared))
}

fn text(m: &impl serde::Serialize) -> Message {
    Message::Text(serde_json::to_string(m).expect("message serializes").into())
}

/// Forwards the broadcast to one client. A lagging client loses the oldest
/// messages; the loss is reported in its health messages.
async fn stream_client(socket: WebSocket, shared: Arc<Shared>) {
    let mut rx = shared.tx.subscribe();
    shared.client_joined.notify_one();
    let mut stop = shared.shutdown.clone();
    let (mut out, mut inbound) = socket.split();
    let mut dropped = 0u64;
    // Greet with the current health so clients see state before data flows.
    let mut hello = shared.health_message();
    if let StreamMessage::Health { clients, .. } = &mut hello {
        *clients = shared.tx.receiver_count();
    }
    if out.send(text(&hello)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(m) => {
                    let sent = match &*m {
                        StreamMessage::Health { t_s, health, clients, source_ended, .. } => {
                            let m = StreamMessage::Health {
                                t_s: *t_s,
                                health: *health,
                                dropped,
                                clients: *clients,
                                source_ended: *source_ended,
                            };
                            out.send(text(&m)).await
                        }
                        m => out.send(text(m)).await,
                    };
                    if sent.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    dropped += n;
                    log::debug!("stream client lagged, dropped {n}");
                }
                Err(RecvError::Closed) => break,
            },
            incoming = inbound.next() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
            _ = crate::stopped(&mut stop) => break,
        }
    }
    let _ = out.send(Message::Close(None)).await;
}

async fn control_client(mut socket: WebSocket, shared: Arc<Shared>) {
    let mut stop = shared.shutdown.clone();
    loop {
        let msg = tokio::select! {
            m = socket.recv() => m,
            _ = crate::stopped(&mut stop) => break,
        };
        let body = match msg {
            Some(Ok(Message::Text(t))) => t.to_string(),
            Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        let reply = match serde_json::from_str::<ControlRequest>(&body) {
            Ok(req) => shared.control(req),
            Err(e) => ControlReply::Error { id: None, message: format!("bad control message: {e}") },
        };
        if socket.send(text(&reply)).await.is_err() {
            break;
        }
    }
}
