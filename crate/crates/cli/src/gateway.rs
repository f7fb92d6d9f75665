//! HTTP lifecycle endpoints and the `/ws` live channel.

use std::sync::Arc;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use scriptmeet_core::engine::Delta;
use scriptmeet_core::persistence::{ExportFormat, PersistError};
use scriptmeet_core::protocol::{decode, decode_bytes, encode, ClientCommand, ClientMessage, DecodeError, ServerMessage};
use scriptmeet_core::{EngineError, SessionId, UserToken};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tracing::debug;

use crate::hub::{Hub, HubError, SessionHandle};

const OUTBOUND_CAPACITY: usize = 256;

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/join", post(join_session))
        .route("/sessions/{id}/export", get(export_session))
        .route("/ws", get(ws_upgrade))
        .with_state(hub)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

impl IntoResponse for HubError {
    fn into_response(self) -> Response {
        let status = match &self {
            HubError::Engine(EngineError::UnknownSession(_)) => StatusCode::NOT_FOUND,
            HubError::StorageUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            HubError::Persist(PersistError::UnknownFormat(_)) => StatusCode::BAD_REQUEST,
            HubError::Persist(_) => StatusCode::SERVICE_UNAVAILABLE,
            HubError::Engine(_) | HubError::InvalidSpeech(_) => StatusCode::BAD_REQUEST,
        };
        let body = ErrorBody {
            error_code: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

async fn index() -> Html<&'static str> {
    Html(include_str!("../static/index.html"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: SessionId,
    pub join_url: String,
    pub ws_url: String,
}

async fn create_session(State(hub): State<Arc<Hub>>) -> Result<(StatusCode, Json<CreatedSession>), HubError> {
    let session_id = hub.create_session()?;
    let created = CreatedSession {
        join_url: format!("/sessions/{session_id}/join"),
        ws_url: "/ws".into(),
        session_id,
    };
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinRequest {
    pub display_name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinResponse {
    pub token: UserToken,
    pub participant_number: u32,
}

async fn join_session(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Json(req): Json<JoinRequest>,
) -> Result<Json<JoinResponse>, HubError> {
    let (token, participant_number) = hub.join(&SessionId::new(id), &req.display_name)?;
    Ok(Json(JoinResponse {
        token,
        participant_number,
    }))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: Option<String>,
    viewer: Option<String>,
}

async fn export_session(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, HubError> {
    let handle = hub.session(&SessionId::new(id))?;
    let format: ExportFormat = q.format.as_deref().unwrap_or("text").parse()?;
    let viewer = q.viewer.map(UserToken::new);
    let body = handle.export(format, viewer.as_ref());
    let content_type = match format {
        ExportFormat::Text => "text/plain; charset=utf-8",
        ExportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn ws_upgrade(State(hub): State<Arc<Hub>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| serve_socket(hub, socket))
}

fn reject(command_ref: Option<String>, code: &str, message: impl Into<String>) -> ServerMessage {
    ServerMessage::Reject {
        command_ref,
        error_code: code.into(),
        message: message.into(),
    }
}

fn decode_reject(e: DecodeError) -> ServerMessage {
    reject(None, "decode_error", e.to_string())
}

struct Identity {
    token: UserToken,
    display_name: String,
}

struct Subscription {
    session: Arc<SessionHandle>,
    forward: JoinHandle<()>,
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.forward.abort();
    }
}

/// Connection loop: this task reads, a second task writes, and each
/// subscription adds a forwarder from the session broadcast.
async fn serve_socket(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbound) = mpsc::channel::<String>(OUTBOUND_CAPACITY);
    let writer = tokio::spawn(async move {
        while let Some(frame) = outbound.recv().await {
            if sink.send(Message::Text(Utf8Bytes::from(frame))).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let mut identity: Option<Identity> = None;
    let mut subscription: Option<Subscription> = None;
    while let Some(Ok(msg)) = stream.next().await {
        let decoded = match &msg {
            Message::Text(t) => decode::<ClientMessage>(t.as_str()),
            Message::Binary(b) => decode_bytes::<ClientMessage>(b),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        let reply = match decoded {
            Err(e) => Some(decode_reject(e)),
            Ok(m) => handle_message(&hub, m, &mut identity, &mut subscription, &out),
        };
        if let Some(reply) = reply {
            if out.send(encode(&reply)).await.is_err() {
                break;
            }
        }
    }
    drop(subscription);
    drop(out);
    let _ = writer.await;
}

fn handle_message(
    hub: &Arc<Hub>,
    msg: ClientMessage,
    identity: &mut Option<Identity>,
    subscription: &mut Option<Subscription>,
    out: &mpsc::Sender<String>,
) -> Option<ServerMessage> {
    if let ClientMessage::Hello { token, display_name } = msg {
        *subscription = None;
        *identity = Some(Identity { token, display_name });
        return None;
    }
    let Some(who) = identity.as_ref() else {
        return Some(reject(None, "hello_required", "send hello first"));
    };
    match msg {
        ClientMessage::Subscribe { session_id, from_seq } => {
            let handle = match hub.session(&session_id) {
                Ok(h) => h,
                Err(e) => return Some(e.to_message(None)),
            };
            // an unseen token joins under its hello name
            if handle.is_present(&who.token).is_none() {
                if let Err(e) = handle.join(&who.display_name, who.token.clone()) {
                    return Some(e.to_message(None));
                }
            }
            *subscription = None;
            let (catch_up, rx) = handle.subscribe(from_seq, &who.token);
            let forward = tokio::spawn(forward(handle.clone(), who.token.clone(), catch_up, rx, out.clone()));
            *subscription = Some(Subscription {
                session: handle,
                forward,
            });
            None
        }
        ClientMessage::Command { id, command } => {
            let Some(sub) = subscription.as_ref() else {
                return Some(reject(Some(id), "not_subscribed", "subscribe to a session first"));
            };
            let result = match command {
                ClientCommand::Speak { text } => sub.session.speak(&who.token, &text).map(|_| ()),
                other => match other.into_command(who.token.clone()) {
                    Some(cmd) => sub.session.submit(cmd, Some((&who.token, &id))).map(|_| ()),
                    None => Ok(()),
                },
            };
            result.err().map(|e| e.to_message(Some(id)))
        }
        ClientMessage::Ping => Some(ServerMessage::Pong),
        ClientMessage::Hello { .. } => None,
    }
}

/// Sends catch-up messages, then every later delta projected for `viewer`.
/// A lagging receiver resumes from the last seq it delivered.
async fn forward(
    session: Arc<SessionHandle>,
    viewer: UserToken,
    mut catch_up: Vec<ServerMessage>,
    mut rx: broadcast::Receiver<Arc<Delta>>,
    out: mpsc::Sender<String>,
) {
    let mut sent = 0u64;
    loop {
        for m in catch_up.drain(..) {
            match &m {
                ServerMessage::Welcome { last_seq, .. } => sent = *last_seq,
                ServerMessage::Event { seq, .. } => sent = *seq,
                _ => {}
            }
            if out.send(encode(&m)).await.is_err() {
                return;
            }
        }
        loop {
            match rx.recv().await {
                Ok(delta) => {
                    if delta.seq <= sent {
                        continue;
                    }
                    sent = delta.seq;
                    if out.send(encode(&ServerMessage::event(&delta, Some(&viewer)))).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    debug!(viewer = %viewer, skipped = n, "subscriber lagged, resuming");
                    let (msgs, fresh) = session.subscribe(sent, &viewer);
                    catch_up = msgs;
                    rx = fresh;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            }
        }
    }
}
