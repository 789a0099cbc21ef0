//! HTTP + websocket front end.
//!
//! Routes: `GET /ws` (message channel), `GET /ranges` (slider manifest),
//! `GET /stats`, and with a UI directory every other path serves its files.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Json};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use headsplat_core::track::AnimationTrack;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::{ClientId, Session};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub fps_cap: f64,
    /// Static files for the browser UI.
    pub ui_dir: Option<PathBuf>,
}

pub fn router(session: Arc<Session>, ui_dir: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/ws", get(ws_handler))
        .route("/ranges", get(|State(s): State<Arc<Session>>| async move { Json(s.ranges()) }))
        .route("/stats", get(|State(s): State<Arc<Session>>| async move { Json(s.stats()) }));
    let r = match ui_dir {
        Some(dir) => r.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => r.route("/", get(|| async { "headsplat service: connect a websocket to /ws\n" })),
    };
    r.with_state(session)
}

pub async fn bind(addr: &str) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Runs the render worker and the endpoint until the process ends.
pub async fn serve(session: Arc<Session>, listener: TcpListener, options: ServeOptions) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!("listening on {addr}");
    }
    tokio::spawn(session.clone().run(options.fps_cap));
    axum::serve(listener, router(session, options.ui_dir)).await
}

/// Binds an ephemeral port and serves in the background.
pub async fn spawn_local(session: Arc<Session>, options: ServeOptions) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(serve(session, listener, options));
    Ok(addr)
}

async fn ws_handler(ws: WebSocketUpgrade, State(session): State<Arc<Session>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_loop(socket, session))
}

async fn client_loop(socket: WebSocket, session: Arc<Session>) {
    let channels = session.subscribe();
    let id = channels.id;
    let (mut sink, mut stream) = socket.split();
    let (mut frames, mut text) = (channels.frames, channels.text);
    session.send_text(id, &session.hello());

    let writer = tokio::spawn(async move {
        loop {
            let msg = tokio::select! {
                f = frames.recv() => match f {
                    Some(bytes) => Message::Binary(bytes.as_ref().clone().into()),
                    None => break,
                },
                t = text.recv() => match t {
                    Some(s) => Message::Text(s.into()),
                    None => break,
                },
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(t) => handle_text(&session, id, t.as_str()),
            Message::Binary(_) => session.send_text(
                id,
                &ServerMessage::Error {
                    message: "binary messages are not accepted".into(),
                },
            ),
            Message::Close(_) => break,
            _ => {}
        }
    }
    session.unsubscribe(id);
    writer.abort();
}

fn handle_text(session: &Session, id: ClientId, text: &str) {
    let reply_err = |m: String| session.send_text(id, &ServerMessage::Error { message: m });
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return reply_err(format!("malformed message: {e}")),
    };
    match msg {
        ClientMessage::SetParams(u) => {
            if let Err(e) = session.submit(u) {
                reply_err(e.to_string());
            }
        }
        ClientMessage::PlayTrack { path } => {
            let res = AnimationTrack::load(&path).and_then(|t| session.play_track(t, Some(id)));
            match res {
                Ok(frames) => session.send_text(id, &ServerMessage::TrackStarted { frames }),
                Err(e) => reply_err(e.to_string()),
            }
        }
        ClientMessage::GetStats => session.send_text(id, &ServerMessage::Stats(session.stats())),
        ClientMessage::SetFormat { format } => {
            session.set_format(format);
            session.send_text(id, &ServerMessage::FormatChanged { format });
        }
    }
}
