//! `/runs/{id}/ws`: the run's events from a join point onward, in order.

use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::response::Response;
use nc_core::events::RunEvent;
use nc_core::store::RunId;
use tokio::sync::broadcast::error::RecvError;

use super::{blocking, AppState, SinceQuery, EVENTS_PROTOCOL};
use crate::ops::Workspace;

pub const CLOSE_UNKNOWN_RUN: u16 = 4404;

pub(super) async fn handler(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    upgrade: WebSocketUpgrade,
) -> Response {
    let upgrade = upgrade.protocols([EVENTS_PROTOCOL]);
    let found = match RunId::parse(&id) {
        Some(run) => {
            let st2 = st.clone();
            let r = run.clone();
            blocking(move || st2.run_workspace(&r)).await.ok().map(|ws| (run, ws))
        }
        None => None,
    };
    upgrade.on_upgrade(move |socket| async move {
        match found {
            Some((run, ws)) => stream(socket, st, ws, run, q.since.unwrap_or(0)).await,
            None => {
                let mut socket = socket;
                let _ = socket
                    .send(Message::Close(Some(CloseFrame {
                        code: CLOSE_UNKNOWN_RUN,
                        reason: "unknown run".into(),
                    })))
                    .await;
            }
        }
    })
}

async fn send(socket: &mut WebSocket, e: &RunEvent) -> bool {
    let text = serde_json::to_string(e).expect("event serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

/// Sends stored events from `next` on; returns the next unsent sequence
/// number, or `None` when the client went away.
async fn backfill(socket: &mut WebSocket, ws: &Workspace, run: &RunId, next: u64) -> Option<u64> {
    let (ws, r) = (ws.clone(), run.clone());
    let events = blocking(move || ws.events(&r, next)).await.unwrap_or_default();
    let start = next;
    let mut next = next;
    for e in events.iter().filter(|e| e.seq >= start) {
        if !send(socket, e).await {
            return None;
        }
        next = e.seq + 1;
    }
    Some(next)
}

async fn stream(mut socket: WebSocket, st: Arc<AppState>, ws: Workspace, run: RunId, since: u64) {
    // Subscribing before the backfill leaves no gap: events reach the
    // store before the hub.
    let mut rx = st.hub.subscribe(&run);
    let Some(mut next) = backfill(&mut socket, &ws, &run, since).await else {
        return;
    };
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(e) if e.seq < next => {}
                Ok(e) if e.seq == next => {
                    if !send(&mut socket, &e).await {
                        return;
                    }
                    next += 1;
                }
                Ok(_) | Err(RecvError::Lagged(_)) => {
                    let Some(n) = backfill(&mut socket, &ws, &run, next).await else { return };
                    next = n;
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
