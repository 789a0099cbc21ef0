//! One live scene: a latest-wins parameter slot, a track queue, a single
//! render worker and non-blocking frame fan-out.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use headsplat_core::bundle::SceneBundle;
use headsplat_core::camera::CameraRig;
use headsplat_core::config::FrameFormat;
use headsplat_core::head::HeadParams;
use headsplat_core::raster::{render, RenderOptions};
use headsplat_core::scene::GaussianCloud;
use headsplat_core::track::AnimationTrack;
use headsplat_core::{Error, Result};
use serde::Serialize;
use tokio::sync::{mpsc, Notify};

use crate::frame::encode_frame;
use crate::protocol::{ParamUpdate, ServerMessage, Stats};

/// Number of recent frame times kept for mean/percentile stats.
const STATS_WINDOW: usize = 256;

pub type ClientId = u64;

/// Receiving ends handed to a connected client.
pub struct ClientChannels {
    pub id: ClientId,
    pub frames: mpsc::Receiver<Arc<Vec<u8>>>,
    pub text: mpsc::UnboundedReceiver<String>,
}

struct Client {
    id: ClientId,
    frames: mpsc::Sender<Arc<Vec<u8>>>,
    text: mpsc::UnboundedSender<String>,
}

struct TrackProgress {
    requester: Option<ClientId>,
    total: usize,
    ids: Mutex<Vec<u32>>,
}

struct TrackItem {
    params: HeadParams,
    camera: Option<CameraRig>,
    progress: Arc<TrackProgress>,
}

#[derive(Default)]
struct Pending {
    latest: Option<ParamUpdate>,
    track: VecDeque<TrackItem>,
}

struct Current {
    params: HeadParams,
    camera: CameraRig,
    format: FrameFormat,
    next_id: u32,
}

#[derive(Default)]
struct StatsAcc {
    rendered: u64,
    first_start: Option<Instant>,
    recent_ms: VecDeque<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame_id: u32,
    pub params: HeadParams,
    pub camera: CameraRig,
    pub bytes: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

/// Slider ranges and the initial camera, for UIs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangesManifest {
    pub shape: Range,
    pub expression: Range,
    /// Axis-angle components per joint, radians.
    pub pose: Range,
    pub root_joint: usize,
    pub camera: CameraRig,
    /// Orbit target (the head origin in world space).
    pub orbit_target: [f64; 3],
    pub orbit_radius: f64,
    /// Orbit angles of the initial camera, radians.
    pub orbit_azimuth: f64,
    pub orbit_elevation: f64,
}

pub struct Session {
    scene: SceneBundle,
    base: GaussianCloud,
    options: RenderOptions,
    client_buffer: usize,
    pending: Mutex<Pending>,
    current: Mutex<Current>,
    stats: Mutex<StatsAcc>,
    dropped: AtomicU64,
    clients: Mutex<Vec<Client>>,
    next_client: AtomicU64,
    wake: Notify,
}

impl Session {
    pub fn new(
        scene: SceneBundle,
        camera: CameraRig,
        options: RenderOptions,
        format: FrameFormat,
        client_buffer: usize,
    ) -> Result<Session> {
        scene.validate()?;
        camera.validate()?;
        options.constants.validate()?;
        if client_buffer == 0 {
            return Err(Error::invalid("client buffer must hold at least one frame"));
        }
        let base = scene.composed();
        let params = scene.neutral_params();
        Ok(Session {
            scene,
            base,
            options,
            client_buffer,
            pending: Mutex::new(Pending::default()),
            current: Mutex::new(Current {
                params,
                camera,
                format,
                next_id: 1,
            }),
            stats: Mutex::new(StatsAcc::default()),
            dropped: AtomicU64::new(0),
            clients: Mutex::new(Vec::new()),
            next_client: AtomicU64::new(1),
            wake: Notify::new(),
        })
    }

    pub fn scene(&self) -> &SceneBundle {
        &self.scene
    }

    pub fn format(&self) -> FrameFormat {
        self.current.lock().unwrap().format
    }

    pub fn set_format(&self, format: FrameFormat) {
        self.current.lock().unwrap().format = format;
    }

    pub fn hello(&self) -> ServerMessage {
        let cur = self.current.lock().unwrap();
        ServerMessage::Hello {
            width: cur.camera.width,
            height: cur.camera.height,
            format: cur.format,
            n_shape: self.scene.model.n_shape,
            n_expression: self.scene.model.n_expression,
            n_joints: self.scene.model.n_joints(),
        }
    }

    pub fn ranges(&self) -> RangesManifest {
        let m = &self.scene.model;
        let camera = self.current.lock().unwrap().camera.clone();
        let target = self.scene.head_transform.translation;
        let offset = camera.center() - target;
        RangesManifest {
            shape: Range {
                count: m.n_shape,
                min: -3.0,
                max: 3.0,
            },
            expression: Range {
                count: m.n_expression,
                min: -3.0,
                max: 3.0,
            },
            pose: Range {
                count: m.n_joints(),
                min: -0.8,
                max: 0.8,
            },
            root_joint: m.root_joint_index,
            orbit_radius: offset.norm(),
            orbit_azimuth: offset.x.atan2(offset.z),
            orbit_elevation: (offset.y / offset.norm()).clamp(-1.0, 1.0).asin(),
            orbit_target: [target.x, target.y, target.z],
            camera,
        }
    }

    pub fn subscribe(&self) -> ClientChannels {
        let id = self.next_client.fetch_add(1, Ordering::Relaxed);
        let (ftx, frx) = mpsc::channel(self.client_buffer);
        let (ttx, trx) = mpsc::unbounded_channel();
        self.clients.lock().unwrap().push(Client {
            id,
            frames: ftx,
            text: ttx,
        });
        ClientChannels {
            id,
            frames: frx,
            text: trx,
        }
    }

    pub fn unsubscribe(&self, id: ClientId) {
        self.clients.lock().unwrap().retain(|c| c.id != id);
    }

    pub fn send_text(&self, to: ClientId, msg: &ServerMessage) {
        if let Some(c) = self.clients.lock().unwrap().iter().find(|c| c.id == to) {
            let _ = c.text.send(msg.to_json());
        }
    }

    /// Replaces the pending update. Intermediate updates are coalesced: only
    /// the last one submitted before the next render takes effect. Fields
    /// absent from the latest update keep their current value.
    pub fn submit(&self, update: ParamUpdate) -> Result<()> {
        update.validate(&self.scene.model)?;
        self.pending.lock().unwrap().latest = Some(update);
        self.wake.notify_one();
        Ok(())
    }

    /// Queues every frame of a track; each is rendered exactly once, in order.
    pub fn play_track(&self, track: AnimationTrack, requester: Option<ClientId>) -> Result<usize> {
        track.validate()?;
        let track = track.conform(&self.scene.model)?;
        let total = track.frames.len();
        if total == 0 {
            return Err(Error::invalid("track has no frames"));
        }
        let progress = Arc::new(TrackProgress {
            requester,
            total,
            ids: Mutex::new(Vec::with_capacity(total)),
        });
        let mut pending = self.pending.lock().unwrap();
        for f in track.frames {
            pending.track.push_back(TrackItem {
                params: f.params,
                camera: f.camera,
                progress: progress.clone(),
            });
        }
        drop(pending);
        self.wake.notify_one();
        Ok(total)
    }

    pub fn has_pending(&self) -> bool {
        let p = self.pending.lock().unwrap();
        p.latest.is_some() || !p.track.is_empty()
    }

    /// Renders the next queued item (track frames first, then the latest
    /// update) and fans it out. `None` when nothing is pending.
    pub fn render_next(&self) -> Result<Option<RenderedFrame>> {
        let (latest, item) = {
            let mut p = self.pending.lock().unwrap();
            match p.track.pop_front() {
                Some(item) => (None, Some(item)),
                None => (p.latest.take(), None),
            }
        };
        if latest.is_none() && item.is_none() {
            return Ok(None);
        }
        let (params, camera, format, frame_id) = {
            let mut cur = self.current.lock().unwrap();
            let cur = &mut *cur;
            if let Some(u) = &latest {
                u.apply(&mut cur.params, &mut cur.camera);
            }
            if let Some(it) = &item {
                cur.params = it.params.clone();
                if let Some(c) = &it.camera {
                    cur.camera = c.clone();
                }
            }
            let id = cur.next_id;
            cur.next_id += 1;
            (cur.params.clone(), cur.camera.clone(), cur.format, id)
        };

        let start = Instant::now();
        let mut cloud = self.base.clone();
        self.scene.rig().drive(&mut cloud, &params)?;
        let out = render(&cloud, &camera, &self.options)?;
        let bytes = Arc::new(encode_frame(&out.color, frame_id, format)?);
        self.record(start);
        self.fan_out(&bytes);

        if let Some(it) = item {
            let mut ids = it.progress.ids.lock().unwrap();
            ids.push(frame_id);
            if ids.len() == it.progress.total {
                if let Some(to) = it.progress.requester {
                    self.send_text(to, &ServerMessage::TrackFinished { frame_ids: ids.clone() });
                }
            }
        }
        Ok(Some(RenderedFrame {
            frame_id,
            params,
            camera,
            bytes,
        }))
    }

    fn record(&self, start: Instant) {
        let mut s = self.stats.lock().unwrap();
        s.rendered += 1;
        s.first_start.get_or_insert(start);
        s.recent_ms.push_back(start.elapsed().as_secs_f64() * 1e3);
        if s.recent_ms.len() > STATS_WINDOW {
            s.recent_ms.pop_front();
        }
    }

    /// Never waits: a client whose buffer is full misses this frame.
    fn fan_out(&self, bytes: &Arc<Vec<u8>>) {
        self.clients.lock().unwrap().retain(|c| match c.frames.try_send(bytes.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
    }

    pub fn stats(&self) -> Stats {
        let s = self.stats.lock().unwrap();
        let mut ms: Vec<f64> = s.recent_ms.iter().copied().collect();
        ms.sort_by(f64::total_cmp);
        let mean = if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 };
        let p95 = if ms.is_empty() {
            0.0
        } else {
            ms[((ms.len() as f64 * 0.95).ceil() as usize).clamp(1, ms.len()) - 1]
        };
        let elapsed = s.first_start.map_or(0.0, |t| t.elapsed().as_secs_f64());
        Stats {
            frames_rendered: s.rendered,
            frames_dropped: self.dropped.load(Ordering::Relaxed),
            mean_frame_ms: mean,
            p95_frame_ms: p95,
            fps: if elapsed > 0.0 { s.rendered as f64 / elapsed } else { 0.0 },
        }
    }

    /// The single render worker: waits for work, renders off the async
    /// executor, and never starts frames closer together than `1/fps_cap`.
    pub async fn run(self: Arc<Self>, fps_cap: f64) {
        let min_gap = Duration::from_secs_f64(1.0 / fps_cap.max(1e-3));
        let mut last: Option<Instant> = None;
        loop {
            if !self.has_pending() {
                self.wake.notified().await;
                continue;
            }
            if let Some(t) = last {
                tokio::time::sleep_until((t + min_gap).into()).await;
            }
            last = Some(Instant::now());
            let s = self.clone();
            match tokio::task::spawn_blocking(move || s.render_next()).await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => {
                    let msg = ServerMessage::Error { message: e.to_string() }.to_json();
                    for c in self.clients.lock().unwrap().iter() {
                        let _ = c.text.send(msg.clone());
                    }
                }
                Err(e) => tracing::error!("render worker panicked: {e}"),
            }
        }
    }
}
