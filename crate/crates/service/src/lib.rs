//! Live reenactment endpoint: clients stream head parameters and camera
//! updates over a websocket and receive rendered frames back.

pub mod frame;
pub mod protocol;
pub mod server;
pub mod session;

pub use frame::{decode_frame, encode_frame, FrameHeader, FRAME_MAGIC, HEADER_LEN};
pub use protocol::{ClientMessage, ParamUpdate, ServerMessage, Stats};
pub use server::{bind, router, serve, spawn_local, ServeOptions};
pub use session::{RangesManifest, RenderedFrame, Session};
