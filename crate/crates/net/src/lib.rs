//! Socket protocol for the simulation server.
//!
//! [`frame`] handles length-prefixed framing, [`protocol`] the message
//! schema, [`server`] per-session state against one world and [`transport`]
//! the TCP and web-socket listeners.

pub mod client;
pub mod frame;
pub mod protocol;
pub mod server;
pub mod transport;

pub use client::{Client, ClientError};
pub use frame::{decode_frame, decode_payload, encode_frame, encode_payload, FrameDecoder, FrameError, MAX_FRAME};
pub use protocol::{ErrorCode, Message, Role, ServerMode, PROTOCOL_VERSION};
pub use server::{ServerCore, SessionId, OUTBOX_CAPACITY};
pub use transport::{start, ServeConfig, ServerHandle, DEFAULT_TCP_PORT, DEFAULT_WS_PORT};
