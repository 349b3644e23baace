//! Wire protocol between the control service and operator or observer
//! consoles, and the live server that speaks it over TCP and websockets.

pub mod codec;
pub mod message;
pub mod registry;
pub mod server;
pub mod service;

pub use codec::{check_arity, decode, decode_body, encode, encode_body, CodecError, FrameCodec, Inbound, MAX_FRAME_LEN};
pub use message::{ErrorCode, JointInfo, Message, Role, Welcome, WorldSnapshot};
pub use registry::{Claim, SessionId, SessionRegistry};
pub use server::{link, BindError, BoundServer, ControlMessage, FollowerStatus, Link, ServerConfig, ServiceEnd};
pub use service::{LiveService, ServiceConfig, ServiceSummary};
