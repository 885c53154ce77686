//! Probing over a real network: the probe packet codec, paced UDP
//! transmission, the receiver and the TCP control channel that carries
//! arrival timestamps back to the sender.

pub mod codec;
pub mod control;
pub mod pacing;
pub mod receiver;
pub mod sender;

pub use codec::{CodecError, ProbePacket};
pub use control::{ControlError, ControlMessage, TrainKey, TrainReport};
pub use receiver::{
    Receiver, ReceiverConfig, SessionStats, DEFAULT_CONTROL_PORT, DEFAULT_PROBE_PORT,
};
pub use sender::{network_transport, CloseStats, NetworkConfig, NetworkTransport};
