use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::cluster::{ConfigError, NodeId};
use crate::memory::MemoryError;
use crate::protocol::{HandlerId, KernelId, ProtocolError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("CONFIG_INVALID: {0}")]
    ConfigInvalid(String),
    #[error("BIND_FAILURE: {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error("DUPLICATE_KERNEL: kernel {0} already spawned")]
    DuplicateKernel(KernelId),
    #[error("NOT_LOCAL: kernel {0} is not hosted on this node")]
    NotLocal(KernelId),
    #[error("RESERVED_ID: handler {0} is reserved")]
    ReservedId(HandlerId),
    #[error("DUPLICATE_HANDLER: handler {0} already registered")]
    DuplicateHandler(HandlerId),
    #[error("UNKNOWN_KERNEL: kernel {0} is not in the cluster map")]
    UnknownKernel(KernelId),
    #[error("TIMEOUT after {0:?}")]
    Timeout(Duration),
    #[error("SHUTDOWN: node is stopping")]
    Shutdown,
    #[error("PEER_UNREACHABLE: node {node}: {reason}")]
    PeerUnreachable { node: NodeId, reason: String },
    #[error("UDP_FRAGMENT_LIMIT: datagram of {len} bytes exceeds cap of {cap}")]
    UdpFragmentLimit { len: usize, cap: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Status codes carried in `args[0]` of an error reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum FaultCode {
    OutOfBounds = 1,
    UnknownHandler = 2,
    LengthMismatch = 3,
    Oversize = 4,
    SendFailed = 5,
}

impl FaultCode {
    pub fn from_u64(v: u64) -> Option<Self> {
        Some(match v {
            1 => FaultCode::OutOfBounds,
            2 => FaultCode::UnknownHandler,
            3 => FaultCode::LengthMismatch,
            4 => FaultCode::Oversize,
            5 => FaultCode::SendFailed,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultCode::OutOfBounds => "OUT_OF_BOUNDS",
            FaultCode::UnknownHandler => "UNKNOWN_HANDLER",
            FaultCode::LengthMismatch => "LENGTH_MISMATCH",
            FaultCode::Oversize => "OVERSIZE",
            FaultCode::SendFailed => "SEND_FAILED",
        }
    }
}

impl From<&MemoryError> for FaultCode {
    fn from(e: &MemoryError) -> Self {
        match e {
            MemoryError::OutOfBounds { .. } => FaultCode::OutOfBounds,
            MemoryError::LengthMismatch { .. } => FaultCode::LengthMismatch,
        }
    }
}
