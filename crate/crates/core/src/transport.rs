//! The probe-carrier contract consumed by [`crate::analysis::run_session`].

use std::time::Duration;

use thiserror::Error;

use crate::model::{Phase, TrainRecord};
use crate::sim::SimError;

/// One train the estimator wants sent.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRequest {
    pub phase: Phase,
    pub level_index: u16,
    pub train_index: u16,
    /// Offered rate in bits/s.
    pub rate: f64,
    pub train_length: usize,
    pub packet_size: u32,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("transport failure: {0}")]
    Failure(String),
    #[error(
        "cannot pace {rate} bit/s: achieved mean gap {achieved_ns} ns vs target {target_ns} ns"
    )]
    PacingUnattainable {
        rate: f64,
        target_ns: u64,
        achieved_ns: u64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Anything that can carry a probe train and hand back its timestamps:
/// the simulator or a real network path.
pub trait Transport {
    fn send_train(&mut self, request: &TrainRequest) -> Result<TrainRecord, TransportError>;

    /// Time elapsed on the transport's clock since it was created. For
    /// simulated transports this is simulated time.
    fn elapsed(&self) -> Duration;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send_train(&mut self, request: &TrainRequest) -> Result<TrainRecord, TransportError> {
        (**self).send_train(request)
    }

    fn elapsed(&self) -> Duration {
        (**self).elapsed()
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_train(&mut self, request: &TrainRequest) -> Result<TrainRecord, TransportError> {
        (**self).send_train(request)
    }

    fn elapsed(&self) -> Duration {
        (**self).elapsed()
    }
}
