//! Active estimation of available bandwidth and bottleneck link capacity on a
//! single-bottleneck path.
//!
//! The sender injects packet trains at stepped rates, the receiver timestamps
//! every arrival, and the ratio of offered to measured rate is regressed
//! against the offered rate. On a path with one congested link that ratio
//! rises linearly once the offered rate exceeds the available bandwidth: the
//! slope of the line is the inverse of the link capacity and its crossing of
//! `y = 1` is the available bandwidth.
//!
//! The crate is split into:
//!
//! * [`model`]: domain types and the dispersion/rate arithmetic.
//! * [`analysis`]: proportional-share estimation, rate scheduling, regression
//!   and the iterative measurement loop.
//! * [`sim`]: fluid and packet-level models of a single FIFO bottleneck.
//! * [`wire`]: probe packet codec, paced UDP sending, receiver and control
//!   channel for measurements over a real network.
//! * [`transport`]: the "send a train, get its timestamps back" contract that
//!   both the simulator and the network implement.

pub mod analysis;
pub mod model;
pub mod sim;
pub mod transport;
pub mod wire;

pub use analysis::{
    run_estimation, run_session, AnalysisError, ConvergenceReport, Estimate, EstimationError,
    IterationRecord, IterationResult, RateSchedule, Session, ToppRegression,
};
pub use model::{
    LevelSample, Phase, ProbeConfig, RateError, ToppPoint, TrainRecord, BITS_PER_BYTE,
    ETHERNET_GAP_BYTES,
};
pub use sim::{make_transport, BottleneckModel, SimError, SimMode, SimTransport};
pub use transport::{TrainRequest, Transport, TransportError};
