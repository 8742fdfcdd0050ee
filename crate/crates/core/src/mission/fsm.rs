//! Mission state machine. Every legal move is listed in [`TRANSITIONS`];
//! anything else is a protocol error.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionState {
    Navigate,
    Scan,
    Track,
    Descend,
    Reference,
    Sample,
    Classify,
    Stow,
}

impl MissionState {
    pub const ALL: [MissionState; 8] = [
        MissionState::Navigate,
        MissionState::Scan,
        MissionState::Track,
        MissionState::Descend,
        MissionState::Reference,
        MissionState::Sample,
        MissionState::Classify,
        MissionState::Stow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MissionState::Navigate => "NAVIGATE",
            MissionState::Scan => "SCAN",
            MissionState::Track => "TRACK",
            MissionState::Descend => "DESCEND",
            MissionState::Reference => "REFERENCE",
            MissionState::Sample => "SAMPLE",
            MissionState::Classify => "CLASSIFY",
            MissionState::Stow => "STOW",
        }
    }
}

impl fmt::Display for MissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionEvent {
    WaypointReached,
    CandidateFound,
    NoCandidates,
    XyConverged,
    SnrReached,
    ReferenceClean,
    /// Valid spectrum acquired or spiral exhausted.
    SampleDone,
    Logged,
    TargetLost,
    Abort,
    Resume,
}

impl MissionEvent {
    pub const ALL: [MissionEvent; 11] = [
        MissionEvent::WaypointReached,
        MissionEvent::CandidateFound,
        MissionEvent::NoCandidates,
        MissionEvent::XyConverged,
        MissionEvent::SnrReached,
        MissionEvent::ReferenceClean,
        MissionEvent::SampleDone,
        MissionEvent::Logged,
        MissionEvent::TargetLost,
        MissionEvent::Abort,
        MissionEvent::Resume,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MissionEvent::WaypointReached => "waypoint_reached",
            MissionEvent::CandidateFound => "candidate_found",
            MissionEvent::NoCandidates => "no_candidates",
            MissionEvent::XyConverged => "xy_converged",
            MissionEvent::SnrReached => "snr_reached",
            MissionEvent::ReferenceClean => "reference_clean",
            MissionEvent::SampleDone => "sample_done",
            MissionEvent::Logged => "logged",
            MissionEvent::TargetLost => "target_lost",
            MissionEvent::Abort => "abort",
            MissionEvent::Resume => "resume",
        }
    }
}

impl fmt::Display for MissionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("protocol error: event {event} is not accepted in state {state}")]
pub struct ProtocolError {
    pub state: MissionState,
    pub event: MissionEvent,
}

use MissionEvent as E;
use MissionState as S;

/// The declared graph, abort edges excluded (every state accepts `abort`).
pub const TRANSITIONS: [(MissionState, MissionEvent, MissionState); 11] = [
    (S::Navigate, E::WaypointReached, S::Scan),
    (S::Scan, E::CandidateFound, S::Track),
    (S::Scan, E::NoCandidates, S::Navigate),
    (S::Track, E::XyConverged, S::Descend),
    (S::Track, E::TargetLost, S::Scan),
    (S::Descend, E::SnrReached, S::Reference),
    (S::Reference, E::ReferenceClean, S::Sample),
    (S::Sample, E::SampleDone, S::Classify),
    (S::Classify, E::Logged, S::Scan),
    (S::Stow, E::Resume, S::Navigate),
    (S::Stow, E::Abort, S::Stow),
];

pub fn next_state(
    current: MissionState,
    event: MissionEvent,
) -> Result<MissionState, ProtocolError> {
    if event == E::Abort {
        return Ok(S::Stow);
    }
    TRANSITIONS
        .iter()
        .find(|(s, e, _)| *s == current && *e == event)
        .map(|t| t.2)
        .ok_or(ProtocolError {
            state: current,
            event,
        })
}

/// Events `state` accepts, in declaration order.
pub fn accepted_events(state: MissionState) -> Vec<MissionEvent> {
    MissionEvent::ALL
        .into_iter()
        .filter(|e| next_state(state, *e).is_ok())
        .collect()
}
