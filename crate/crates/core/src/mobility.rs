//! Random Waypoint movement on the torus, and the trivial static model.
//!
//! A mobile entity travels in a straight line along the minimum-image
//! direction toward its waypoint at a per-leg constant speed. On arrival it
//! snaps to the waypoint and draws the next leg immediately; movement along
//! the new leg starts on the following step.

use crate::geometry::{EntityId, Position, WorldSpec};
use crate::rng::{DecisionStream, DrawKind};

/// Per-leg speed bounds, spaceunits per timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

impl Default for SpeedRange {
    fn default() -> Self {
        Self {
            min: 1.0,
            max: 14.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityState {
    Static,
    Waypoint {
        waypoint: Position,
        speed: f64,
        /// Index of the last leg drawn; keys the leg's random draws.
        leg: u64,
    },
}

impl MobilityState {
    pub fn is_static(&self) -> bool {
        matches!(self, MobilityState::Static)
    }
}

/// Draws the destination and speed of leg `leg` for `entity`.
fn leg_draw(
    stream: &DecisionStream,
    entity: EntityId,
    leg: u64,
    speeds: SpeedRange,
    world: &WorldSpec,
) -> (Position, f64) {
    let side = world.side();
    let x = world.wrap(stream.draw(DrawKind::WaypointX, entity, leg, 0) * side);
    let y = world.wrap(stream.draw(DrawKind::WaypointY, entity, leg, 0) * side);
    let speed = speeds.min + (speeds.max - speeds.min) * stream.draw(DrawKind::Speed, entity, leg, 0);
    (Position::new(x, y), speed)
}

/// Starts leg `first_leg` from `from`. A waypoint equal to the start point is
/// redrawn once; if the redraw is also degenerate the entity holds for a step.
pub fn start_leg(
    stream: &DecisionStream,
    entity: EntityId,
    first_leg: u64,
    from: Position,
    speeds: SpeedRange,
    world: &WorldSpec,
) -> MobilityState {
    let mut leg = first_leg;
    let (mut waypoint, mut speed) = leg_draw(stream, entity, leg, speeds, world);
    if waypoint == from {
        leg += 1;
        (waypoint, speed) = leg_draw(stream, entity, leg, speeds, world);
    }
    MobilityState::Waypoint {
        waypoint,
        speed,
        leg,
    }
}

/// Initial mobility for a mobile entity placed at `pos`.
pub fn initial_waypoint_state(
    stream: &DecisionStream,
    entity: EntityId,
    pos: Position,
    speeds: SpeedRange,
    world: &WorldSpec,
) -> MobilityState {
    start_leg(stream, entity, 0, pos, speeds, world)
}

/// One timestep of Random Waypoint movement.
pub fn rwp_step(
    state: MobilityState,
    pos: Position,
    stream: &DecisionStream,
    entity: EntityId,
    speeds: SpeedRange,
    world: &WorldSpec,
) -> (Position, MobilityState) {
    let MobilityState::Waypoint {
        waypoint,
        speed,
        leg,
    } = state
    else {
        return (static_step(pos), state);
    };
    let dx = world.min_image(pos.x, waypoint.x);
    let dy = world.min_image(pos.y, waypoint.y);
    let remaining = (dx * dx + dy * dy).sqrt();
    if remaining <= speed {
        let next = start_leg(stream, entity, leg + 1, waypoint, speeds, world);
        (waypoint, next)
    } else {
        let scale = speed / remaining;
        (world.wrap_position(pos.x + dx * scale, pos.y + dy * scale), state)
    }
}

#[inline]
pub fn static_step(pos: Position) -> Position {
    pos
}

/// Advances an entity by one step under whichever model it follows.
pub fn step(
    state: MobilityState,
    pos: Position,
    stream: &DecisionStream,
    entity: EntityId,
    speeds: SpeedRange,
    world: &WorldSpec,
) -> (Position, MobilityState) {
    match state {
        MobilityState::Static => (static_step(pos), state),
        MobilityState::Waypoint { .. } => rwp_step(state, pos, stream, entity, speeds, world),
    }
}
