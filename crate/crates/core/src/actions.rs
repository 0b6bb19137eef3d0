//! Gesture → robot command state machine used by the streaming demo.

use serde::{Deserialize, Serialize};

use crate::synth::GestureClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RobotActionState {
    pub running: bool,
    pub gripper_closed: bool,
    pub waypoint_index: u32,
}

impl Default for RobotActionState {
    fn default() -> Self {
        RobotActionState {
            running: true,
            gripper_closed: false,
            waypoint_index: 0,
        }
    }
}

/// poke: pause/resume; grab: close/release the gripper; double_pat: next
/// waypoint, only while running; stroke: reserved, logged only.
pub fn apply_gesture(state: RobotActionState, gesture: GestureClass) -> RobotActionState {
    match gesture {
        GestureClass::Poke => RobotActionState {
            running: !state.running,
            ..state
        },
        GestureClass::Grab => RobotActionState {
            gripper_closed: !state.gripper_closed,
            ..state
        },
        GestureClass::DoublePat if state.running => RobotActionState {
            waypoint_index: state.waypoint_index.wrapping_add(1),
            ..state
        },
        GestureClass::DoublePat => {
            log::info!("double_pat ignored while paused");
            state
        }
        GestureClass::Stroke => {
            log::info!("stroke received (no command bound)");
            state
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poke_pauses_a_running_robot() {
        let s = apply_gesture(RobotActionState::default(), GestureClass::Poke);
        assert_eq!(
            s,
            RobotActionState {
                running: false,
                gripper_closed: false,
                waypoint_index: 0
            }
        );
    }

    #[test]
    fn double_pat_is_ignored_while_paused() {
        let paused = RobotActionState {
            running: false,
            gripper_closed: false,
            waypoint_index: 3,
        };
        assert_eq!(apply_gesture(paused, GestureClass::DoublePat), paused);
        let running = RobotActionState {
            running: true,
            ..paused
        };
        assert_eq!(apply_gesture(running, GestureClass::DoublePat).waypoint_index, 4);
    }

    #[test]
    fn stroke_changes_nothing() {
        let s = RobotActionState::default();
        assert_eq!(apply_gesture(s, GestureClass::Stroke), s);
    }
}
