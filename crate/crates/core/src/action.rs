use serde::{Deserialize, Serialize};

/// Lateral command for one step. Lane 0 is the rightmost lane, so "left" raises the lane index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ChangeLeft = 0,
    KeepLane = 1,
    ChangeRight = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::ChangeLeft, Action::KeepLane, Action::ChangeRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    /// Lane index reached by this action from `lane`, or `None` when it would leave the road.
    pub fn target_lane(self, lane: usize, num_lanes: usize) -> Option<usize> {
        match self {
            Action::KeepLane => Some(lane),
            Action::ChangeLeft => (lane + 1 < num_lanes).then_some(lane + 1),
            Action::ChangeRight => lane.checked_sub(1),
        }
    }

    pub fn is_lane_change(self) -> bool {
        self != Action::KeepLane
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_lanes_respect_road_edges() {
        assert_eq!(Action::ChangeLeft.target_lane(3, 4), None);
        assert_eq!(Action::ChangeLeft.target_lane(2, 4), Some(3));
        assert_eq!(Action::ChangeRight.target_lane(0, 4), None);
        assert_eq!(Action::ChangeRight.target_lane(1, 4), Some(0));
        assert_eq!(Action::KeepLane.target_lane(0, 4), Some(0));
    }

    #[test]
    fn index_round_trip() {
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert_eq!(Action::from_index(3), None);
    }
}
