//! Simulated perception: a semantic map derived from ground truth.
//!
//! The map is a directed scene graph. Room nodes `contains` the objects placed
//! in them, and `on` edges mirror the support relation. Held objects are not
//! part of the map. Snapshots are immutable; callers rebuild to refresh.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{ArmState, Point3, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Room,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    pub pose: Point3,
    pub is_surface: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Contains,
    On,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEdge {
    pub from: String,
    pub relation: Relation,
    pub to: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerceptionError {
    #[error("ROOM_NOT_FOUND: there is no room '{0}' in the semantic map")]
    RoomNotFound(String),
}

impl PerceptionError {
    pub fn code(&self) -> &'static str {
        match self {
            PerceptionError::RoomNotFound(_) => "ROOM_NOT_FOUND",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SemanticMap {
    pub nodes: IndexMap<String, MapNode>,
    pub edges: Vec<MapEdge>,
    pub snapshot_step: u64,
}

impl SemanticMap {
    /// Builds the map from the current world: one node per room and per
    /// non-held object, in declaration order.
    pub fn build(world: &WorldState) -> Self {
        let mut nodes = IndexMap::new();
        let mut edges = Vec::new();
        for room in &world.rooms {
            let (x, y) = room.bounds.center();
            nodes.insert(
                room.name.clone(),
                MapNode {
                    id: room.name.clone(),
                    kind: NodeKind::Room,
                    label: room.name.clone(),
                    pose: Point3::new(x, y, 0.0),
                    is_surface: false,
                },
            );
        }
        for object in world.objects.values() {
            let Some(room) = object.room.as_ref() else {
                continue;
            };
            nodes.insert(
                object.id.clone(),
                MapNode {
                    id: object.id.clone(),
                    kind: NodeKind::Object,
                    label: object.label.clone(),
                    pose: object.pose,
                    is_surface: object.is_surface,
                },
            );
            edges.push(MapEdge {
                from: room.clone(),
                relation: Relation::Contains,
                to: object.id.clone(),
            });
        }
        for object in world.objects.values() {
            if let (Some(_), Some(support)) = (&object.room, &object.supported_by) {
                edges.push(MapEdge {
                    from: object.id.clone(),
                    relation: Relation::On,
                    to: support.clone(),
                });
            }
        }
        Self {
            nodes,
            edges,
            snapshot_step: world.clock,
        }
    }

    pub fn node(&self, id: &str) -> Option<&MapNode> {
        self.nodes.get(id)
    }

    pub fn room_names(&self) -> Vec<&str> {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::Room)
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Room containing the node; a room node is its own room.
    pub fn room_of(&self, id: &str) -> Option<&str> {
        match self.nodes.get(id)?.kind {
            NodeKind::Room => Some(self.nodes.get_key_value(id)?.0.as_str()),
            NodeKind::Object => self
                .edges
                .iter()
                .find(|e| e.relation == Relation::Contains && e.to == id)
                .map(|e| e.from.as_str()),
        }
    }

    pub fn support_of(&self, id: &str) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| e.relation == Relation::On && e.from == id)
            .map(|e| e.to.as_str())
    }

    /// Object descriptions for a room: supported objects grouped by support,
    /// then free objects, then surfaces.
    pub fn objects_in_room(&self, room: &str) -> Result<Vec<String>, PerceptionError> {
        match self.nodes.get(room) {
            Some(n) if n.kind == NodeKind::Room => {}
            _ => return Err(PerceptionError::RoomNotFound(room.to_string())),
        }
        let members: Vec<&MapNode> = self
            .edges
            .iter()
            .filter(|e| e.relation == Relation::Contains && e.from == room)
            .filter_map(|e| self.nodes.get(&e.to))
            .collect();

        let mut out = Vec::with_capacity(members.len());
        // supports in declaration order, each followed by what rests on it
        for support in self.nodes.values() {
            for node in &members {
                if self.support_of(&node.id) == Some(support.id.as_str()) {
                    out.push(format!("{} on the {}", node.id, support.id));
                }
            }
        }
        let unsupported = members.iter().filter(|n| self.support_of(&n.id).is_none());
        out.extend(
            unsupported
                .clone()
                .filter(|n| !n.is_surface)
                .map(|n| n.id.clone()),
        );
        out.extend(unsupported.filter(|n| n.is_surface).map(|n| n.id.clone()));
        Ok(out)
    }
}

/// Sentence describing the robot's room and what each arm holds.
pub fn robot_state_summary(world: &WorldState) -> String {
    let robot = &world.robot;
    match (&robot.arms.right.state, &robot.arms.left.state) {
        (ArmState::Free, ArmState::Free) => format!(
            "The robot is currently in the {} and has both the right and left arms empty.",
            robot.room
        ),
        (right, left) => {
            let describe = |side: &str, state: &ArmState| match state {
                ArmState::Free => format!("{side} arm empty"),
                ArmState::Holding(id) => format!("{side} arm holding {id}"),
            };
            format!(
                "The robot is currently in the {}; {}; {}.",
                robot.room,
                describe("right", right),
                describe("left", left)
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerceptionName {
    GetMapRooms,
    GetObjectInRoom,
    GetRobotState,
}

impl PerceptionName {
    pub const ALL: [PerceptionName; 3] = [
        PerceptionName::GetMapRooms,
        PerceptionName::GetObjectInRoom,
        PerceptionName::GetRobotState,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerceptionName::GetMapRooms => "GetMapRooms",
            PerceptionName::GetObjectInRoom => "GetObjectInRoom",
            PerceptionName::GetRobotState => "GetRobotState",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            PerceptionName::GetObjectInRoom => 1,
            PerceptionName::GetMapRooms | PerceptionName::GetRobotState => 0,
        }
    }
}

impl fmt::Display for PerceptionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerceptionName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerceptionName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptionCall {
    pub name: PerceptionName,
    pub args: Vec<String>,
}

/// Answers a perception call against a fresh snapshot. Returns the snapshot
/// together with the observation text handed back to the policy.
pub fn perceive(call: &PerceptionCall, world: &WorldState) -> (SemanticMap, String) {
    let map = SemanticMap::build(world);
    let observation = match call.name {
        PerceptionName::GetMapRooms => format!(
            "The robot identifies the rooms: [{}].",
            map.room_names().join(", ")
        ),
        PerceptionName::GetObjectInRoom => {
            let room = call.args.first().map(String::as_str).unwrap_or_default();
            match map.objects_in_room(room) {
                Ok(list) => format!(
                    "The robot finds the following objects in the {room}: [{}].",
                    list.join(", ")
                ),
                Err(e) => e.to_string(),
            }
        }
        PerceptionName::GetRobotState => robot_state_summary(world),
    };
    (map, observation)
}
