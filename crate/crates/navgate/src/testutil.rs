//! Shared fixtures for unit tests.

use crate::env::{Cell, GridRoom, HeightBand, ObjectInstance, RoomPreset};

pub(crate) fn test_preset(name: &str, width: i32, height: i32, density: f64) -> RoomPreset {
    RoomPreset {
        name: name.to_string(),
        width,
        height,
        obstacle_density: density,
        object_types: vec![0, 1, 4],
        min_instances: 1,
        max_instances: 2,
    }
}

/// Empty 10x10 room with the given objects, for hand-built scenarios.
pub(crate) fn empty_room_with(objects: Vec<ObjectInstance>) -> GridRoom {
    GridRoom::from_parts(
        10,
        10,
        vec![false; 100],
        objects,
        "handmade".to_string(),
        0,
    )
}

pub(crate) fn mug_at(x: i32, y: i32) -> ObjectInstance {
    ObjectInstance {
        type_id: 0,
        position: Cell::new(x, y),
        physical_size: 0.10,
        height_band: HeightBand::Low,
    }
}

pub(crate) fn object_at(type_id: usize, x: i32, y: i32, size: f64, band: HeightBand) -> ObjectInstance {
    ObjectInstance {
        type_id,
        position: Cell::new(x, y),
        physical_size: size,
        height_band: band,
    }
}
