//! Bundled scenario documents.

/// Single four-arm intersection, one lane each way, four-phase signal.
pub const FOUR_ARM: &str = include_str!("../fixtures/four_arm.toml");
/// Eight-node two-way network with distance, time and a speed-limit metric.
pub const DEMO: &str = include_str!("../fixtures/demo.toml");
/// 3.38 km six-lane corridor with five signalized intersections.
pub const YUHANGTANG: &str = include_str!("../fixtures/yuhangtang.toml");
/// Three areas in a chain joined by a single border pair each.
pub const THREE_TAS: &str = include_str!("../fixtures/three_tas.toml");
/// One-way two-lane 2 km ring with four signals.
pub const RING_ROAD: &str = include_str!("../fixtures/ring_road.toml");

pub const ALL: [(&str, &str); 5] = [
    ("four_arm", FOUR_ARM),
    ("demo", DEMO),
    ("yuhangtang", YUHANGTANG),
    ("three_tas", THREE_TAS),
    ("ring_road", RING_ROAD),
];

/// Looks a fixture up by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
