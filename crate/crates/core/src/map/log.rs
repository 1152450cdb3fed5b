// SPDX-License-Identifier: Apache-2.0

//! Line-oriented map event log:
//!
//! ```text
//! KF  id tx ty tz qx qy qz qw
//! OBS landmark keyframe px py pz quality r g b u v
//! UPD id tx ty tz qx qy qz qw
//! ```
//!
//! Blank lines and `#` comments are skipped.

use std::io::BufRead;

use nalgebra::{Isometry3, Quaternion, UnitQuaternion, Vector3};

use super::{GlobalMap, MapError};
use crate::geometry::isometry;

#[derive(Debug, Clone, PartialEq)]
pub enum MapEvent {
    Keyframe {
        id: u64,
        pose: Isometry3<f64>,
    },
    Observation {
        landmark: u64,
        keyframe: u64,
        p_world: Vector3<f64>,
        quality: f64,
        color: [u8; 3],
        pixel: [u32; 2],
    },
    Update {
        id: u64,
        pose: Isometry3<f64>,
    },
}

fn fmt_pose(pose: &Isometry3<f64>) -> String {
    let t = pose.translation.vector;
    let q = pose.rotation.coords; // x, y, z, w
    format!(
        "{} {} {} {} {} {} {}",
        t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    )
}

/// Formats one event as a log line (no trailing newline). Floats use
/// shortest round-trip formatting, so parsing recovers them exactly.
pub fn format_event(event: &MapEvent) -> String {
    match event {
        MapEvent::Keyframe { id, pose } => format!("KF {id} {}", fmt_pose(pose)),
        MapEvent::Update { id, pose } => format!("UPD {id} {}", fmt_pose(pose)),
        MapEvent::Observation {
            landmark,
            keyframe,
            p_world: p,
            quality,
            color: c,
            pixel: px,
        } => format!(
            "OBS {landmark} {keyframe} {} {} {} {quality} {} {} {} {} {}",
            p.x, p.y, p.z, c[0], c[1], c[2], px[0], px[1]
        ),
    }
}

fn parse_pose(f: &[f64]) -> Result<Isometry3<f64>, String> {
    let q = Quaternion::new(f[6], f[3], f[4], f[5]);
    let n = q.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err("quaternion has zero or non-finite norm".into());
    }
    // Already-unit input is kept bit-exact.
    let rot = if (n - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    };
    Ok(isometry([f[0], f[1], f[2]], rot))
}

fn parse_fields<T: std::str::FromStr>(toks: &[&str], what: &str) -> Result<Vec<T>, String> {
    toks.iter()
        .map(|t| t.parse::<T>().map_err(|_| format!("bad {what} {t:?}")))
        .collect()
}

/// Parses one log line; `Ok(None)` for blank and comment lines.
pub fn parse_event(line: &str) -> Result<Option<MapEvent>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let toks: Vec<&str> = line.split_whitespace().collect();
    let expect = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(format!(
                "{} expects {} fields, found {}",
                toks[0],
                n - 1,
                toks.len() - 1
            ))
        }
    };
    let event = match toks[0] {
        "KF" | "UPD" => {
            expect(9)?;
            let id = parse_fields::<u64>(&toks[1..2], "id")?[0];
            let pose = parse_pose(&parse_fields::<f64>(&toks[2..9], "number")?)?;
            if toks[0] == "KF" {
                MapEvent::Keyframe { id, pose }
            } else {
                MapEvent::Update { id, pose }
            }
        }
        "OBS" => {
            expect(12)?;
            let ids = parse_fields::<u64>(&toks[1..3], "id")?;
            let f = parse_fields::<f64>(&toks[3..7], "number")?;
            let c = parse_fields::<u8>(&toks[7..10], "color")?;
            let px = parse_fields::<u32>(&toks[10..12], "pixel")?;
            MapEvent::Observation {
                landmark: ids[0],
                keyframe: ids[1],
                p_world: Vector3::new(f[0], f[1], f[2]),
                quality: f[3],
                color: [c[0], c[1], c[2]],
                pixel: [px[0], px[1]],
            }
        }
        other => return Err(format!("unknown event {other:?}")),
    };
    Ok(Some(event))
}

pub fn replay_log<R: BufRead>(reader: R) -> Result<GlobalMap, MapError> {
    replay_log_with(reader, |_| {})
}

/// Replays a log, calling `before_first_update` with the map state just
/// before the first `UPD` event is applied (if any).
pub fn replay_log_with<R: BufRead, F: FnMut(&GlobalMap)>(
    reader: R,
    mut before_first_update: F,
) -> Result<GlobalMap, MapError> {
    let mut map = GlobalMap::new();
    let mut seen_update = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let event = parse_event(&line).map_err(|reason| MapError::Parse {
            line: line_no,
            reason,
        })?;
        let Some(event) = event else { continue };
        if matches!(event, MapEvent::Update { .. }) && !seen_update {
            seen_update = true;
            before_first_update(&map);
        }
        map.apply(&event).map_err(|e| MapError::AtLine {
            line: line_no,
            source: Box::new(e),
        })?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_log() {
        let m = replay_log(Cursor::new("")).unwrap();
        assert_eq!(m.stats().landmarks, 0);
        let m = replay_log(Cursor::new("# header\n\n")).unwrap();
        assert_eq!(m.stats().keyframes, 0);
    }

    #[test]
    fn format_parse_round_trip() {
        let events = [
            MapEvent::Keyframe {
                id: 3,
                pose: isometry(
                    [0.1, -2.0, 1e-7],
                    UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
                ),
            },
            MapEvent::Observation {
                landmark: u64::MAX,
                keyframe: 3,
                p_world: Vector3::new(1.0 / 3.0, 2.5, -7.0),
                quality: 0.123456789,
                color: [255, 0, 7],
                pixel: [1919, 1079],
            },
        ];
        for e in &events {
            assert_eq!(parse_event(&format_event(e)).unwrap().as_ref(), Some(e));
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut text = String::new();
        text.push_str("KF 0 0 0 0 0 0 0 1\n");
        for _ in 0..15 {
            text.push_str("# filler\n");
        }
        text.push_str("OBS 1 0 1 2\n");
        let err = replay_log(Cursor::new(text)).unwrap_err();
        assert!(matches!(err, MapError::Parse { line: 17, .. }), "{err}");
        assert!(err.to_string().starts_with("line 17:"));
    }

    #[test]
    fn semantic_errors_carry_line() {
        let text = "KF 0 0 0 0 0 0 0 1\nKF 0 0 0 0 0 0 0 1\n";
        match replay_log(Cursor::new(text)).unwrap_err() {
            MapError::AtLine { line, source } => {
                assert_eq!(line, 2);
                assert!(matches!(*source, MapError::DuplicateKeyframe(0)));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn snapshot_before_update() {
        let text = "KF 0 0 0 0 0 0 0 1\nOBS 5 0 0 0 1 1 9 9 9 0 0\nUPD 0 0 0 1 0 0 0 1\nUPD 0 0 0 2 0 0 0 1\n";
        let mut before = None;
        let after = replay_log_with(Cursor::new(text), |m| before = Some(m.fused_cloud())).unwrap();
        assert_eq!(before.unwrap()[0].position.z, 1.0);
        assert_eq!(after.fuse_landmark(5).unwrap().position.z, 3.0);
    }

    #[test]
    fn unnormalized_quaternion_is_normalized() {
        let e = parse_event("KF 1 0 0 0 0 0 0 2").unwrap().unwrap();
        let MapEvent::Keyframe { pose, .. } = e else {
            panic!()
        };
        assert!((pose.rotation.norm() - 1.0).abs() < 1e-15);
        assert!(parse_event("KF 1 0 0 0 0 0 0 0").is_err());
    }
}
