use std::fs;

use mofid_core::{load_motion, load_skeleton, save_motion, save_skeleton, FidelityError, FramePose, MotionSequence, Quat, Skeleton, Vec3};

fn sample() -> MotionSequence {
    let frames = (0..2)
        .map(|t| FramePose {
            positions: (0..3).map(|j| Vec3::new(0.1 * j as f64 + 1.0 / 3.0, t as f64 * 0.7, 1e-17 * j as f64)).collect(),
            orientations: vec![Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0).normalize(), 0.3 * t as f64); 3],
        })
        .collect();
    MotionSequence::new(30.0, "chain3", frames).unwrap()
}

#[test]
fn round_trip_is_exact_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let m = sample();
    save_motion(&m, &a).unwrap();
    let back = load_motion(&a).unwrap();
    assert_eq!(back.frame_count(), 2);
    for t in 0..2 {
        for j in 0..3 {
            assert!((back.position(t, j) - m.position(t, j)).norm() <= 1e-12);
        }
    }
    save_motion(&back, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn malformed_files_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    fs::write(&p, "{\"fps\": 30, \"frames\": [").unwrap();
    assert!(matches!(load_motion(&p), Err(FidelityError::Parse { .. })));

    fs::write(&p, r#"{"fps":30,"skeleton_id":"s","frames":[{"positions":[[0,0,0]],"rotations":[[1,0,0]]},{"positions":[[0,0,0]],"rotations":[[1,0,0,0]]}]}"#).unwrap();
    assert!(matches!(load_motion(&p), Err(FidelityError::Schema { .. })));

    fs::write(&p, r#"{"fps":30,"skeleton_id":"s","frames":[{"positions":[[0,0,0]],"rotations":[[0.5,0,0,0]]},{"positions":[[0,0,0]],"rotations":[[1,0,0,0]]}]}"#).unwrap();
    assert!(matches!(load_motion(&p), Err(FidelityError::Invariant(_))));

    fs::write(&p, r#"{"fps":30,"skeleton_id":"s","frames":[{"positions":[[0,0,0]],"rotations":[[1.0000001,0,0,0]]},{"positions":[[0,0,0]],"rotations":[[1,0,0,0]]}]}"#).unwrap();
    let m = load_motion(&p).unwrap();
    assert_eq!(m.frames()[0].orientations[0], Quat::IDENTITY);

    assert!(load_motion(dir.path().join("missing.json")).unwrap_err().is_io());
}

#[test]
fn empty_motion_is_rejected_before_write() {
    assert!(matches!(MotionSequence::new(30.0, "s", vec![]), Err(FidelityError::Invariant(_))));
}

#[test]
fn unwritable_destination_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("no_such_dir").join("m.json");
    assert!(save_motion(&sample(), &target).unwrap_err().is_io());
}

#[test]
fn skeleton_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    let s = Skeleton::new(vec!["root".into(), "l".into(), "r".into()], vec![-1, 0, 0], 0, vec![1, 2]).unwrap();
    save_skeleton(&s, &p).unwrap();
    assert_eq!(load_skeleton(&p).unwrap(), s);
    fs::write(&p, r#"{"joint_names":["a","b"],"parent_index":[1,0],"root_index":0,"foot_indices":[1]}"#).unwrap();
    assert!(load_skeleton(&p).is_err());
}
