use std::io::Cursor;

use evoskip::format::{file_size, read_trajectory, write_trajectory, HEADER_BYTES};
use evoskip::harness::{generate_trajectory, TrajectoryConfig};

fn sample(steps: usize, layers: usize, heads: usize) -> evoskip::Trajectory {
    generate_trajectory(&TrajectoryConfig { steps, layers, heads, n: 24, d: 8, seed: 3, ..Default::default() }).unwrap()
}

fn encode(traj: &evoskip::Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, traj).unwrap();
    buf
}

#[test]
fn single_operand_size() {
    let buf = encode(&sample(1, 1, 1));
    assert_eq!(buf.len(), HEADER_BYTES + 3 * 24 * 8 * 4);
    assert_eq!(buf.len(), file_size(1, 1, 24, 8, 1));
    assert_eq!(&buf[..4], b"LATN");
}

#[test]
fn round_trip_is_bitwise() {
    let traj = sample(3, 2, 2);
    let buf = encode(&traj);
    assert_eq!(buf.len(), file_size(2, 2, 24, 8, 3));
    assert_eq!(read_trajectory(Cursor::new(&buf)).unwrap(), traj);
}

#[test]
fn corrupt_files_are_rejected() {
    let buf = encode(&sample(2, 1, 1));
    let mut bad_magic = buf.clone();
    bad_magic[0] = b'X';
    assert!(read_trajectory(Cursor::new(&bad_magic)).is_err());
    let mut bad_version = buf.clone();
    bad_version[4] = 9;
    assert!(read_trajectory(Cursor::new(&bad_version)).is_err());
    assert!(read_trajectory(Cursor::new(&buf[..buf.len() - 1])).is_err());
    let mut trailing = buf.clone();
    trailing.push(0);
    assert!(read_trajectory(Cursor::new(&trailing)).is_err());
    let mut nan = buf.clone();
    nan[HEADER_BYTES..HEADER_BYTES + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(read_trajectory(Cursor::new(&nan)).is_err());
}
