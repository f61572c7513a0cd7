use agentsim_core::geom::{Transform, Vec3};
use agentsim_core::mocap::{
    avatar_root, export_clip, fk, fk_row, parse_bvh, solve_arm_ik, synth, walk_cycle_frame, walk_cycle_pose, BvhClip,
    BvhJoint, Channel,
};
use nalgebra::{Isometry3, Matrix4, UnitQuaternion};
use proptest::prelude::*;

/// Homogeneous rotation about one axis, written out by hand.
fn rot4(axis: usize, deg: f64) -> Matrix4<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    let mut m = Matrix4::identity();
    let (i, j) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    m[(i, i)] = c;
    m[(i, j)] = -s;
    m[(j, i)] = s;
    m[(j, j)] = c;
    m
}

fn trans4(t: Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = t.x;
    m[(1, 3)] = t.y;
    m[(2, 3)] = t.z;
    m
}

/// Brute force: walk each joint's ancestor chain and multiply 4x4 matrices.
fn oracle_positions(joints: &[BvhJoint], row: &[f64], scale: f64, root: &Matrix4<f64>) -> Vec<Vec3> {
    let mut starts = Vec::new();
    let mut k = 0;
    for j in joints {
        starts.push(k);
        k += j.channels.len();
    }
    let local = |i: usize| {
        let j = &joints[i];
        let vals = &row[starts[i]..starts[i] + j.channels.len()];
        let mut t = j.offset;
        let mut r = Matrix4::identity();
        for (ch, v) in j.channels.iter().zip(vals) {
            match ch {
                Channel::Xposition => t.x += v,
                Channel::Yposition => t.y += v,
                Channel::Zposition => t.z += v,
                Channel::Xrotation => r *= rot4(0, *v),
                Channel::Yrotation => r *= rot4(1, *v),
                Channel::Zrotation => r *= rot4(2, *v),
            }
        }
        trans4(t / scale) * r
    };
    (0..joints.len())
        .map(|i| {
            let mut chain = vec![i];
            while let Some(p) = joints[*chain.last().unwrap()].parent {
                chain.push(p);
            }
            let mut m = *root;
            for j in chain.iter().rev() {
                m *= local(*j);
            }
            Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
        })
        .collect()
}

const ROT: [Channel; 3] = [Channel::Xrotation, Channel::Yrotation, Channel::Zrotation];

/// Random hierarchy in depth-first order: each joint's parent is the
/// previous joint or one of its ancestors.
fn hierarchy() -> impl Strategy<Value = (Vec<BvhJoint>, Vec<f64>)> {
    (1usize..=10)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<prop::sample::Index>(), n),
                proptest::collection::vec(prop::array::uniform3(-50.0f64..50.0), n),
                proptest::collection::vec(prop::sample::select(vec![[0usize, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]]), n),
                proptest::collection::vec(0usize..3, n),
            )
        })
        .prop_flat_map(|(picks, offsets, orders, kinds)| {
            let n = picks.len();
            let mut joints: Vec<BvhJoint> = Vec::with_capacity(n);
            for i in 0..n {
                let parent = if i == 0 {
                    None
                } else {
                    let mut chain = vec![i - 1];
                    while let Some(p) = joints[*chain.last().unwrap()].parent {
                        chain.push(p);
                    }
                    Some(chain[picks[i].index(chain.len())])
                };
                let rot: Vec<Channel> = orders[i].iter().map(|a| ROT[*a]).collect();
                let channels = match (i, kinds[i]) {
                    (0, _) | (_, 2) => {
                        let mut c = vec![Channel::Xposition, Channel::Yposition, Channel::Zposition];
                        c.extend(rot);
                        c
                    }
                    (_, 1) => Vec::new(),
                    _ => rot,
                };
                joints.push(BvhJoint {
                    name: format!("J{i}"),
                    parent,
                    offset: Vec3::from(offsets[i]),
                    channels,
                    end_site: None,
                });
            }
            let count: usize = joints.iter().map(|j| j.channels.len()).sum();
            (Just(joints), proptest::collection::vec(-180.0f64..180.0, count))
        })
}

fn random_root() -> impl Strategy<Value = Isometry3<f64>> {
    (prop::array::uniform3(-100.0f64..100.0), prop::array::uniform3(-3.1f64..3.1)).prop_map(|(t, r)| {
        Isometry3::from_parts(Vec3::from(t).into(), UnitQuaternion::from_euler_angles(r[0], r[1], r[2]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fk_matches_matrix_oracle((joints, row) in hierarchy(), root in random_root(), scale in prop::sample::select(vec![1.0, 100.0])) {
        let pose = fk_row(&joints, &row, scale, &root);
        let expect = oracle_positions(&joints, &row, scale, &root.to_homogeneous());
        for (got, want) in pose.joints.iter().zip(&expect) {
            prop_assert!((got.position - want).norm() <= 1e-9, "{} vs {}", got.position, want);
        }
    }

    #[test]
    fn bvh_round_trip((joints, row) in hierarchy()) {
        let clip = BvhClip { joints, frames: vec![row.clone(), row], frame_time: 1.0 / 60.0, unit_scale: 100.0 };
        let back = parse_bvh(&export_clip(&clip).unwrap()).unwrap();
        prop_assert_eq!(back.joints.len(), clip.joints.len());
        for (a, b) in back.joints.iter().zip(&clip.joints) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.parent, b.parent);
            prop_assert_eq!(&a.channels, &b.channels);
            prop_assert!((a.offset - b.offset).norm() < 1e-4);
        }
        prop_assert_eq!(back.frames.len(), 2);
        for (ra, rb) in back.frames.iter().zip(&clip.frames) {
            for (a, b) in ra.iter().zip(rb) {
                prop_assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn rigid_motion_commutes_with_fk((joints, row) in hierarchy(), root in random_root(), g in random_root()) {
        let a = fk_row(&joints, &row, 100.0, &(g * root));
        let b = fk_row(&joints, &row, 100.0, &root).transformed(&g);
        for (x, y) in a.joints.iter().zip(&b.joints) {
            prop_assert!((x.position - y.position).norm() < 1e-9);
            prop_assert!(x.rotation.angle_to(&y.rotation) < 1e-9);
        }
    }
}

#[test]
fn ik_thousand_reachable_targets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst_cos = 0.0f64;
    let mut worst_len = 0.0f64;
    for _ in 0..1000 {
        let upper: f64 = rng.gen_range(0.2..0.4);
        let fore: f64 = rng.gen_range(0.2..0.4);
        let shoulder = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0));
        let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            .try_normalize(1e-6)
            .unwrap_or(Vec3::x());
        let lo = (upper - fore).abs();
        let d = rng.gen_range(lo..(upper + fore));
        let target = shoulder + dir * d;
        let pole = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -1.0);
        let s = solve_arm_ik(shoulder, upper, fore, target, pole);
        assert!(s.reachable);
        let residual = (d * d - (upper * upper + fore * fore - 2.0 * upper * fore * s.elbow_angle.cos())).abs();
        worst_cos = worst_cos.max(residual);
        let len_err = ((s.elbow_position - shoulder).norm() - upper)
            .abs()
            .max(((s.wrist_position - s.elbow_position).norm() - fore).abs())
            .max((s.wrist_position - target).norm());
        worst_len = worst_len.max(len_err);
    }
    assert!(worst_cos <= 1e-12, "law-of-cosines residual {worst_cos:e}");
    assert!(worst_len <= 1e-9, "limb length error {worst_len:e}");
}

#[test]
fn walk_cycle_repeats_every_stride() {
    let clip = synth::walk_cycle_clip(40);
    let root = avatar_root(&Transform::identity());
    for k in 0..40 {
        let d = k as f64 * synth::STRIDE / 40.0 + 0.01;
        assert_eq!(
            walk_cycle_frame(d, synth::STRIDE, 40),
            walk_cycle_frame(d + 3.0 * synth::STRIDE, synth::STRIDE, 40)
        );
        let a = walk_cycle_pose(&clip, d, synth::STRIDE, &root);
        let b = walk_cycle_pose(&clip, d + synth::STRIDE, synth::STRIDE, &root);
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert!((x.position - y.position).norm() < 1e-9);
        }
    }
}

#[test]
fn synthetic_clip_survives_file_round_trip() {
    let clip = synth::crossing_clip(3.0, 1.2, 0.5, 1.0 / 30.0);
    let back = parse_bvh(&export_clip(&clip).unwrap()).unwrap();
    let root = avatar_root(&Transform::from_xy_yaw(1.0, 2.0, 0.3));
    let last = clip.frame_count() - 1;
    let a = fk(&clip, last, &root).unwrap();
    let b = fk(&back, last, &root).unwrap();
    for (x, y) in a.joints.iter().zip(&b.joints) {
        assert!((x.position - y.position).norm() < 1e-5);
    }
}
