import numpy as np
import pytest

from strandsim import motion
from strandsim.errors import BvhParseError, ConfigError

MINIMAL_BVH = """HIERARCHY
ROOT hips
{
  OFFSET 0.0 90.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT head
  {
    OFFSET 0.0 50.0 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0.0 10.0 0.0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.033333
0.0 90.0 0.0 0.0 0.0 0.0 0.0 0.0 0.0
0.0 90.5 0.0 0.0 0.0 10.0 0.0 0.0 5.0
"""


def test_parse_minimal_fixture():
    clip = motion.parse_bvh(MINIMAL_BVH)
    names = [j.name for j in clip.skeleton.joints]
    assert names == ["hips", "head", "head_end"]
    assert clip.skeleton.joints[1].parent == 0
    assert clip.frames == 2
    assert clip.frame_time == 0.033333
    assert clip.channels.shape == (2, 9)
    assert clip.channels[1, 1] == 90.5
    pose = clip.pose_at(1)
    assert np.allclose(pose.root_translation, [0.0, 90.5, 0.0])


def test_frame_value_count_mismatch_names_frame():
    bad = MINIMAL_BVH.replace("0.0 90.5 0.0 0.0 0.0 10.0 0.0 0.0 5.0", "0.0 90.5 0.0 0.0 0.0")
    with pytest.raises(BvhParseError, match="frame 1"):
        motion.parse_bvh(bad)


def test_too_many_values_in_frame():
    bad = MINIMAL_BVH.replace("0.0 0.0 5.0\n", "0.0 0.0 5.0 7.0\n")
    with pytest.raises(BvhParseError, match="frame 1"):
        motion.parse_bvh(bad)


def test_non_numeric_token_reports_line():
    bad = MINIMAL_BVH.replace("90.5", "banana")
    with pytest.raises(BvhParseError, match=r"non-numeric.*line"):
        motion.parse_bvh(bad)


def test_unknown_channel_name():
    bad = MINIMAL_BVH.replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 3 Zrotation Wrotation Yrotation")
    with pytest.raises(BvhParseError, match="Wrotation"):
        motion.parse_bvh(bad)


def test_missing_motion_section():
    bad = MINIMAL_BVH[: MINIMAL_BVH.index("MOTION")]
    with pytest.raises(BvhParseError, match="MOTION"):
        motion.parse_bvh(bad)


def test_roundtrip_write_then_parse_is_identical():
    clip = motion.parse_bvh(MINIMAL_BVH)
    text = motion.write_bvh(clip)
    clip2 = motion.parse_bvh(text)
    assert [j.name for j in clip.skeleton.joints] == [j.name for j in clip2.skeleton.joints]
    assert [j.channels for j in clip.skeleton.joints] == [j.channels for j in clip2.skeleton.joints]
    for a, b in zip(clip.skeleton.joints, clip2.skeleton.joints):
        assert np.array_equal(a.offset, b.offset)
    assert clip.frame_time == clip2.frame_time
    assert np.array_equal(clip.channels, clip2.channels)


def test_synth_roundtrip_through_bvh():
    clip = motion.synth_motion("walk", 1.0, 30.0, 0.3, seed=5)
    clip2 = motion.parse_bvh(motion.write_bvh(clip))
    assert np.array_equal(clip.channels, clip2.channels)
    assert clip.frame_time == clip2.frame_time


def test_synth_zero_amplitude_is_rest_pose():
    clip = motion.synth_motion("head_bob", 1.0, 30.0, 0.0, seed=0)
    assert np.array_equal(clip.channels, np.zeros_like(clip.channels))


def test_sway_head_yaw_closed_form():
    amp, fps, dur = 0.4, 30.0, 2.0
    clip = motion.synth_motion("sway", dur, fps, amp, seed=0)
    assert clip.frames == 60
    col = None
    at = 0
    for j in clip.skeleton.joints:
        for c in j.channels:
            if j.name == "head" and c == "Yrotation":
                col = at
            at += 1
    t = np.arange(60) / fps
    expected = amp * np.sin(2.0 * np.pi * t / 1.0)
    assert np.abs(np.radians(clip.channels[:, col]) - expected).max() < 1e-9


def test_synth_same_seed_bit_identical():
    a = motion.synth_motion("walk", 2.0, 30.0, 0.25, seed=9)
    b = motion.synth_motion("walk", 2.0, 30.0, 0.25, seed=9)
    assert np.array_equal(a.channels, b.channels)


def test_synth_clips_are_c1():
    # first differences of rotational channels bounded by amp * omega * dt
    for kind, hz in [("sway", 1.0), ("head_bob", 1.5), ("walk", 1.4)]:
        amp = 0.3
        clip = motion.synth_motion(kind, 2.0, 60.0, amp, seed=3)
        rad = np.radians(clip.channels)
        diffs = np.abs(np.diff(rad, axis=0)).max()
        bound = amp * 2.0 * np.pi * (2 * hz) * (1.0 / 60.0) * 1.1
        assert diffs <= bound


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        motion.synth_motion("cartwheel", 1.0, 30.0, 0.1, seed=0)


def test_rest_head_transform_position():
    ht = motion.rest_head_transform()
    assert np.allclose(ht.t, [0.0, 147.0, 0.0], atol=1e-12)
    assert np.allclose(ht.q, [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_history_static_clip_zero_velocities():
    clip = motion.synth_motion("sway", 1.0, 30.0, 0.0, seed=0)
    rm = motion.reduce_clip(clip)
    win = motion.history_window(rm, 10, 5, np.zeros(4))
    assert np.array_equal(win.velocities, np.zeros((5, 6, 3)))
    assert np.allclose(win.pose, np.broadcast_to([1.0, 0, 0, 0], (6, 4)))


def test_history_clamps_before_frame_zero():
    clip = motion.synth_motion("sway", 1.0, 30.0, 0.5, seed=0)
    rm = motion.reduce_clip(clip)
    win = motion.history_window(rm, 0, 4, np.zeros(4))
    assert np.array_equal(win.velocities, np.zeros((4, 6, 3)))


def test_history_constant_rate_yaw():
    rate = 0.8  # rad/s about Y
    fps = 30.0
    skel = motion.humanoid_skeleton()
    width = sum(len(j.channels) for j in skel.joints)
    frames = 30
    rows = np.zeros((frames, width))
    # head Yrotation column
    at = 0
    for j in skel.joints:
        for c in j.channels:
            if j.name == "head" and c == "Yrotation":
                rows[:, at] = np.degrees(rate * np.arange(frames) / fps)
            at += 1
    clip = motion.MotionClip(skel, 1.0 / fps, rows)
    rm = motion.reduce_clip(clip)
    win = motion.history_window(rm, 20, 6, np.zeros(4))
    head = motion.REDUCED_JOINTS.index("head")
    assert np.abs(win.velocities[:, head, 1] - rate).max() < 1e-6
    others = [i for i in range(6) if i != head]
    assert np.abs(win.velocities[:, others, :]).max() < 1e-9


def test_velocities_antisymmetric_under_time_reversal():
    clip = motion.synth_motion("walk", 1.0, 30.0, 0.4, seed=2)
    rm = motion.reduce_clip(clip)
    rev = motion.MotionClip(clip.skeleton, clip.frame_time, clip.channels[::-1].copy())
    rmr = motion.reduce_clip(rev)
    v = motion.joint_velocities(rm)
    vr = motion.joint_velocities(rmr)
    F = rm.frames
    for g in range(1, F):
        assert np.allclose(vr[g], -v[F - g], atol=1e-9)


def test_history_window_pure():
    clip = motion.synth_motion("sway", 1.0, 30.0, 0.3, seed=0)
    rm = motion.reduce_clip(clip)
    before = rm.quats.copy()
    a = motion.history_window(rm, 7, 4, np.zeros(4))
    b = motion.history_window(rm, 7, 4, np.zeros(4))
    assert np.array_equal(a.velocities, b.velocities)
    assert np.array_equal(rm.quats, before)


def test_reduce_clip_name_aliases():
    clip = motion.parse_bvh(MINIMAL_BVH)  # hips + head
    rm = motion.reduce_clip(clip)
    assert rm.frames == 2
    # head rotation at frame 1 is yaw 5 degrees
    head = motion.REDUCED_JOINTS.index("head")
    expect = motion.quat_from_euler(["Zrotation", "Xrotation", "Yrotation"], np.array([0.0, 0.0, 5.0]))
    assert np.allclose(rm.quats[1, head], expect, atol=1e-12)
    # spine/neck unmapped -> identity
    spine = motion.REDUCED_JOINTS.index("spine")
    assert np.allclose(rm.quats[:, spine], [1.0, 0, 0, 0])


def test_head_transforms_follow_spine_yaw():
    clip = motion.synth_motion("sway", 1.0, 30.0, 0.5, seed=0)
    rm = motion.reduce_clip(clip)
    rot, pos = motion.head_transforms(rm)
    assert rot.shape == (30, 4) and pos.shape == (30, 3)
    assert np.allclose(pos[0], [0.0, 147.0, 0.0], atol=1e-9)
    # spine Z lean moves the head sideways at the quarter-period frame
    assert np.abs(pos[:, 0]).max() > 0.1
