import numpy as np
import pytest
import yaml

from rfcmotion import config as C
from rfcmotion import quat, synth
from rfcmotion.clips import (MotionClip, finite_difference_velocities, from_flat_sequence, load_clip,
                             load_dataset, save_clip)
from rfcmotion.errors import ConfigError, ContractError
from rfcmotion.kinpolicy import frames_to_features, turn_direction


# -- clips -------------------------------------------------------------------

def test_clip_round_trip(tmp_path, biped):
    clip = synth.cyclic_walk(biped, 2.0)
    clip.qdot = clip.velocities() * 1.0000001
    save_clip(clip, tmp_path / "c.json")
    back = load_clip(tmp_path / "c.json")
    assert np.array_equal(back.frames, clip.frames) and np.array_equal(back.qdot, clip.qdot)
    assert (back.name, back.fps, back.model, back.model_hash) == (clip.name, clip.fps, clip.model, clip.model_hash)


def test_clip_invariants(chain3):
    with pytest.raises(ContractError):
        MotionClip(np.zeros(9))
    with pytest.raises(ContractError):
        MotionClip(np.zeros((3, 9)), fps=0.0)
    with pytest.raises(ContractError):
        MotionClip(np.zeros((3, 9)), qdot=np.zeros((2, 8)))
    with pytest.raises(ContractError):
        MotionClip(np.zeros((3, 5))).check_model(chain3)


def test_bad_format(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other", "frames": [], "fps": 30}')
    with pytest.raises(ContractError):
        load_clip(tmp_path / "x.json")
    with pytest.raises(ContractError):
        load_dataset(tmp_path / "empty")


def test_finite_differences_of_linear_motion(chain3):
    T = 6
    frames = np.tile(chain3.rest_q(1.0), (T, 1))
    frames[:, 0] = 0.3 * np.arange(T) / 30.0
    frames[:, 7] = -0.6 * np.arange(T) / 30.0
    vel = finite_difference_velocities(frames, 1 / 30.0)
    assert np.allclose(vel[:, 0], 0.3, atol=1e-12) and np.allclose(vel[:, 6], -0.6, atol=1e-12)


def test_flat_sequence_import(chain3):
    rows = np.zeros((4, 3 + 3 + 2))
    rows[:, 1] = 1.0
    rows[:, 5] = 0.4
    clip = from_flat_sequence(rows, model="chain3")
    clip.check_model(chain3)
    assert np.allclose(clip.frames[:, 3:7], quat.from_axis_angle([0, 0, 1], 0.4))
    with pytest.raises(ContractError):
        from_flat_sequence(rows, root="euler")


# -- synthetic clips -----------------------------------------------------------

def test_hover_is_held_above_rest(hopper):
    clip = synth.hover(hopper, 1.0)
    assert np.allclose(clip.frames[:, 1], synth.standing_height(hopper) + 0.5)
    assert synth.lowest_point(hopper, clip.frames[0]) > 0.45


def test_pendulum_swing_periodic(chain3):
    clip = synth.pendulum_swing(chain3, 4.0)
    assert np.abs(clip.frames[0] - clip.frames[-1]).max() < 1e-9


def test_bimodal_dataset_balanced(biped):
    clips = synth.bimodal_turn_dataset(biped, pairs=4, rng=np.random.default_rng(0))
    dirs = [turn_direction(frames_to_features(c.frames)) for c in clips]
    assert dirs.count(1) == dirs.count(-1) == 4


def test_generated_clips_smooth(biped, hopper):
    for kind, model in (("cyclic-walk", biped), ("bimodal-turn", biped), ("spin", biped),
                        ("planar-hop", hopper), ("hover", hopper)):
        clip = synth.generate_synthetic_clip(kind, model, 2.0)
        clip.check_model(model)
        assert clip.fps == 30.0
        v = clip.velocities()
        assert np.all(np.isfinite(v)) and np.abs(np.diff(v, axis=0)).max() < 3.0


def test_unsupported_kind_pairings(ball):
    with pytest.raises(ContractError):
        synth.generate_synthetic_clip("planar-hop", ball)
    with pytest.raises(ContractError):
        synth.generate_synthetic_clip("pendulum-swing", ball)
    with pytest.raises(ContractError):
        synth.generate_synthetic_clip("moonwalk", ball)


def test_walks_rest_on_ground(biped):
    clip = synth.cyclic_walk(biped, 2.0)
    lows = [synth.lowest_point(biped, q) for q in clip.frames]
    assert max(abs(x) for x in lows) < 0.01


# -- configuration -------------------------------------------------------------

def test_paper_defaults():
    cfg = C.resolve()
    p = C.ppo_config(cfg)
    assert (p.gamma, p.lam, p.batch, p.minibatch, p.policy_lr, p.value_lr, p.clip, p.hidden) == \
        (0.95, 0.95, 50000, 2048, 5e-5, 3e-4, 0.2, (512, 256))
    assert p.policy_variance == 0.1
    r = C.reward_config(cfg)
    assert r.w_world == (0.3, 0.1, 0.5, 0.1) and r.w_reg == 0.1


def test_override_and_preset_order(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "desk", "ppo": {"batch": 3000}, "seed": 4}))
    cfg = C.resolve(path, ["ppo.minibatch=100", "reward.kind=local"])
    assert cfg["ppo"]["batch"] == 3000 and cfg["ppo"]["minibatch"] == 100 and cfg["ppo"]["hidden"] == [64, 64]
    assert cfg["seed"] == 4 and cfg["reward"]["kind"] == "local"


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        C.resolve(overrides=["ppo.nope=1"])
    with pytest.raises(ConfigError):
        C.resolve(overrides=["noequals"])
    with pytest.raises(ConfigError):
        C.resolve(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        C.resolve(preset="huge")
    with pytest.raises(ConfigError):
        C.resolve(overrides=["controller.mode=torque"])
    with pytest.raises((ConfigError, ContractError)):
        C.resolve(overrides=["ppo.minibatch=100000"])


def test_dumped_config_resolves_identically(tmp_path):
    cfg = C.resolve(preset="desk", overrides=["seed=3"])
    C.dump(cfg, tmp_path / "c.yaml")
    assert C.resolve(tmp_path / "c.yaml") == cfg
