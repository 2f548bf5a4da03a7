"""Game generator: determinism, frame algebra, rewards, packing.

The strongest checks here rebuild expected values from primitive definitions:
frames are verified by projecting onto the orthonormal appearance directions,
rollout returns by re-deriving the same per-step gains from the hidden weight
matrix, and the packed dataset by byte-level comparison.
"""

import numpy as np
import pytest
import yaml

from dellbench.errors import (
    ActionRangeError,
    ParseError,
    SchemaVersionError,
    ValidationError,
)
from dellbench.suite import (
    ACTION_COUNT,
    CONTEXT_DIM,
    EPISODE_LENGTH,
    FLICKER_HI,
    FLICKER_LO,
    GENRES,
    INPUT_DIM,
    MIN_REWARD_MARGIN,
    SyntheticGame,
    _clutter_basis,
    _signal_stack,
    _stable_seed,
    _stack_rows,
    calibrate_min_reward,
    clutter_spectrum,
    episode_contexts,
    frames_from_contexts,
    load_dataset,
    load_suite,
    make_suite,
    mean_return,
    normalize_reward,
    optimal_mean_return,
    pack_pretrain_dataset,
    quick_meta,
    random_action_mean_return,
    rollout,
    save_suite,
    step_gains,
)


@pytest.fixture(scope="module")
def suite():
    return make_suite("pretrain", 4, GENRES, seed=77, quick_meta_episodes=8)


def _toy_game(noise_scale: float = 0.0, identity_rows=()) -> SyntheticGame:
    """A hand-built game whose reward table and appearance are known exactly:
    action 0 is paid the first context coordinate, action 1 the negated
    second, every other action nothing."""
    weights = np.zeros((ACTION_COUNT, CONTEXT_DIM), dtype=np.float32)
    weights[0, 0] = 1.0
    weights[1, 1] = -1.0
    family = _stack_rows("family:maze")
    identity = np.zeros(INPUT_DIM, dtype=np.float32)
    for coeff, row in identity_rows:
        identity += np.float32(coeff) * family[row]
    return SyntheticGame(
        id="ev-toy00000-000",
        genre="maze",
        base=np.full(INPUT_DIM, 0.5, dtype=np.float32),
        identity=identity,
        modulation=np.zeros((INPUT_DIM, CONTEXT_DIM), dtype=np.float32),
        reward_weights=weights,
        reward_bias=np.zeros(ACTION_COUNT, dtype=np.float32),
        noise_scale=noise_scale,
        clutter_seed=_stable_seed("clutter", "eval", 0),
    )


# ---------------------------------------------------------------------------
# reward normalization


def test_normalize_reward_is_score_delta_indicator() -> None:
    assert normalize_reward(5.0, 3.0) == 1
    assert normalize_reward(3.0, 3.0) == 0
    assert normalize_reward(2.0, 3.0) == 0  # negative delta clamps to 0
    assert normalize_reward(-1.0, -2.0) == 1
    assert normalize_reward(0.0, 0.0) == 0


# ---------------------------------------------------------------------------
# structured directions


def test_signal_stack_is_orthonormal() -> None:
    stack, slices = _signal_stack()
    gram = stack @ stack.T
    assert np.allclose(gram, np.eye(len(stack)), atol=1e-5)
    total = sum(s.stop - s.start for s in slices.values())
    assert total == len(stack)


def test_clutter_basis_orthogonal_to_signal() -> None:
    stack, _ = _signal_stack()
    clutter = _clutter_basis(_stable_seed("clutter", "pretrain", 0))
    # distractors must carry no energy along any structured direction
    leak = np.abs(stack @ clutter).max()
    assert leak < 1e-4
    norms = np.linalg.norm(clutter, axis=0)
    assert np.allclose(norms, np.sqrt(clutter_spectrum()), atol=1e-5)


# ---------------------------------------------------------------------------
# suite generation


def test_make_suite_structure(suite) -> None:
    assert len(suite.games) == 4
    assert [g.genre for g in suite.games] == list(GENRES)  # round-robin
    for i, game in enumerate(suite.games):
        assert game.id == f"pt-{77:08x}-{i:03d}"
        assert game.id in suite.metas
    assert suite.game(suite.games[2].id) is suite.games[2]
    with pytest.raises(KeyError):
        suite.game("nope")


def test_make_suite_is_deterministic(suite) -> None:
    again = make_suite("pretrain", 4, GENRES, seed=77, quick_meta_episodes=8)
    for a, b in zip(suite.games, again.games):
        assert a.id == b.id
        assert np.array_equal(a.identity, b.identity)
        assert np.array_equal(a.reward_weights, b.reward_weights)


def test_make_suite_seed_changes_games(suite) -> None:
    other = make_suite("pretrain", 4, GENRES, seed=78, quick_meta_episodes=8)
    assert not np.array_equal(other.games[0].identity, suite.games[0].identity)
    # same index and seed under a different kind is also a different game
    ev = make_suite("eval", 4, GENRES, seed=77, quick_meta_episodes=8)
    assert not np.array_equal(ev.games[0].identity, suite.games[0].identity)
    assert ev.games[0].id.startswith("ev-")


def test_make_suite_validates_arguments() -> None:
    with pytest.raises(ValidationError):
        make_suite("test", 4, GENRES, seed=0)
    with pytest.raises(ValidationError):
        make_suite("pretrain", 4, (), seed=0)
    with pytest.raises(ValidationError):
        make_suite("pretrain", 4, ("maze", "pinball"), seed=0)
    with pytest.raises(ValidationError):
        make_suite("pretrain", 3, GENRES, seed=0)


def test_quick_meta_anchors(suite) -> None:
    """The quick meta's bar sits a fixed margin above the random floor and
    its ceiling is the analytic optimum, both at seeds derived from the id."""
    game = suite.games[1]
    floor = random_action_mean_return(game, episodes=8,
                                      seed=_stable_seed("quick-min", game.id))
    ceiling = optimal_mean_return(game, episodes=8,
                                  seed=_stable_seed("quick-max", game.id))
    meta = suite.metas[game.id]
    expected_min = floor + MIN_REWARD_MARGIN * (ceiling - floor)
    assert meta.min_reward == pytest.approx(expected_min, rel=1e-9)
    assert meta.max_reward == pytest.approx(ceiling, rel=1e-9)
    assert meta.genre == game.genre
    assert quick_meta(game, episodes=8) == meta


# ---------------------------------------------------------------------------
# frames


def test_episode_contexts_shapes_and_ranges() -> None:
    game = _toy_game()
    z, w, phi, eta = episode_contexts(game, seed=5)
    assert z.shape == (EPISODE_LENGTH, CONTEXT_DIM)
    assert w.shape[0] == EPISODE_LENGTH
    assert phi.shape == (EPISODE_LENGTH,)
    assert np.all((z >= -1.0) & (z <= 1.0))
    assert np.all((phi >= FLICKER_LO) & (phi <= FLICKER_HI))
    z2, _, _, _ = episode_contexts(game, seed=5)
    assert np.array_equal(z, z2)


def test_frames_project_back_to_their_coefficients() -> None:
    """Render a clutter-free episode and recover flicker and appearance noise
    by projecting frames onto the orthonormal family rows."""
    game = _toy_game(identity_rows=[(2.0, 0), (-1.0, 2)])
    z, w, phi, eta = episode_contexts(game, seed=11)
    frames = frames_from_contexts(game, z, np.zeros_like(w), phi, eta)
    flat = frames.reshape(-1, INPUT_DIM) - game.base
    family = _stack_rows("family:maze")
    recovered = flat @ family.T
    expected = eta.copy()
    expected[:, 0] += 2.0 * phi
    expected[:, 2] += -1.0 * phi
    assert np.allclose(recovered, expected, atol=1e-3)


def test_frames_are_clipped_to_unit_interval() -> None:
    game = _toy_game(noise_scale=25.0)  # huge clutter forces saturation
    z, w, phi, eta = episode_contexts(game, seed=3)
    frames = frames_from_contexts(game, z, w, phi, eta)
    assert frames.min() == 0.0 and frames.max() == 1.0


def test_step_gains_match_hand_computation() -> None:
    game = _toy_game()
    z = np.array([[0.5, -0.25, 0.0, 0.9],
                  [-0.5, 0.25, 1.0, 0.0]], dtype=np.float32)
    gains = step_gains(game, z)
    assert gains.shape == (2, ACTION_COUNT)
    assert gains[0, 0] == pytest.approx(0.5)
    assert gains[0, 1] == pytest.approx(0.25)   # relu(-1 * -0.25)
    assert gains[1, 0] == 0.0                   # relu(-0.5)
    assert gains[1, 1] == 0.0
    assert np.all(gains[:, 2:] == 0.0)


# ---------------------------------------------------------------------------
# rollouts


def test_rollout_accounting_matches_hand_derivation() -> None:
    """Fixed-action rollouts must reproduce cumulative score, per-step
    normalization, and episode return from the raw gain table."""
    game = _toy_game()
    traces = rollout(game, lambda frame: 0, episodes=2, seed=21)
    children = np.random.SeedSequence(21).spawn(2)
    for trace, child in zip(traces, children):
        z, _, _, _ = episode_contexts(game, child)
        per_step = np.maximum(z[:, 0], 0.0)
        assert np.allclose(trace.raw_rewards, np.cumsum(per_step), atol=1e-4)
        assert np.array_equal(trace.normalized_rewards, (per_step > 0))
        assert np.all(trace.actions == 0)
        assert trace.episode_return == pytest.approx(per_step.sum(), abs=1e-3)
        assert trace.observations.shape == (EPISODE_LENGTH, 84, 84)
    assert mean_return(traces) == pytest.approx(
        np.mean([t.episode_return for t in traces]))


def test_rollout_score_never_decreases(suite) -> None:
    traces = rollout(suite.games[0], lambda frame: 7, episodes=1, seed=0)
    assert np.all(np.diff(traces[0].raw_rewards) >= 0.0)
    assert set(np.unique(traces[0].normalized_rewards)) <= {0, 1}


def test_rollout_rejects_out_of_range_actions() -> None:
    game = _toy_game()
    with pytest.raises(ActionRangeError):
        rollout(game, lambda frame: ACTION_COUNT, episodes=1, seed=0)
    with pytest.raises(ActionRangeError):
        rollout(game, lambda frame: -1, episodes=1, seed=0)
    with pytest.raises(ValidationError):
        rollout(game, lambda frame: 0, episodes=0, seed=0)


def test_optimal_dominates_random_play(suite) -> None:
    for game in suite.games[:2]:
        opt = optimal_mean_return(game, episodes=20, seed=4)
        rnd = random_action_mean_return(game, episodes=20, seed=4)
        assert opt > rnd > 0.0


def test_calibrated_floor_tracks_random_play(suite) -> None:
    """A random frozen head cannot exploit the hidden weights, so its floor
    lands near random-action play, far under the optimum."""
    from dellbench.encoder import random_encoder

    game = suite.games[0]
    floor = calibrate_min_reward(game, random_encoder(0), episodes=20, seed=0)
    rnd = random_action_mean_return(game, episodes=100, seed=1)
    opt = optimal_mean_return(game, episodes=100, seed=1)
    assert abs(floor - rnd) < 0.15 * (opt - rnd)


# ---------------------------------------------------------------------------
# dataset packing


def test_pack_and_load_roundtrip(tmp_path, suite) -> None:
    root = pack_pretrain_dataset(suite, tmp_path / "ds", episodes_per_game=2,
                                 chunk_size=100)
    ds = load_dataset(root)
    assert sorted(ds.games) == sorted(g.id for g in suite.games)
    gid = suite.games[0].id
    game_ds = ds.games[gid]
    assert game_ds.observations.shape == (2 * EPISODE_LENGTH, 84, 84)
    assert game_ds.observations.dtype == np.uint8
    assert set(np.unique(game_ds.rewards)) <= {0, 1}
    assert game_ds.meta == suite.metas[gid]
    # frames_float is the exact inverse of the uint8 quantization
    floats = ds.frames_float(gid)
    assert floats.shape == (2 * EPISODE_LENGTH, INPUT_DIM)
    assert np.array_equal(
        np.round(floats * 255.0).astype(np.uint8),
        game_ds.observations.reshape(-1, 84 * 84))
    assert len(ds.all_frames()) == 4 * 2 * EPISODE_LENGTH


def test_pack_quantization_error_is_bounded(tmp_path, suite) -> None:
    game = suite.games[1]
    root = pack_pretrain_dataset(suite, tmp_path / "ds", episodes_per_game=1)
    ds = load_dataset(root)
    children = np.random.SeedSequence(
        [_stable_seed("pack", suite.kind, suite.seed),
         _stable_seed(game.id)]).spawn(1)
    z, w, phi, eta = episode_contexts(game, children[0])
    exact = frames_from_contexts(game, z, w, phi, eta).reshape(-1, INPUT_DIM)
    stored = ds.frames_float(game.id)
    assert np.abs(stored - exact).max() <= 0.5 / 255.0 + 1e-6


def test_pack_is_byte_deterministic(tmp_path, suite) -> None:
    a = pack_pretrain_dataset(suite, tmp_path / "a", episodes_per_game=1)
    b = pack_pretrain_dataset(suite, tmp_path / "b", episodes_per_game=1)
    for chunk_a in sorted(a.rglob("chunk_*")):
        chunk_b = b / chunk_a.relative_to(a)
        assert chunk_a.read_bytes() == chunk_b.read_bytes()


def test_load_dataset_rejects_corruption(tmp_path, suite) -> None:
    root = pack_pretrain_dataset(suite, tmp_path / "ds", episodes_per_game=1)
    chunk = next(root.rglob("chunk_*"))
    blob = chunk.read_bytes()
    chunk.write_bytes(blob[:-3])
    with pytest.raises(ParseError):
        load_dataset(root)
    chunk.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ParseError):
        load_dataset(root)
    chunk.write_bytes(blob)
    load_dataset(root)  # restored file parses again
    with pytest.raises(ParseError):
        load_dataset(tmp_path / "missing")


def test_load_dataset_rejects_bad_rewards(tmp_path, suite) -> None:
    root = pack_pretrain_dataset(suite, tmp_path / "ds", episodes_per_game=1)
    chunk = next(root.rglob("chunk_*"))
    blob = bytearray(chunk.read_bytes())
    blob[-1] = 7  # reward bytes sit at the tail of the chunk
    chunk.write_bytes(bytes(blob))
    with pytest.raises(ValidationError):
        load_dataset(root)


# ---------------------------------------------------------------------------
# suite description files


def test_suite_roundtrip(tmp_path, suite) -> None:
    path = save_suite(suite, tmp_path / "suite.yaml")
    back = load_suite(path)
    assert [g.id for g in back.games] == [g.id for g in suite.games]
    assert np.array_equal(back.games[0].identity, suite.games[0].identity)


def test_suite_file_detects_id_drift(tmp_path, suite) -> None:
    path = save_suite(suite, tmp_path / "suite.yaml")
    doc = yaml.safe_load(path.read_text())
    doc["ids"][0] = "pt-deadbeef-000"
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(ValidationError):
        load_suite(path)


def test_suite_file_version_and_shape_checks(tmp_path, suite) -> None:
    path = save_suite(suite, tmp_path / "suite.yaml")
    doc = yaml.safe_load(path.read_text())
    doc["version"] = 9
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(SchemaVersionError):
        load_suite(path)
    path.write_text("- a\n")
    with pytest.raises(ParseError):
        load_suite(path)
    with pytest.raises(ParseError):
        load_suite(tmp_path / "absent.yaml")
