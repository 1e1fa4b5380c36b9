import numpy as np

from gapkin import rng


def test_event_uniforms_deterministic():
    a = rng.event_uniforms(123, "wall", np.arange(100), 3, 4)
    b = rng.event_uniforms(123, "wall", np.arange(100), 3, 4)
    assert np.array_equal(a, b)
    assert a.shape == (100, 4)
    assert np.all((a >= 0.0) & (a < 1.0))


def test_event_uniforms_scalar_matches_vector():
    vec = rng.event_uniforms(9, "wall", np.arange(10), 2, 3)
    for i in range(10):
        one = rng.event_uniforms(9, "wall", i, 2, 3)
        assert np.array_equal(one, vec[i])


def test_streams_decorrelated():
    n = 50000
    a = rng.event_uniforms(123, "wall", np.arange(n), 0, 1)[:, 0]
    b = rng.event_uniforms(123, "init", np.arange(n), 0, 1)[:, 0]
    c = rng.event_uniforms(124, "wall", np.arange(n), 0, 1)[:, 0]
    d = rng.event_uniforms(123, "wall", np.arange(n), 1, 1)[:, 0]
    for other in (b, c, d):
        r = np.corrcoef(a, other)[0, 1]
        assert abs(r) < 0.02
    assert not np.array_equal(a, b)


def test_uniformity_moments():
    u = rng.event_uniforms(5, "mom", np.arange(100000), 0, 1)[:, 0]
    assert abs(np.mean(u) - 0.5) < 0.005
    assert abs(np.var(u) - 1.0 / 12.0) < 0.002
    # each of 20 equal bins is populated close to evenly
    counts, _ = np.histogram(u, bins=20, range=(0.0, 1.0))
    assert np.max(np.abs(counts - 5000)) < 350


def test_stream_uniforms_is_rebound_zero():
    a = rng.stream_uniforms(7, "s", np.arange(8), 2)
    b = rng.event_uniforms(7, "s", np.arange(8), 0, 2)
    assert np.array_equal(a, b)


def test_draw_index_extends_prefix():
    # asking for more draws extends the sequence without changing the prefix
    a = rng.event_uniforms(7, "s", 3, 1, 2)
    b = rng.event_uniforms(7, "s", 3, 1, 5)
    assert np.array_equal(a, b[:2])
