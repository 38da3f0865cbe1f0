import numpy as np
import pytest

from conftest import import_required

rng = import_required("rng")


def test_splitmix64_matches_published_vectors(golden_lines):
    rows = [tokens for tag, tokens in golden_lines if tag == "splitmix64"]
    assert rows
    seed, *expected = rows[0]
    assert rng.splitmix64_sequence(int(seed), len(expected)) == [int(v) for v in expected]


def test_xoshiro_from_raw_state_matches_published_vectors(golden_lines):
    rows = [tokens for tag, tokens in golden_lines if tag == "xoshiro_state"]
    tokens = rows[0]
    state, expected = [int(v) for v in tokens[:4]], [int(v) for v in tokens[4:]]
    stream = rng.Stream.from_state(state)
    assert [stream.next_u64() for _ in expected] == expected


def test_keyed_streams_match_recorded_outputs(golden_lines):
    rows = [tokens for tag, tokens in golden_lines if tag == "key"]
    assert len(rows) == 3
    for seed, sid, *expected in rows:
        stream = rng.StreamKey(int(seed), int(sid)).stream()
        assert [stream.next_u64() for _ in expected] == [int(v) for v in expected]


def test_first_uniforms_are_recorded(golden_lines):
    seed, sid, *expected = next(tokens for tag, tokens in golden_lines if tag == "uniform")
    stream = rng.Stream(int(seed), int(sid))
    got = [stream.next_uniform() for _ in expected]
    assert got == pytest.approx([float(v) for v in expected], rel=0, abs=1e-16)


def test_identical_keys_give_identical_sequences():
    a = rng.StreamKey(42, 3).stream()
    b = rng.StreamKey(42, 3).stream()
    assert [a.next_gaussian() for _ in range(20)] == [b.next_gaussian() for _ in range(20)]


def test_block_lanes_equal_scalar_streams():
    ids = [0, 5, rng.stream_id(3, 17)]
    block = rng.StreamBlock(7, ids)
    lanes = np.stack([block.next_u64() for _ in range(6)], axis=1)
    for lane, sid in zip(lanes, ids):
        stream = rng.Stream(7, sid)
        assert [int(v) for v in lane] == [stream.next_u64() for _ in range(6)]


def test_distinct_streams_are_uncorrelated():
    xs = rng.StreamBlock(42, np.arange(0, 200_000, 2)).next_uniform()
    ys = rng.StreamBlock(42, np.arange(1, 200_000, 2)).next_uniform()
    assert abs(np.corrcoef(xs, ys)[0, 1]) < 0.01

    a, b = rng.Stream(42, 1), rng.Stream(42, 2)
    first = np.array([a.next_uniform() for _ in range(20_000)])
    second = np.array([b.next_uniform() for _ in range(20_000)])
    assert abs(np.corrcoef(first, second)[0, 1]) < 0.03


def test_uniform_stays_in_open_interval():
    block = rng.StreamBlock(0, range(10_000))
    u = block.next_uniform()
    assert np.all(u > 0.0) and np.all(u < 1.0)


def test_exponential_and_gaussian_moments():
    block = rng.StreamBlock(11, range(200_000))
    e = block.next_exponential()
    g = block.next_gaussian()
    se = 1.0 / np.sqrt(e.size)
    assert abs(e.mean() - 1.0) < 4 * se
    assert abs(g.mean()) < 4 * se
    assert abs(g.var() - 1.0) < 4 * np.sqrt(2.0) * se


def test_compact_keeps_surviving_sequences():
    full = rng.StreamBlock(3, range(4))
    part = rng.StreamBlock(3, range(4))
    full.next_u64()
    part.next_u64()
    part.compact(np.array([True, False, True, False]))
    assert part.size == 2
    assert list(part.next_u64()) == list(full.next_u64()[[0, 2]])


def test_from_state_rejects_all_zero_lane():
    with pytest.raises(ValueError):
        rng.StreamBlock.from_state([0, 0, 0, 0])


def test_stream_key_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        rng.StreamKey(-1)
    with pytest.raises(ValueError):
        rng.StreamKey(1 << 64)


def test_stream_id_namespaces_do_not_collide():
    assert rng.stream_id(1, 0) != rng.stream_id(0, 1)
    assert rng.stream_id(2, 5) == (2 << 40) | 5


def _chunk_sums(start, stop):
    block = rng.StreamBlock(9, [rng.stream_id(1, i) for i in range(start, stop)])
    return block.next_uniform() + block.next_uniform()


def test_map_paths_independent_of_workers():
    serial = rng.map_paths(_chunk_sums, 9000, workers=1)
    parallel = rng.map_paths(_chunk_sums, 9000, workers=3)
    assert serial.shape == (9000,)
    assert np.array_equal(serial, parallel)


def test_path_chunks_cover_range_in_order():
    spans = rng.path_chunks(10_000)
    assert spans[0] == (0, rng.CHUNK_PATHS)
    assert spans[-1][1] == 10_000
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
