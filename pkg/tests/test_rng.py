from qsdtools.rng import RandomStream, replica_streams


def test_same_seed_same_stream():
    a, b = RandomStream(7), RandomStream(7)
    assert [a.random() for _ in range(5000)] == [b.random() for _ in range(5000)]


def test_children_are_independent_and_reproducible():
    first = [s.random() for s in replica_streams(3, 4)]
    second = [s.random() for s in replica_streams(3, 4)]
    assert first == second
    assert len(set(first)) == 4


def test_index_and_exponential_ranges():
    s = RandomStream(1)
    assert all(0 <= s.index(3) < 3 for _ in range(1000))
    assert all(s.exponential(2.0) > 0 for _ in range(1000))


def test_fork_does_not_advance_parent_draws():
    a, b = RandomStream(5), RandomStream(5)
    a.fork()
    assert a.random() == b.random()
