import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsa_noma.decodable import (
    decodable_lookup,
    decodable_types,
    enumerate_decodable_set,
    is_type_decodable,
)

from .oracles import decodable_by_rule
from .properties import check_decodable_bruteforce


@pytest.mark.parametrize("c,t,expected", [
    ((1, 1), 1, True),
    ((1, 0, 2), 1, True),
    ((1, 2, 0), 1, False),
    ((0, 0), 1, False),
])
def test_predicate_examples(c, t, expected):
    assert is_type_decodable(c, t) is expected


def test_predicate_index_error():
    with pytest.raises(IndexError):
        is_type_decodable((1, 1), 3)
    with pytest.raises(IndexError):
        is_type_decodable((1,), 0)


def test_decodable_types_examples():
    assert decodable_types((1, 1)) == {1, 2}
    assert decodable_types((2, 1)) == {t for t in (1, 2) if decodable_by_rule((2, 1), t)}
    assert decodable_types((1,)) == {1}


def test_enumeration_examples():
    assert set(enumerate_decodable_set(1, 2)) == {(1, 0), (1, 1)}
    assert set(enumerate_decodable_set(2, 3)) == {(0, 1, 0), (0, 1, 1), (1, 1, 0), (1, 1, 1)}
    assert set(enumerate_decodable_set(1, 1)) == {(1,)}
    assert [len(enumerate_decodable_set(t, 3)) for t in (1, 2, 3)] == [5, 4, 4]


def test_bruteforce_equivalence():
    check_decodable_bruteforce(5)


def test_lookup_table_consistent():
    for T in range(1, 5):
        for c, ts in decodable_lookup(T).items():
            assert set(ts) == decodable_types(c)


patterns = st.integers(1, 5).flatmap(
    lambda T: st.tuples(st.lists(st.integers(0, 4), min_size=T, max_size=T),
                        st.lists(st.integers(0, 4), min_size=T, max_size=T),
                        st.integers(1, T)))


@settings(max_examples=500, deadline=None)
@given(patterns)
def test_monotone_under_removal(args):
    c, drop, t = args
    smaller = [max(0, a - b) for a, b in zip(c, drop)]
    smaller[t - 1] = c[t - 1]
    if is_type_decodable(c, t) and smaller[t - 1] == 1:
        assert is_type_decodable(smaller, t)
