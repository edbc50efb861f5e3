import random

import pytest
import yaml

from loadcast.catalog import (
    CatalogError,
    PlatformSpec,
    RailcarType,
    builtin_catalog,
    catalog_from_dict,
    enumerate_patterns,
    load_catalog,
    parse_catalog,
)
from oracles import patterns_by_slot_fillings

REPO = __import__("pathlib").Path(__file__).resolve().parents[1]


def test_toy_shape(toy):
    assert (toy.n_types, toy.n_lengths) == (2, 2)
    r0 = {p.counts for p in toy.patterns_by_type[0]}
    r1 = {p.counts for p in toy.patterns_by_type[1]}
    assert r0 == {(1, 0), (2, 0), (0, 1), (1, 1)}
    assert r1 == {(1, 0), (2, 0), (1, 1), (3, 0), (2, 1), (4, 0), (3, 1), (2, 2)}
    assert toy.n_patterns == 12


def test_default_catalog_shape(default10):
    assert (default10.n_types, default10.n_lengths) == (10, 2)
    assert default10.n_patterns == 155


def test_global_index_is_concatenation_sorted_within_type(default10):
    g = 0
    for j, pats in enumerate(default10.patterns_by_type):
        counts = [p.counts for p in pats]
        assert counts == sorted(set(counts))
        for k, p in enumerate(pats):
            assert (p.railcar_type, p.local_index, p.global_index) == (j, k, g)
            assert p.n_containers >= 1
            g += 1
    assert [p.global_index for p in default10.patterns] == list(range(155))


def test_repo_catalog_files_match_bundled():
    for name in ("toy", "default10"):
        assert load_catalog(REPO / "catalog" / f"{name}.cfg") == builtin_catalog(name)


def test_bare_name_and_hash_stable(toy):
    assert load_catalog("toy").hash == toy.hash
    assert builtin_catalog("toy").to_dict() == toy.to_dict()


def test_zero_platform_type_has_no_patterns():
    assert enumerate_patterns(RailcarType(0, "E", (), 10.0), 2) == []


def _random_railcar(rng, n_lengths):
    plats = []
    for _ in range(rng.randint(1, 4)):
        bottom = frozenset(l for l in range(n_lengths) if rng.random() < 0.6)
        top = frozenset(l for l in range(n_lengths) if rng.random() < 0.5) if bottom else frozenset()
        plats.append(PlatformSpec(bottom, top, 50.0))
    return RailcarType(0, "X", tuple(plats), 100.0)


def test_enumeration_matches_brute_force():
    rng = random.Random(5)
    for _ in range(300):
        n_lengths = rng.randint(1, 3)
        rt = _random_railcar(rng, n_lengths)
        got = {c for c, _ in enumerate_patterns(rt, n_lengths)}
        assert got == patterns_by_slot_fillings(rt, n_lengths)


def _toy_doc():
    return yaml.safe_load((REPO / "catalog" / "toy.cfg").read_text())


def test_duplicate_index_rejected():
    doc = _toy_doc()
    doc["railcars"][1]["index"] = 0
    with pytest.raises(CatalogError, match="duplicate"):
        catalog_from_dict(doc)


def test_noncontiguous_indices_rejected():
    doc = _toy_doc()
    doc["railcars"][1]["index"] = 5
    with pytest.raises(CatalogError, match="contiguous"):
        catalog_from_dict(doc)


def test_parse_error_reports_line():
    with pytest.raises(CatalogError, match="line 3:"):
        parse_catalog("format_version: 1\nname: x\nbad: : :\n")


@pytest.mark.parametrize(
    "mutate, msg",
    [
        (lambda d: d.pop("railcars"), "at least one railcar"),
        (lambda d: d.update(container_lengths=[]), "container_lengths"),
        (lambda d: d.update(format_version=9), "format_version"),
        (lambda d: d["railcars"][0].update(weight_cap=-1), "R0"),
        (lambda d: d["railcars"][0]["platforms"][0].update(bottom=[45]), "unknown container length"),
        (lambda d: d["railcars"][0]["platforms"][0].update(bottom=[]), "top containers but no bottom"),
    ],
)
def test_validation_errors_name_the_problem(mutate, msg):
    doc = _toy_doc()
    mutate(doc)
    with pytest.raises(CatalogError, match=msg):
        catalog_from_dict(doc)


def test_missing_file():
    with pytest.raises(CatalogError, match="not found"):
        load_catalog("/nonexistent/cat.cfg")
    with pytest.raises(CatalogError):
        builtin_catalog("nope")
