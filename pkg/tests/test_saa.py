import numpy as np
import pytest

from loadcast import saa
from loadcast.evaluation import discrepancy, observation_ratio
from loadcast.instances import Instance
from loadcast.oracle import OperationalSolution, SolutionDescription, solve_full_info, synthesize


def test_default_counts():
    assert saa.DEFAULT_SCENARIOS == (5, 10, 25, 50, 99)


def test_medoid_trivial_cases(toy):
    d = SolutionDescription.of([1, 5])
    assert saa.medoid([d] * 4, toy) == 0
    assert saa.medoid([d], toy) == 0
    with pytest.raises(ValueError):
        saa.medoid([], toy)


def _avg(c, descs, toy):
    return sum(observation_ratio(*discrepancy(d, c, toy)) for d in descs) / len(descs)


def test_medoid_minimises_recomputed_average(toy):
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        descs = [SolutionDescription.of(rng.integers(0, 12, int(rng.integers(0, 4)))) for _ in range(n)]
        i = saa.medoid(descs, toy)
        avgs = [_avg(c, descs, toy) for c in descs]
        assert avgs[i] <= min(avgs) + 1e-12
        assert i == min(k for k, a in enumerate(avgs) if a <= min(avgs) + 1e-12)


def test_saa_predict_single_scenario(toy):
    x = Instance((1, 1), (3, 2))
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    got = saa.saa_predict(x, 1, rng_a, toy)
    only = saa.scenario_descriptions(x, 1, rng_b, toy)[0]
    assert got == only


def test_saa_predict_is_a_scenario_medoid(toy):
    x = Instance((2, 1), (6, 3))
    descs = saa.scenario_descriptions(x, 12, saa.saa_rng(1, 0, 12), toy)
    got = saa.saa_predict(x, 12, saa.saa_rng(1, 0, 12), toy)
    assert got == descs[saa.medoid(descs, toy)]
    assert saa.saa_predict(x, 12, saa.saa_rng(1, 0, 12), toy) == got


def test_no_containers_gives_empty(toy):
    for n in (1, 5):
        assert saa.saa_predict(Instance((3, 2), (0, 0)), n, np.random.default_rng(0), toy) == SolutionDescription()


def test_oracle_failure_names_scenario(toy):
    calls = []

    def flaky(x, c):
        calls.append(1)
        if len(calls) == 3:
            raise ArithmeticError("boom")
        return solve_full_info(x, c)

    with pytest.raises(saa.ScenarioError, match="scenario 2") as info:
        saa.saa_predict(Instance((1, 1), (2, 2)), 5, np.random.default_rng(0), toy, oracle=flaky)
    assert info.value.index == 2


def test_bound_table(toy):
    rng = np.random.default_rng(3)
    xs, gold = [], []
    for _ in range(12):
        x = Instance(tuple(int(v) for v in rng.integers(0, 3, 2)), tuple(int(v) for v in rng.integers(0, 7, 2)))
        from loadcast.instances import sample_weights

        gold.append(synthesize(solve_full_info(sample_weights(x, rng), toy)))
        xs.append(x)
    preds = {}
    rows = saa.saa_bound(xs, gold, toy, (1, 3), seed=5, predictions=preds)
    assert [r.n_scenarios for r in rows] == [1, 3]
    assert all(r.D >= 0 and r.D_se >= 0 and r.time_mean > 0 for r in rows)
    again = saa.saa_bound(xs, gold, toy, (1, 3), seed=5)
    assert [(r.D, r.D_se) for r in rows] == [(r.D, r.D_se) for r in again]
    assert len(preds[3]) == 12
    text = saa.format_rows(rows)
    assert text.splitlines()[0] == "n_scenarios,D,D_se,ratio_std,time_mean,time_std"
    assert saa.format_rows(rows, timing=False).splitlines()[0] == "n_scenarios,D,D_se,ratio_std"
    with pytest.raises(ValueError):
        saa.saa_bound(xs, gold, toy, (3, 1))
    with pytest.raises(ValueError):
        saa.saa_bound(xs, gold[:3], toy, (1,))


def test_parallel_matches_serial(toy):
    rng = np.random.default_rng(8)
    xs = [Instance((1, 1), (int(a), int(b))) for a, b in rng.integers(0, 5, (6, 2))]
    gold = [SolutionDescription()] * 3 + [SolutionDescription.of([1])] * 3
    gold = [g if sum(x.containers) else SolutionDescription() for g, x in zip(gold, xs)]
    a = saa.saa_bound(xs, gold, toy, (2,), seed=1, jobs=1)
    b = saa.saa_bound(xs, gold, toy, (2,), seed=1, jobs=2)
    assert (a[0].D, a[0].D_se) == (b[0].D, b[0].D_se)
