# Small end-to-end run on the toy catalog: label, train both approximators, compare.
# Takes a couple of minutes on one core.
import time

import numpy as np

from loadcast import baseline, heuristics, nmt
from loadcast import language as L
from loadcast.catalog import builtin_catalog
from loadcast.evaluation import evaluate, time_predictions
from loadcast.instances import DATA_CLASSES, DatasetSpec, assign_splits, generate_labelled

toy = builtin_catalog("toy")
spec = DatasetSpec(DATA_CLASSES["T"], 6000, seed=1)

t0 = time.perf_counter()
labelled = generate_labelled(spec, toy)
split = assign_splits(spec)
print(f"labelled {spec.count} instances in {time.perf_counter() - t0:.0f}s")

def pairs(name):
    return [(labelled[i].source, labelled[i].target) for i in split[name]]

train, valid = pairs("train"), pairs("valid")
test = [labelled[i] for i in split["test"]]
xs = [li.instance.first_stage for li in test]
gold = [L.decode_output(li.target, toy) for li in test]

params, hist = nmt.train(train, valid, toy, nmt.TrainConfig(embed=16, hidden=32, max_epochs=40, patience=2))
print(f"nmt: {len(hist)} epochs, best valid loss {min(r.valid_loss for r in hist):.4f}")

bparams, bhist = baseline.train_baseline(train, valid, toy, baseline.BaselineConfig(hidden=(64, 64), max_epochs=15, patience=2))
print(f"baseline: {len(bhist)} epochs, best valid loss {min(r.valid_loss for r in bhist):.4f}")

untrained = nmt.init_params(params.dims, np.random.default_rng(0))
predictors = {
    "nmt": nmt.NmtPredictor(params, toy),
    "baseline": baseline.BaselinePredictor(bparams, toy),
    "untrained nmt": nmt.NmtPredictor(untrained, toy),
    "fill largest": lambda x: heuristics.fill_largest(x, toy),
}
print(f"{'predictor':15s} {'D':>7s} {'se':>7s} {'agg':>6s} {'ms':>7s}")
for name, f in predictors.items():
    preds, t = time_predictions(f, xs)
    r = evaluate(gold, preds, toy, t)
    print(f"{name:15s} {r.D:7.4f} {r.D_se:7.4f} {r.aggregate_error:6.3f} {t.mean * 1e3:7.3f}")
