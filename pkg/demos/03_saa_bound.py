# How well can anyone predict the loading from counts alone?
# The SAA medoid over sampled weight scenarios gives an empirical floor on D.
from loadcast import language as L
from loadcast import saa
from loadcast.catalog import builtin_catalog
from loadcast.instances import DATA_CLASSES, DatasetSpec, generate_labelled

toy = builtin_catalog("toy")
labelled = generate_labelled(DatasetSpec(DATA_CLASSES["T"], 300, seed=2), toy)
xs = [li.instance.first_stage for li in labelled]
gold = [L.decode_output(li.target, toy) for li in labelled]

rows = saa.saa_bound(xs, gold, toy, counts=(1, 5, 10, 25), seed=2)
print(saa.format_rows(rows))

# one instance up close: the first whose scenarios disagree
tv = L.target_vocab(toy)
for i, x in enumerate(xs):
    descs = saa.scenario_descriptions(x, 8, saa.saa_rng(2, i, 8), toy)
    if len(set(descs)) > 1:
        break
print("instance", i, "railcars", x.railcars, "containers", x.containers)
for j, d in enumerate(descs):
    print(f"  scenario {j}:", tv.to_line(L.encode_output(d, toy)))
print(f"  medoid: scenario {saa.medoid(descs, toy)}")
print("  actual:", tv.to_line(L.encode_output(gold[i], toy)))
