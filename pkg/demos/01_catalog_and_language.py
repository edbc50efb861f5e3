# Walk through one toy instance: patterns, tokens, exact solve, target phrase.
import numpy as np

from loadcast import language as L
from loadcast.catalog import builtin_catalog
from loadcast.instances import Instance, sample_weights
from loadcast.oracle import solve_full_info, synthesize

toy = builtin_catalog("toy")

for rt, pats in zip(toy.railcar_types, toy.patterns_by_type):
    print(rt.name, rt.n_platforms, "platform(s):", [p.counts for p in pats])
print("output vocabulary:", L.target_vocab(toy).tokens)

x = Instance((2, 1), (5, 3))
print("source:", L.source_vocab(toy).to_line(L.encode_input(x, toy)))

# weights only become known later; draw one realisation and solve exactly
xw = sample_weights(x, np.random.default_rng(4))
print("weights 40ft:", xw.weights[0])
print("weights 53ft:", xw.weights[1])

sol = solve_full_info(xw, toy)
for load in sol.loads:
    print(" ", toy.railcar_types[load.railcar_type].name, load.slots)
print("cost (loaded, platforms, railcars):", tuple(sol.cost()))

desc = synthesize(sol)
print("target:", L.target_vocab(toy).to_line(L.encode_output(desc, toy)))
