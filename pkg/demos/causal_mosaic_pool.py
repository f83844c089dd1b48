"""Small mosaic run on twelve synthetic pairs: random training sets, accuracy
tables, threshold search and a decision for a new pair."""
import numpy as np

from causal_mosaic import mosaic, synth
from causal_mosaic.dataio import CausalPair

net = synth.sample_mixing(30)
spec = synth.sample_scales(13, seed=31)
gen = synth.generate_pairs(net, spec, 300, seed=32, orientation="random")
pairs = [CausalPair(p.pair_id + 1, p.observations, p.cause_index, 1.0) for p in gen[:12]]

config = mosaic.EnsembleConfig(n_models=16, n_retries=2, min_set_size=4, max_set_size=8,
                               depth_range=(2, 4), width_range=(8, 24), steps_range=(500, 1000),
                               n_threshold_settings=25, seed=1)
pool = mosaic.evaluate_pool(pairs, mosaic.random_training(pairs, config), config)
print("training accuracy per tessera", np.round(pool.taccs, 2))

summary = mosaic.summarize(mosaic.threshold_search(pairs, pool, config))
print("threshold search", summary)

for pid, s in sorted(mosaic.decide_all(pool, 0.65, 0.65).items()):
    truth = next(p.cause for p in pairs if p.pair_id == pid)
    print(f"pair {pid:2d} truth {truth} decision {s.decision:7s} score {s.score:+.3f} "
          f"from {len(s.tessera_ids)} tesserae")

new = gen[12]
s = mosaic.decide_new_pair(pool, new.observations, config)
print("unseen pair:", s.decision, "truth", new.cause_index)
