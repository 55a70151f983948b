"""Train a short run, compare it with the raw-pose baseline and show pose-space neighbours.

    python3 demos/train_and_retrieve.py [iterations]

A few thousand iterations already separate the learned pose space from raw
2D poses on the single-shot protocol; the acceptance runs use 30k.
"""

import sys

from cvmim.data import DatasetConfig, build_dataset
from cvmim.evaluation import extract_embeddings, probe_disentanglement, raw_embeddings, \
    retrieve_neighbors, single_shot_protocol
from cvmim.train import TrainConfig, Trainer

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
ds = build_dataset(DatasetConfig())
trainer = Trainer(ds, TrainConfig(iterations=iterations, checked=False))


def progress(tr, bundle):
    if tr.iteration % 500 == 0:
        print(f"iter {tr.iteration:>6}  e_loss {bundle.e_loss:8.4f}  q_loss {bundle.q_loss:8.3f}  "
              f"d_loss {bundle.d_loss:6.3f}")


trainer.run(callback=progress)
emb = extract_embeddings(trainer.nets.encoder, ds)

for name, feats in (("learned z_p", emb), ("raw 2D pose", raw_embeddings(ds))):
    m = single_shot_protocol(feats, ds, head="linear")
    print(f"\n{name}: single-shot grand average {100 * m.grand_average:.1f}")
    print((100 * m.values).round(1))

p = probe_disentanglement(emb, ds)
print("\nprobes:", {k: round(v, 3) for k, v in p.items()})

query = (ds.train_test("fully_supervised").test_seqs[0], 10, 1)
print(f"\npose-space neighbours of sequence {query[0]} frame 10 view 1 (class {ds.labels[query[0]]}):")
for (s, t, v), d in retrieve_neighbors(emb, query, "pose", k=5):
    print(f"  seq {s:>3} frame {t:>2} view {v}  class {ds.labels[s]}  distance {d:.3f}")
