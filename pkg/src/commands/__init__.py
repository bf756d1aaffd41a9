"""Commands of the leakguard CLI.

Pipeline stages, run in this order, each reading the previous stages' artifacts:
- `gen-corpus`: synthetic corpus, datasets and tokenizer.
- `train-lm`: the language model.
- `harvest`: probing activations at every layer.
- `probe`: per-layer PII probes and the intervention layer.
- `train-sae`: sparse autoencoders.
- `rank`: PII-responsive latents and neurons.
- `eval`: the defense grid.

`run` chains every stage; `report` aggregates evaluation records over seeds.
"""

from .report import report
from .stages import evaluate, gen_corpus, harvest, probe, rank, run, train_lm, train_sae

__all__ = ["evaluate", "gen_corpus", "harvest", "probe", "rank", "report", "run", "train_lm", "train_sae"]
