"""A seconds-scale run of the whole pipeline.

MLM pre-training of a tiny encoder, head swap, then ULMFiT fine-tuning
(slanted triangular rates, per-group rate decay, one group unfrozen per
epoch), reporting validation weighted-F1 after every epoch. The same data
is then fine-tuned with the three ULMFiT mechanisms switched off.
"""

from dataclasses import replace

from codemix.corpus import SynthConfig, generate_synthetic, split_dataset
from codemix.pipeline import run_finetune, run_pretrain, tiny_run_config
from codemix.train import TrainConfig

rc = tiny_run_config(synth=SynthConfig.noisy(0.3, n_per_class=150),
                     finetune=TrainConfig(epochs=4))
data = generate_synthetic(rc.synth, seed=0)
train, valid = split_dataset(data, rc.valid_fraction, seed=0)

history = []
vocab, model, losses = run_pretrain(train, rc, seed=0, history=history)
print(f"pre-training: {len(history)} steps, masked CE {history[0].loss:.3f} -> {history[-1].loss:.3f}")

for ulmfit in (True, False):
    cfg = replace(rc, ulmfit=ulmfit, finetune_sched=replace(rc.finetune_sched, lr_max=1e-2 if ulmfit else 1e-3))
    _, reports = run_finetune(model, vocab, train, valid, cfg, seed=0)
    label = "ULMFiT (lr 1e-2)" if ulmfit else "plain  (lr 1e-3)"
    print(label, "val weighted-F1 per epoch:", [round(r.weighted_f1, 3) for r in reports])
