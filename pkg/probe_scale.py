import time

import numpy as np

import robustasr.data as data
from robustasr.losses import MtlWeights
from robustasr.model import ModelConfig
from robustasr.train import TrainConfig, train_mtl, evaluate_benign

orig_default = data.FeatureWorld.default.__func__


def scaled_world(scale):
    def f(cls, vocab, feat_dim=16):
        w = orig_default(cls, vocab, feat_dim)
        return data.FeatureWorld(feat_dim=w.feat_dim, prototypes=w.prototypes,
                                 accent_maps=w.accent_maps * scale)
    return classmethod(f)


for scale, lr in [(2.0, 0.02), (3.0, 0.02), (3.0, 0.05), (4.0, 0.05)]:
    data.FeatureWorld.default = scaled_world(scale)
    ds = data.gen_dataset(1, n_train=600, n_valid=100, n_test=100, len_range=(2, 6))
    t0 = time.time()
    params, log = train_mtl(ModelConfig(seed=1),
                            TrainConfig(weights=MtlWeights(1.0, 0.0), epochs=30,
                                        learning_rate=lr, seed=1),
                            ds)
    wer, acc = evaluate_benign(params, ds.test, MtlWeights(1.0, 0.0, lambda_i_C=0.0))
    r = log.rows
    print(f"scale={scale} lr={lr}: ep10={r[9]['valid_l_mtl']:.3f} "
          f"ep30={r[29]['valid_l_mtl']:.3f} sel={log.selected_epoch} "
          f"wer={wer:.4f} t={time.time()-t0:.0f}s", flush=True)
