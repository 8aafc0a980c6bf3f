import sys
import time

from robustasr.data import gen_dataset
from robustasr.losses import MtlWeights
from robustasr.model import ModelConfig
from robustasr.train import TrainConfig, TrainingDiverged, train_mtl, evaluate_benign

ds = gen_dataset(1, n_train=2000, n_valid=200, n_test=200, len_range=(2, 6))
recipes = [
    ("STL-DEC lr=1e-3", MtlWeights(1.0, 0.0), 1e-3),
    ("STL-DEC lr=0.02", MtlWeights(1.0, 0.0), 0.02),
    ("STL-DEC lr=0.05", MtlWeights(1.0, 0.0), 0.05),
    ("STL-CTC lr=0.05", MtlWeights(1.0, 1.0), 0.05),
    ("MTL-3  lr=0.05", MtlWeights(0.7, 0.5), 0.05),
]
for name, w, lr in recipes:
    t0 = time.time()
    try:
        params, log = train_mtl(ModelConfig(seed=1),
                                TrainConfig(weights=w, epochs=30, learning_rate=lr, seed=1),
                                ds)
    except TrainingDiverged as e:
        print(f"{name}: DIVERGED {e}", flush=True)
        continue
    wer, acc = evaluate_benign(params, ds.test, MtlWeights(w.lambda_t_A, w.lambda_t_C))
    r = log.rows
    print(f"{name}: ep10={r[9]['valid_l_mtl']:.3f} ep30={r[29]['valid_l_mtl']:.3f} "
          f"sel={log.selected_epoch} wer={wer:.4f} acc={acc:.3f} t={time.time()-t0:.0f}s",
          flush=True)
