# Train a small classifier on the synthetic sphere/cube/torus task.
#
# $ python demos/train_synthetic.py
#
# Scaled down from the benchmark recipe (fewer clouds, fewer epochs) so it
# finishes in well under a minute on one CPU core.  Expect test overall
# accuracy to reach 0.9+ by the last epoch.

from paiconv import ClassifierConfig, TrainConfig, build, evaluate, fit
from paiconv import stream, synth_shapes

cfg = ClassifierConfig(conv_channels=(8, 16), aggregate_width=32,
                       fc_widths=(16, 3), k_neighbors=8, kernel_points=8,
                       d_r=4, dropout_p=0.5, pooling="max")
train = synth_shapes(30, 128, stream(0, "data"))
test = synth_shapes(15, 128, stream(0, "data", index=1))

clf = build(cfg, stream(0, "init"))
schedule = TrainConfig(epochs=12, batch_size=8, lr_init=0.008,
                       lr_final=0.0016, seed=0)
for epoch, lr, loss, oa, ma in fit(clf, train, schedule):
    print(f"epoch {epoch:2d}  lr {lr:.5f}  loss {loss:.3f}  train oa {oa:.3f}")

m = evaluate(clf, test)
print(f"test: oa {m.oa:.3f}  ma {m.ma:.3f}  loss {m.loss:.3f}")
