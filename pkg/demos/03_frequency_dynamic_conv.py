"""Frequency-dynamic convolution: what the attention does and what it costs.

Prints the per-frequency basis weights of one layer, checks that a
single-basis network reproduces a plain CRNN, and compares model sizes.

    python3 demos/03_frequency_dynamic_conv.py
"""

import numpy as np

from atsed.models import ATBackbone, AtBackboneConfig, CRNN, CrnnConfig, FdyConv2d, copy_crnn_into_fdy
from atsed.numerics.tensor import Tensor

rng = np.random.default_rng(0)
layer = FdyConv2d(4, 8, 3, n_basis=4, temperature=31.0, rng=rng)
x = Tensor(rng.normal(size=(1, 4, 16, 50)))
w = layer.attention(x).data[0]
print("basis weights for 4 of 16 frequency rows (rows sum to 1):")
for f in (0, 5, 10, 15):
    print(f"  row {f:2d}: {np.round(w[f], 4).tolist()}")
cool = FdyConv2d(4, 8, 3, n_basis=4, temperature=1.0, rng=np.random.default_rng(0))
print("same layer at temperature 1, row 0:", np.round(cool.attention(x).data[0, 0], 4).tolist())

crnn = CRNN(CrnnConfig(n_classes=10), np.random.default_rng(1)).eval()
single = CRNN(CrnnConfig(n_classes=10, fdy=True, n_basis=1), np.random.default_rng(2)).eval()
copy_crnn_into_fdy(single, crnn)
clip = np.random.default_rng(3).normal(size=(1, 626, 128))
diff = np.abs(crnn(clip).frame.data - single(clip).frame.data).max()
print(f"one-basis FDY-CRNN vs CRNN, max output difference: {diff:.1e}")

sizes = {
    "CRNN": CRNN(CrnnConfig(), rng).num_parameters(),
    "FDY-CRNN (4 bases)": CRNN(CrnnConfig(fdy=True), rng).num_parameters(),
    "AT backbone, width / 8": ATBackbone(AtBackboneConfig.desk(8), rng).num_parameters(),
}
for name, n in sizes.items():
    print(f"{name:24s} {n / 1e6:7.2f} M parameters")
