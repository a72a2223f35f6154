"""emixlab: a desk-scale laboratory for adversarial domain adaptation with a
mixup-based proxy of the combined risk.

Modules:

- ``numerics``: plain-numpy MLPs with manual backprop and gradient checks
- ``losses``: source and modified target cross-entropy, MSE proxy loss
- ``vicinal``: mixup, e-mixup and confident pseudo-label selection
- ``risks``: empirical source risk, disparity, proxy and combined risk
- ``oracle``: exact bound verification on finite instances
- ``synthdata``: shifted two-moons and blob tasks, A-distance
- ``trainer``: the four-network training loop and ablation variants
- ``cli``: the ``emixlab`` command
"""

__version__ = "0.1.0"
