"""physgan-lab: a desk-scale laboratory for physical adversarial signs against video steering models.

Renders synthetic drive-by scenes, trains a small 3D-CNN steering regressor,
attacks it with a generator that paints a roadside billboard, compares the
result with FGSM, PhysFGSM, RP2 and random-noise baselines, and reports
steering-angle errors open- and closed-loop.
"""

__version__ = "0.1.0"
