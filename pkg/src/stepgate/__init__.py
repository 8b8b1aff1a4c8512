"""Conditional timestep gating for long-sequence classification at desk scale.

A cheap per-timestep network scores every timestep of a long input sequence,
a learned gate decides which timesteps deserve the expensive segment encoder,
and the classifier only ever runs on the selected segments.  The package
bundles the differentiable gating machinery, the two-stage classifier,
segment-sampling baselines, a synthetic activity-sequence generator whose
ground-truth relevance is context dependent, a GFLOP cost model, and a
training/evaluation harness with a small CLI.
"""

__version__ = "0.1.0"
