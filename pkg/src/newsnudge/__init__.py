"""newsnudge: a reproducible engine for simulated news-nudge field experiments.

Library modules cover the cohort funnel, three-arm randomization, outlet
selection, gated bot-reply generation, a deterministic discrete-event
simulator, pre/post engagement measurement, and entropy-balanced
G-computation effect estimation. The ``newsnudge`` CLI chains them into a
cached, manifest-tracked pipeline.
"""

__version__ = "1.0.0"
