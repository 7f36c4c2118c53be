"""bbmlab: branching Brownian motion with absorption, its genealogy, and
the associated continuous-state branching process, at desk scale.

Subpackages: analytics (closed-form kernels and rates), engine (the
particle simulator), genealogy (partitions and discrete bridges),
coalescent (Kingman / Bolthausen-Sznitman samplers), flows (stable
subordinator flows and Poisson-Dirichlet bridges), fkpp (critical BBM, the
limit variable W, and the traveling wave), experiments and verify (the
statistical harness), cli (command line).
"""

__version__ = "0.1.0"
