"""Neuro-symbolic knowledge-base completion toolkit.

Submodules mirror the moving parts: `kb` (data model and parsing),
`symbolic` (discrete backward chaining and forward closure), `diffcore`
(autodiff tape, optimizer, checkpoints), `linkpred` (neural link prediction
scorers and losses), `rulereg` (differentiable propositional rule losses and
lifted implication injection), `ntp` (the end-to-end differentiable prover),
`datasets` (benchmark builders and synthetic generators), `metrics` (ranking
evaluation), and `cli` (command-line entry point).
"""

__version__ = "0.1.0"
