"""Minute-level desaturation risk prediction from intraoperative vital signs.

The package is organized bottom-up:

- ``autodiff`` / ``optim`` / ``rng``: a small float64 reverse-mode tensor
  engine, the Adam optimizer, and deterministic named random streams.
- ``layers`` / ``crf``: the neural building blocks (attention memory encoder,
  dilated causal residual stacks, fully connected blocks, linear-chain CRF).
- ``data`` / ``synth``: cohort ingestion, imputation, normalization, event
  labeling, window extraction, splits, and a statistically controlled
  synthetic cohort generator.
- ``model`` / ``train`` / ``checkpoint``: the joint multi-branch network, its
  training loop, streaming inference, and a binary checkpoint container.
- ``metrics``: evaluation metrics for rare-event minute-level alarms.
- ``cli``: the ``desatnet`` command line tool.
"""

__version__ = "0.1.0"
