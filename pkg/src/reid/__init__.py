"""
Video person re-identification toolkit.

Library modules: datasets, transforms, model, losses, optim, evalkit,
trainer, checkpoint, config, reports. Command-line verbs live in
``reid.management.commands`` and are reachable through ``reid.cli.main``.
"""
