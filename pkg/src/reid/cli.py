"""
Command-line entry point.

``main(argv)`` dispatches a verb to the management command of the same name
and returns the process exit status instead of exiting:

    0  success
    1  the command failed (configuration, dataset, numeric or checkpoint error)
    2  usage error (unknown verb or flag)
"""
import os
import sys
from typing import List, Optional

VERBS = ('train', 'eval', 'extract', 'synth', 'report', 'params')

USAGE = """usage: reid <verb> [options]

verbs:
  train     train a model from a run configuration
  eval      evaluate a checkpoint and write an evaluation report
  extract   dump video features (.npy + .jsonl)
  synth     generate a synthetic dataset
  report    render tables and plots from a run's metrics log
  params    print parameter counts

common options: --config PATH, --set key=value (repeatable), --seed N,
                --deterministic, --out DIR
run 'reid <verb> --help' for the options of one verb
"""


def main(argv: Optional[List[str]] = None) -> int:
    """Run one verb and return its exit status (0 ok, 1 failed, 2 usage)."""
    argv = list(sys.argv[1:] if argv is None else argv)
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'videoreid.settings')

    if not argv or argv[0] in ('-h', '--help', 'help'):
        stream = sys.stdout if argv else sys.stderr
        stream.write(USAGE)
        return 0 if argv else 2
    if argv[0] not in VERBS:
        sys.stderr.write(f"unknown verb '{argv[0]}'\n\n{USAGE}")
        return 2

    from django.core.management import ManagementUtility

    try:
        ManagementUtility(['reid'] + argv).execute()
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0
