"""Benchmark workloads packaged as persistent classes.

Importing this package pulls in numpy; client processes should not.
"""


def register(registry) -> None:
    from . import csvm, trainer

    trainer.register(registry)
    csvm.register(registry)
