from . import datasets, experiment  # noqa: F401
