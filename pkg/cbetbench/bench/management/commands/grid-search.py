from ._grid_search import Command  # noqa: F401
