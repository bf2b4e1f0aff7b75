from .checkout import checkout  # noqa: F401
