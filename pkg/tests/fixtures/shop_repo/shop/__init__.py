"""Shop package."""
from .models import Item, Cart

__all__ = ["Item", "Cart"]
