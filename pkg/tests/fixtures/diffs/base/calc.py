"""Calculator helpers."""

PRECISION = 2


class Calc:
    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b


def helper(x):
    return x * 2


def obsolete(y):
    return y
