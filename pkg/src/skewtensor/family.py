from __future__ import annotations

from enum import Enum


class Family(str, Enum):
    """Distribution families; values are the short names used on the CLI."""

    NORMAL = "normal"
    SKEW_T = "st"
    GEN_HYPERBOLIC = "gh"
    VARIANCE_GAMMA = "vg"
    SAL = "sal"
    NIG = "nig"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown family {name!r}; expected one of {valid}") from None

    @property
    def is_skewed(self) -> bool:
        return self is not Family.NORMAL

    @property
    def scalar_names(self) -> tuple[str, ...]:
        """Names of the free family-specific scalars."""
        return _SCALARS[self]


_SCALARS = {
    Family.NORMAL: (),
    Family.SKEW_T: ("nu",),
    Family.GEN_HYPERBOLIC: ("lam", "omega"),
    Family.VARIANCE_GAMMA: ("gamma",),
    Family.SAL: (),
    Family.NIG: ("kappa",),
}

SKEWED_FAMILIES = tuple(f for f in Family if f.is_skewed)
