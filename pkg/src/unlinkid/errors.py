from __future__ import annotations


class UnlinkidError(Exception):
    """Base class for all errors raised by this package."""


class NotFoundError(UnlinkidError, LookupError):
    pass


class DuplicateError(UnlinkidError):
    pass


class AuthorizationError(UnlinkidError):
    pass


class RefusalToProve(UnlinkidError):
    """Raised when asked to prove a statement the witness does not satisfy."""


class StaleWitnessError(UnlinkidError):
    """Witness proofs do not match the roots of the bundle they are paired with."""


class PortfolioExhausted(UnlinkidError):
    """No unused identifiers left; extend the portfolio and re-register."""


class PersistenceError(UnlinkidError):
    pass


class KeySlotCollision(UnlinkidError, ValueError):
    """Two distinct keys share a leaf position in a reduced-depth sparse tree."""
