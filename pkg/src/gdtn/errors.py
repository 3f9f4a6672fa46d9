"""Exception hierarchy.

Every domain failure derives from :class:`GdtnError`, which the CLI maps to
exit code 1. Schema and usage problems raise :class:`ScenarioError` (exit 2).
"""

from __future__ import annotations


class GdtnError(Exception):
    """Base class for domain errors."""


class ScenarioError(Exception):
    """Scenario document is unreadable or fails schema validation."""


# twin_graph
class DuplicateId(GdtnError):
    pass


class UnknownAsset(GdtnError):
    pass


class UnknownTwin(GdtnError):
    pass


class AlreadyBound(GdtnError):
    pass


class FidelityError(GdtnError):
    """Doppel binding with a partial key set, or Light keys outside the asset."""


class CycleWouldForm(GdtnError):
    pass


class HasChildren(GdtnError):
    pass


class MissingSourceKey(GdtnError):
    def __init__(self, twin: str, key: str):
        super().__init__(f"twin {twin!r} has no state key {key!r}")
        self.twin = twin
        self.key = key


class EmptyChildSet(GdtnError):
    pass


class InvalidGraph(GdtnError):
    pass


# stochastic_dag
class InvalidDistribution(GdtnError):
    pass


class MissingDuration(GdtnError):
    def __init__(self, twin: str):
        super().__init__(f"no duration for twin {twin!r}")
        self.twin = twin


class UnsupportedDist(GdtnError):
    pass


class StateSpaceTooLarge(GdtnError):
    pass


# mixture
class TooFewSamples(GdtnError):
    pass


class DegenerateComponent(GdtnError):
    pass


class ExtrapolationRefused(GdtnError):
    pass


class ComponentCountMismatch(GdtnError):
    pass


# simkit
class EngineStopped(GdtnError):
    pass


# tsn_mgmt
class NoPath(GdtnError):
    pass


class UnknownLink(GdtnError):
    pass


class InvalidTopology(GdtnError):
    pass


# workload_replica
class MissingModelForLoad(GdtnError):
    pass


class EmptySamples(GdtnError):
    pass


class InvalidValue(GdtnError):
    """Attribute/state value outside the supported scalar types."""
