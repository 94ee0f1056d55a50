"""Vehicular micro clouds and a macro cloud overlay, as a discrete-event simulation.

The package is layered bottom-up: ``simcore`` (engine, clocks), ``mobility``
(traces), ``net`` (radio), ``microcloud`` (membership and hand-off),
``macrocloud`` (discovery and sessions), ``storage`` (GPS-stamped replicated
records and consistency checkers), ``planner`` (site selection and capacity)
and ``cli``.
"""

__version__ = "0.1.0"
