"""Edge-based data lake simulation for intelligent transportation systems.

Subpackages map onto the architecture: :mod:`databus` (publish/subscribe
bus), :mod:`lakecore` (zone catalog, tiers, lineage) and three applications
running on top, :mod:`vsn`, :mod:`handover` and :mod:`driverid`.
:mod:`pipeline` and :mod:`cli` wire them into seeded, reproducible runs.
"""

__version__ = "0.1.0"
