"""
ivflow: interpolating vector fields of near-identity maps.

Public API:
    from ivflow.maps import standard_map, froeschle_map, flow_map
    from ivflow.ivf import IvfField
    from ivflow.flow import advance, flowmap_error_grid
    from ivflow.adiabatic import InvariantSpec, invariant
    from ivflow.section import section_cloud
    from ivflow.runner import run
"""

from __future__ import annotations

__version__ = '0.1.0'
