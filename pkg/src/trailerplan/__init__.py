"""Lattice-and-refine trajectory planning for multi-steered N-trailer vehicles.

The package is organised around one offline and two online stages:

* offline: motion-primitive compilation and a free-space cost-to-go table
  (:mod:`trailerplan.primitives`, :mod:`trailerplan.lattice`),
* online step 1: lattice A* search over the primitive graph,
* online step 2: homotopy-relaxed optimal-control refinement
  (:mod:`trailerplan.ocp`, :mod:`trailerplan.nlp`).

:mod:`trailerplan.pipeline` wires the stages together and backs the CLI.
"""

from trailerplan.vehicle import (
    VehicleParameters,
    StateLayout,
    ms3t_parameters,
    state_derivative,
    ms3t_closed_form_derivative,
    segment_jacobian,
    trailer_n_rates,
    integrate_rk4,
)

__all__ = [
    "VehicleParameters",
    "StateLayout",
    "ms3t_parameters",
    "state_derivative",
    "ms3t_closed_form_derivative",
    "segment_jacobian",
    "trailer_n_rates",
    "integrate_rk4",
]

__version__ = "0.1.0"
