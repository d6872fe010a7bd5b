"""Lagrange periodic orbits, elliptic-hyperbolic normal forms and transit orbits
in periodically perturbed planar restricted three-body models."""
from .integrate import (
    IntegrationError,
    IntegratorSettings,
    StmResult,
    Trajectory,
    flow,
    flow_with_stm,
    monodromy,
    stroboscopic_map,
    symplectic_defect,
)
from .lagrange import (
    collinear_points,
    energy_thresholds,
    hill_region_case,
    lagrange_points,
    linearize_collinear,
)
from .models import (
    EARTH_MOON_MU,
    Bcp,
    Cr3bp,
    Er3bp,
    PhaseState,
    SingularityError,
    hamiltonian,
    jacobian,
    model_from_config,
    true_anomaly,
    vector_field,
)
from .porbit import ConvergenceError, PeriodicOrbit, continue_family, orbit_path, refine_fixed_point
from .symmap import (
    EffectiveHamiltonian,
    MapEigenbasis,
    NormalForm,
    SpectrumError,
    effective_hamiltonian,
    normal_form,
    symplectic_eigenbasis,
    verify_proposition_1,
)
from .transit import (
    LocalState,
    RealmWindow,
    boundary_set,
    classify_local,
    iterate_region,
    to_local,
    to_physical,
    transit_cap,
    verify_transit,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
