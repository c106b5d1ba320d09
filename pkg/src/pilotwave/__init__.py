"""De Broglie-Bohm simulation of two identical particles behind a double slit."""

from pilotwave.detection import (
    CoincidenceResult,
    DetectorPair,
    DetectorWindow,
    PairMode,
    dbb_coincidences,
    discrepancy_scan,
    single_particle_anticoincidence,
    sqt_joint_probability,
)
from pilotwave.dynamics import (
    IntegratorConfig,
    Trajectory,
    integrate_batch,
    integrate_trajectory,
    velocity_field,
)
from pilotwave.ensembles import (
    Ensemble,
    EnsembleKind,
    EnsembleSpec,
    build_ensemble,
    sample_antisymmetric_slice,
    sample_density,
)
from pilotwave.estimators import BohmianFlow, BornSampler, CoincidenceCounter
from pilotwave.quantum_state import (
    ConfigurationPoint,
    NodeProximity,
    PacketParams,
    PhysicalConstants,
    SlitGeometry,
    StatisticsMode,
    TwoParticleWaveFunction,
    density,
    quantum_force,
    quantum_potential,
    wavefunction_gradient,
    wavefunction_value,
)

__version__ = "0.1.0"

__all__ = [
    "BohmianFlow",
    "BornSampler",
    "CoincidenceCounter",
    "CoincidenceResult",
    "ConfigurationPoint",
    "DetectorPair",
    "DetectorWindow",
    "Ensemble",
    "EnsembleKind",
    "EnsembleSpec",
    "IntegratorConfig",
    "NodeProximity",
    "PacketParams",
    "PairMode",
    "PhysicalConstants",
    "SlitGeometry",
    "StatisticsMode",
    "Trajectory",
    "TwoParticleWaveFunction",
    "build_ensemble",
    "dbb_coincidences",
    "density",
    "discrepancy_scan",
    "integrate_batch",
    "integrate_trajectory",
    "quantum_force",
    "quantum_potential",
    "sample_antisymmetric_slice",
    "sample_density",
    "single_particle_anticoincidence",
    "sqt_joint_probability",
    "velocity_field",
    "wavefunction_gradient",
    "wavefunction_value",
]
