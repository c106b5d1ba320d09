from pilotwave.ensembles import sample_density
from pilotwave.quantum_state import SlitGeometry

ARRIVAL_TIME = SlitGeometry().arrival_time

# fixture pair with Q away from the mirror image of P
ASYMMETRIC = ((4.0, 4.5), (-3.0, -2.5))
# its unordered joint probability at the arrival time, checked against a dense-grid oracle
ASYMMETRIC_SQT = 0.003765536284550985
SYMMETRIC = ((4.0, 4.5), (-4.5, -4.0))


def density_samples(w, t, n, seed):
    """Points drawn from ``|Psi(t)|^2``, so none sit near a node."""
    return sample_density(w, t, n, seed)[0]
