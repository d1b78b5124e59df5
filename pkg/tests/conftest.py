import numpy as np
import pytest

from rmsplit.kernels import active, get


def available_backends():
    names = ["numpy"]
    try:
        get("numba")
        names.append("numba")
    except ImportError:
        pass
    return names


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the hot kernels once so timed tests measure compute only."""
    K = active()
    keys = K.derive_env_keys(0, 0, 2)
    cks = np.array([2], dtype=np.int64)
    K.mass_sweep_stream(int(keys[0]), 2, True, cks)
    env = K.build_env(int(keys[0]), 4, True, -8, 8)
    K.mass_sweep(*env, 4, cks)
    K.mass_ensemble_stream(keys, 2, True, cks)
    K.coupled_ensemble_stream(keys, 4, True, cks)
    K.single_walk_tau(keys, 4, True)
    K.walk_terminal_hist(*env, int(keys[0]), 4, 2, 0, cks)
    K.lazy_ensemble(1, 2, 4, cks)
    K.lazy_hitting_times(1, 2, 2, 8)
