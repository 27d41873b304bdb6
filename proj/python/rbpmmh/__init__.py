"""Particle marginal Metropolis-Hastings with Rao-Blackwellised SMC.

Thin Python layer over the compiled ``_core`` module: dictionaries are
serialized to JSON on the way in, results come back as dicts of numpy arrays.
"""

import json as _json

from . import _core
from ._core import ConfigError, DimensionError, NumericalError, debye_eval, lorentz_eval

__all__ = [
    "ConfigError",
    "DimensionError",
    "NumericalError",
    "Model",
    "cli",
    "debye_eval",
    "generate",
    "lorentz_eval",
    "material_eval",
]


def _dump(obj):
    return obj if isinstance(obj, str) else _json.dumps(obj)


def material_eval(params, f, n_zones):
    """Zone-uniform state mean [eps', eps'', mu', mu''] (length 4 * n_zones)."""
    return _core.material_eval(_dump(params), f, n_zones)


def generate(spec, out_dir):
    """Simulate a synthetic dataset from a scenario spec dict into out_dir."""
    _core.generate(_dump(spec), str(out_dir))


def cli(*args):
    """Run the command-line tool in-process; returns its exit code."""
    return _core.cli_main([str(a) for a in args])


class Model:
    """A dataset plus its deviation prior, ready for likelihood evaluation."""

    def __init__(self, dataset_dir, deviation=None):
        self._m = _core.Model(str(dataset_dir), "" if deviation is None else _dump(deviation))

    n_freqs = property(lambda self: self._m.n_freqs)
    state_dim = property(lambda self: self._m.state_dim)
    obs_dim = property(lambda self: self._m.obs_dim)
    frequencies = property(lambda self: self._m.frequencies)

    def kf_loglik(self, psi, rho):
        """Exact log p(y | psi, rho path)."""
        return self._m.kf_loglik(_dump(psi), list(rho))

    def smc(self, psi, n_particles=100, seed=1, backend="kf", ensemble_size=100, ess_threshold=0.5, threads=1):
        """One SMC run: log-likelihood estimate, ESS trace and a sampled path."""
        return self._m.smc(_dump(psi), n_particles, seed, backend, ensemble_size, ess_threshold, threads)

    def pmmh(self, config):
        """Run the sampler; returns the chain as arrays plus counters."""
        return self._m.pmmh(_dump(config))
