import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mixture(rng, n, d):
    """Random diagonal-Gaussian mixture parameters (means, variances)."""
    means = rng.normal(0.0, 2.0, size=(n, d))
    variances = rng.uniform(0.3, 2.5, size=(n, d))
    return means, variances


def longdouble_log_density(means, variances, g):
    """Brute-force mixture log-density in 80-bit extended precision.

    Independent of the library path: direct summation of exponentials with an
    overflow shift, all in np.longdouble.
    """
    means = np.asarray(means, dtype=np.longdouble)
    variances = np.asarray(variances, dtype=np.longdouble)
    g = np.asarray(g, dtype=np.longdouble)
    d = means.shape[1]
    logp = (
        -0.5 * np.sum((g - means) ** 2 / variances, axis=1)
        - 0.5 * d * np.log(np.longdouble(2) * np.pi)
        - 0.5 * np.sum(np.log(variances), axis=1)
    )
    shift = logp.max()
    total = np.sum(np.exp(logp - shift))
    return float(shift + np.log(total) - np.log(np.longdouble(means.shape[0])))
