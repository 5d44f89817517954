"""Distribution kernels: Student t, F and studentized range."""
import math
from functools import lru_cache

import numpy as np
from scipy import special, stats

from ..utils.errors import InvalidArgumentError

# Degrees of freedom above which the studentized range uses its df -> inf limit
LARGE_DF = 1e5

# Gauss-Legendre layout of the studentized range double integral
INNER_SPAN = 8.0
INNER_PANELS = 16
OUTER_PANELS = 32
NODES_PER_PANEL = 16
OUTER_TAIL = 1e-12


def _check_df(df, name="df"):
    if not (isinstance(df, (int, float, np.integer, np.floating)) and df > 0):
        raise InvalidArgumentError(f"{name} must be > 0, got {df!r}")
    if math.isnan(df):
        raise InvalidArgumentError(f"{name} must be > 0, got nan")


def t_cdf(x, df):
    """Student-t CDF through the regularized incomplete beta function.

    Args:
        x: Quantile
        df: Degrees of freedom (> 0, ``inf`` gives the normal CDF)

    Returns:
        float: P(T <= x)
    """
    _check_df(df)
    x = float(x)
    if math.isinf(df):
        return float(special.ndtr(x))
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + x * x)))
    return 1.0 - tail if x > 0 else tail


def t_sf(x, df):
    """Upper tail P(T > x), accurate far into the tail."""
    return t_cdf(-float(x), df)


def f_cdf(x, df1, df2):
    """F-distribution CDF through the regularized incomplete beta function.

    Args:
        x: Quantile (>= 0)
        df1, df2: Numerator and denominator degrees of freedom (> 0)

    Returns:
        float: P(F <= x)
    """
    _check_df(df1, "df1")
    _check_df(df2, "df2")
    x = float(x)
    if x < 0 or math.isnan(x):
        raise InvalidArgumentError(f"F quantile must be >= 0, got {x}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return float(special.betainc(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2)))


def f_sf(x, df1, df2):
    """Upper tail P(F > x), evaluated directly for small p-values."""
    _check_df(df1, "df1")
    _check_df(df2, "df2")
    x = float(x)
    if x < 0 or math.isnan(x):
        raise InvalidArgumentError(f"F quantile must be >= 0, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x)))


@lru_cache(maxsize=256)
def _composite_nodes(low, high, panels, per_panel):
    """Composite Gauss-Legendre nodes and weights on [low, high]."""
    base_x, base_w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(low, high, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    weights = (half[:, None] * base_w[None, :]).ravel()
    return nodes, weights


def _range_cdf_known_sigma(w, k):
    """P(range of k standard normals <= w) for an array of ``w``.

    Evaluates k * integral phi(z) [Phi(z) - Phi(z - w)]^(k-1) dz.
    """
    z, weight = _composite_nodes(-INNER_SPAN, INNER_SPAN, INNER_PANELS, NODES_PER_PANEL)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    density = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    mass = special.ndtr(z)[None, :] - special.ndtr(z[None, :] - w[:, None])
    np.clip(mass, 0.0, 1.0, out=mass)
    values = k * (mass ** (k - 1)) @ (density * weight)
    return np.clip(values, 0.0, 1.0)


def studentized_range_cdf(q, k, df):
    """CDF of the studentized range Q for ``k`` groups and ``df`` error degrees.

    The range CDF with known sigma is integrated against the density of
    s = sqrt(chi2_df / df), both by composite Gauss-Legendre quadrature.

    Args:
        q: Quantile (>= 0)
        k: Number of groups (>= 2)
        df: Error degrees of freedom (> 0)

    Returns:
        float: P(Q <= q)
    """
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise InvalidArgumentError(f"k must be an integer >= 2, got {k!r}")
    _check_df(df)
    q = float(q)
    if q < 0 or math.isnan(q):
        raise InvalidArgumentError(f"q must be >= 0, got {q}")
    k = int(k)
    if q == 0:
        return 0.0
    if math.isinf(q):
        return 1.0
    if df > LARGE_DF:
        return float(_range_cdf_known_sigma(q, k)[0])

    root = math.sqrt(df)
    low = float(stats.chi.ppf(OUTER_TAIL, df)) / root
    high = float(stats.chi.isf(OUTER_TAIL, df)) / root
    s, weight = _composite_nodes(low, high, OUTER_PANELS, NODES_PER_PANEL)
    log_density = (0.5 * df * math.log(df) - special.gammaln(0.5 * df) - (0.5 * df - 1.0) * math.log(2.0)
                   + (df - 1.0) * np.log(s) - 0.5 * df * s * s)
    inner = _range_cdf_known_sigma(q * s, k)
    value = float(np.sum(weight * np.exp(log_density) * inner))
    return min(1.0, max(0.0, value))


def studentized_range_sf(q, k, df):
    """P(Q > q), the Games-Howell p-value."""
    return min(1.0, max(0.0, 1.0 - studentized_range_cdf(q, k, df)))
