import numpy as np

from sparsetab.data import Dataset
from sparsetab.numerics import make_rng


def make_survival(n, n_features, seed, censor_frac=0.2):
    """Proportional-hazards data with a known linear risk.

    Event times are exponential with rate exp(x @ beta); administrative
    censoring at the (1 - censor_frac) quantile of the event times gives the
    requested censoring fraction. Returns the dataset and the true risks.
    """
    rng = make_rng(seed)
    x = rng.standard_normal((n, n_features))
    beta = np.linspace(1.0, -1.0, n_features) * 0.8
    eta = x @ beta
    t_event = rng.exponential(1.0 / np.exp(eta))
    tau = np.quantile(t_event, 1.0 - censor_frac)
    time = np.maximum(np.minimum(t_event, tau), 1e-9)
    event = (t_event <= tau).astype(np.int64)
    ds = Dataset(
        x=x,
        feature_names=tuple(f"f{i}" for i in range(n_features)),
        time=time,
        event=event,
    )
    return ds, eta
