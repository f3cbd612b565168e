import numpy as np
import pytest

from vusni import Dataset, generate, scenario
from vusni.errors import AllCovariatesDropped
from vusni.ivselect import backward_disease, select_iv


def _noise_study(seed):
    # disease unrelated to both covariates, so backward elimination drops them
    rng = np.random.default_rng(seed)
    n = 400
    d = rng.integers(1, 4, n)
    t = rng.normal(d, 1.0)
    a = rng.normal(size=(n, 2))
    v = (rng.random(n) < 0.7).astype(int)
    v[:3] = 1
    d[:3] = [1, 2, 3]
    return Dataset(t=t, a=a, v=v, d=np.ma.masked_array(d, mask=v == 0), covariate_names=("X", "Y"))


def test_needs_two_covariates():
    data = generate(scenario("II", n=100), seed=0)  # a single covariate
    with pytest.raises(ValueError):
        select_iv(data)


def test_all_dropped_warns_and_continues():
    data = _noise_study(3)
    retained, dropped = backward_disease(data)
    assert retained == [] and {nm for nm, _ in dropped} == {"X", "Y"}
    with pytest.warns(AllCovariatesDropped):
        rep = select_iv(data)
    assert rep.a1 == () and rep.a2 == ()
    assert rep.final_fit is not None


def test_partition_covers_retained():
    data = generate(scenario("III", n=300), seed=[2, 0])
    rep = select_iv(data, "probit")
    retained = {nm for nm, _ in rep.step1_retained}
    assert set(rep.a1) | set(rep.a2) == retained
    assert not set(rep.a1) & set(rep.a2)
    assert "A2" in rep.a2
