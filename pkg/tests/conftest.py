import pytest
from hypothesis import HealthCheck, settings

from crwrap.crashstop import cs_fair_scheduler
from crwrap.crsim import Constant, ProbModel, run_cr
from crwrap.ct import ChandraToueg
from crwrap.rng import CounterRng
from crwrap.toys import NullAlgorithm
from crwrap.wrapper import WrappedAlgorithm

settings.register_profile("default", max_examples=150, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def benign(n, net=0.9, fp=0.9, **kw):
    return ProbModel(n, Constant(net), Constant(fp), 0.5, 0.05, **kw)


def ct_cr_run(seed, n=3, horizon=50, stop=False, net=0.9, fp=0.9):
    walg = WrappedAlgorithm(ChandraToueg(n))
    return walg, run_cr(walg, benign(n, net, fp), CounterRng(seed), horizon, stop)


@pytest.fixture
def ct3():
    return ChandraToueg(3)


@pytest.fixture
def seed0_cs_run(ct3):
    return cs_fair_scheduler(ct3, seed=0, horizon=3)


@pytest.fixture
def null2():
    return WrappedAlgorithm(NullAlgorithm(2))
