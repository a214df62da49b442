"""Shared fixtures: small grids and hand-built flow models"""

import numpy as np
import pytest

import tensor_autodiff as ad
from gflownet_core import FlowModel, make_flow_model
from hypergrid_env import HyperGrid, RewardParams


def zero_flow_model(env, objective="fm", hidden=(8, 8)):
    """Every weight and bias zero: uniform policy, unit edge flows"""
    model = make_flow_model(env, objective, seed=0, hidden=hidden)
    for value in model.mlp.arrays.values():
        value[...] = 0.0
    return model


def two_state_model(out_rows, objective="fm"):
    """n=1, H=2 network whose outputs are exactly out_rows[state] (identity hidden layers)"""
    out_rows = np.asarray(out_rows, dtype=np.float64)
    arrays = {
        "W1": np.eye(2), "b1": np.zeros(2),
        "W2": np.eye(2), "b2": np.zeros(2),
        "W3": out_rows, "b3": np.zeros(2),
    }
    return FlowModel(ad.MLPParams((2, 2, 2, 2), arrays), objective)


@pytest.fixture
def line_env():
    """n=1, H=2 with R0=1e-3: rewards (0.501, 0.001)"""
    return HyperGrid(RewardParams(R0=1e-3, height=2, ndim=1))


@pytest.fixture
def grid2d():
    return HyperGrid(RewardParams(R0=1e-3, height=8, ndim=2))


@pytest.fixture
def small_grid():
    return HyperGrid(RewardParams(R0=1e-3, height=4, ndim=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def exact_flow_model(objective="fm"):
    """n=1, H=2, R=(0.501, 0.001): F(0->stop)=R(0), F(0->1)=F(1->stop)=R(1)"""
    r0, r1 = 0.501, 0.001
    return two_state_model([[np.log(r1), np.log(r0)], [0.0, np.log(r1)]], objective)
