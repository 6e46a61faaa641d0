import math

import numpy as np
import pytest

from fgawave.scene import WaveProblem

EX1_A0 = "exp(-100*(x1-0.5)^2)"


def example1(eps=1 / 64):
    return WaveProblem.from_strings(
        d=1, epsilon=eps, lo=[0], hi=[2], speed="x1^2", S0="x1",
        A0=(EX1_A0, "0"), B0=("0", f"-x1^2*{EX1_A0}"),
    )


def example3(eps=1 / 128):
    A0 = "exp(-100*(x1^2 + x2^2))"
    return WaveProblem.from_strings(
        d=2, epsilon=eps, lo=[-1.5, -1], hi=[0.5, 1], speed="1", S0="-x1 + cos(2*x2)",
        A0=(A0, "0"), B0=("0", f"-sqrt(1 + 4*sin(2*x2)^2)*{A0}"),
    )


@pytest.fixture
def ex1():
    return example1()


@pytest.fixture
def ex3():
    return example3()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def measured_order(err_h, err_h2):
    return math.log2(err_h / err_h2)
