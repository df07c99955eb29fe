import pytest

from privgrid.matpower import bundled_case_path, read_case

SMALL_CASES = ("pglib_opf_case3_lmbd", "pglib_opf_case5_pjm", "pglib_opf_case14_ieee")


@pytest.fixture(scope="session")
def load():
    cache = {}

    def _load(name):
        if name not in cache:
            cache[name] = read_case(bundled_case_path(name))
        return cache[name]

    return _load


@pytest.fixture(scope="session")
def case5(load):
    return load("pglib_opf_case5_pjm")[0]


@pytest.fixture(scope="session")
def case24(load):
    return load("case24_ieee_rts")[0]
