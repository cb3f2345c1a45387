import pytest

from nuhcode.alphabet import sample_orbits
from nuhcode.surface_model import cat_map, make_map

CHI, EPS = 0.5, 0.01


@pytest.fixture(scope="session")
def cat_sample():
    return sample_orbits(cat_map(), CHI, EPS, n_orbits=3, orbit_len=120, seed=11)


@pytest.fixture(scope="session")
def perturbed_sample():
    return sample_orbits(make_map("perturbed", delta=0.05), CHI, EPS, n_orbits=3,
                         orbit_len=120, seed=12)


@pytest.fixture(scope="session")
def cat_alphabet(cat_sample):
    from nuhcode.alphabet import coarse_grain
    return coarse_grain(cat_sample)


@pytest.fixture(scope="session")
def cat_graph(cat_alphabet):
    from nuhcode.alphabet import build_graph
    return build_graph(cat_alphabet)


@pytest.fixture(scope="session")
def perturbed_alphabet(perturbed_sample):
    from nuhcode.alphabet import coarse_grain
    return coarse_grain(perturbed_sample)


def _coded_sites(sample, n, count):
    sites = list(sample.sites(margin=n + 2))
    origin = [s for s in sites if s[0] == 0][:1] if len(sample.orbits) and sample.orbits[0].period else []
    rest = [s for s in sites if s[0] != 0 or not origin]
    # consecutive runs give points whose images are coded too
    picked = [s for s in rest if s[1] % 40 < 10][:count]
    return origin + picked


@pytest.fixture(scope="session")
def cat_coded(cat_alphabet):
    from nuhcode.markov import code_sample
    s = cat_alphabet.sample
    return code_sample(cat_alphabet, s.fmap, _coded_sites(s, 11, 40), 10, EPS, CHI)


@pytest.fixture(scope="session")
def perturbed_coded(perturbed_alphabet):
    from nuhcode.markov import code_sample
    s = perturbed_alphabet.sample
    return code_sample(perturbed_alphabet, s.fmap, _coded_sites(s, 11, 40), 10, EPS, CHI)
