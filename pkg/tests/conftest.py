import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "deltapack",
    max_examples=50,
    deadline=None,
    derandomize=True,
)
hypothesis.settings.load_profile("deltapack")


@pytest.fixture(scope="session")
def toy_model():
    """(base, finetuned, delta, calib) built once from the bundled generator."""
    import deltapack as dp

    base = dp.toy_base(0)
    finetuned = dp.toy_finetuned(base, 0)
    delta = dp.split(base, finetuned)
    calib = dp.toy_calib(0)
    return base, finetuned, delta, calib


def random_f32(shape, seed, low=-1.0, high=1.0):
    gen = np.random.default_rng(seed)
    return gen.uniform(low, high, shape).astype(np.float32)
