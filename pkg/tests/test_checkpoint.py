import numpy as np
import pytest
from hypothesis import given, strategies as st

import deltapack as dp
from deltapack.errors import NumericError, ShapeError, StructuralError


def ckpt(name, **tensors):
    return dp.ModelCheckpoint(name=name, tensors={k: np.asarray(v, np.float32)
                                                  for k, v in tensors.items()})


class TestSplit:
    def test_identical_inputs_give_zero_delta(self):
        base = ckpt("b", a=[[1.0, 2.0]], b=[[3.0]])
        delta = dp.split(base, ckpt("f", a=[[1.0, 2.0]], b=[[3.0]]))
        assert all(np.all(t == 0) for t in delta.tensors.values())

    def test_elementwise_subtraction(self):
        delta = dp.split(ckpt("b", w=[[1.0, 2.0]]), ckpt("f", w=[[1.5, 1.0]]))
        assert np.array_equal(delta.tensors["w"], np.array([[0.5, -1.0]], np.float32))

    def test_round_trip(self, toy_model):
        base, finetuned, delta, _ = toy_model
        merged = dp.merge(base, delta)
        for name in finetuned.tensors:
            assert np.array_equal(merged.tensors[name], finetuned.tensors[name])
        assert merged.name == finetuned.name

    def test_name_set_mismatch_names_layer(self):
        with pytest.raises(StructuralError, match="extra"):
            dp.split(ckpt("b", a=[[1.0]]), ckpt("f", a=[[1.0]], extra=[[2.0]]))

    def test_shape_mismatch_names_layer(self):
        with pytest.raises(ShapeError, match="'a'"):
            dp.split(ckpt("b", a=[[1.0]]), ckpt("f", a=[[1.0, 2.0]]))

    def test_nan_rejected(self):
        with pytest.raises(NumericError, match="'a'"):
            ckpt("b", a=[[np.nan]])

    def test_inf_rejected(self):
        with pytest.raises(NumericError):
            ckpt("b", a=[[np.inf]])


class TestMerge:
    def test_zero_delta_returns_base(self):
        base = ckpt("b", w=[[1.0, -2.5]])
        delta = dp.DeltaCheckpoint(base_name="b", tensors={"w": np.zeros((1, 2), np.float32)})
        assert np.array_equal(dp.merge(base, delta).tensors["w"], base.tensors["w"])

    def test_elementwise_addition(self):
        base = ckpt("b", w=[[0.0]])
        delta = dp.DeltaCheckpoint(base_name="b", tensors={"w": np.array([[-3.25]], np.float32)})
        assert dp.merge(base, delta).tensors["w"][0, 0] == np.float32(-3.25)

    @given(st.integers(0, 500))
    def test_round_trip_at_realistic_scales(self, seed):
        gen = np.random.default_rng(seed)
        shape = tuple(gen.integers(1, 6, 2))
        base_w = gen.normal(0, 1, shape).astype(np.float32)
        ft_w = (base_w + gen.normal(0, 0.02, shape).astype(np.float32)).astype(np.float32)
        base = ckpt("b", w=base_w)
        finetuned = ckpt("f", w=ft_w)
        merged = dp.merge(base, dp.split(base, finetuned))
        assert np.array_equal(merged.tensors["w"], ft_w)


def test_layer_order_is_lexicographic():
    c = ckpt("b", zz=[[1.0]], aa=[[2.0]], mm=[[3.0]])
    assert c.layer_names() == ["aa", "mm", "zz"]
    assert list(c.tensors) == ["aa", "mm", "zz"]


def test_dtc_save_load_round_trip(tmp_path, toy_model):
    base, _, delta, _ = toy_model
    path = str(tmp_path / "base.dtc")
    dp.save_checkpoint(path, base)
    loaded = dp.load_checkpoint(path)
    assert loaded.name == base.name
    for name in base.tensors:
        assert np.array_equal(loaded.tensors[name], base.tensors[name])
    dpath = str(tmp_path / "delta.dtc")
    dp.save_delta(dpath, delta)
    loaded_delta = dp.load_delta(dpath)
    assert loaded_delta.base_name == delta.base_name
    for name in delta.tensors:
        assert np.array_equal(loaded_delta.tensors[name], delta.tensors[name])
