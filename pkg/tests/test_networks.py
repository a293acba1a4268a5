"""Network construction, shapes, and forward semantics."""

import numpy as np
import pytest

from igan import networks as N
from igan import tensor as T
from igan.errors import ConfigError, ShapeError
from igan.tensor import Tensor

from helpers import rng


def toy_arch(**kw):
    base = dict(data_shape=2, latent_dim=2, secondary_latent_dim=4,
                base_channels=8, omit_h=True, toy_mode=True)
    base.update(kw)
    return N.ArchConfig(**base)


def conv_arch(**kw):
    base = dict(data_shape=(1, 32, 32), latent_dim=16, secondary_latent_dim=32,
                base_channels=8, omit_h=True, toy_mode=False)
    base.update(kw)
    return N.ArchConfig(**base)


# ---------------------------------------------------------------------------
# configuration and construction
# ---------------------------------------------------------------------------


def test_non_power_of_two_extent_rejected():
    with pytest.raises(ConfigError):
        conv_arch(data_shape=(1, 24, 24))
    with pytest.raises(ConfigError):
        conv_arch(data_shape=(1, 32, 16))
    with pytest.raises(ConfigError):
        conv_arch(data_shape=(1, 4, 4))


def test_d_input_dim_toggles_with_omit_h():
    assert toy_arch(omit_h=True).d_input_dim == 4 + 2
    assert toy_arch(omit_h=False).d_input_dim == 2 * 4


def test_conv_block_count_32():
    # 32 -> 16 -> 8 -> 4: three stride-2 blocks
    arch = conv_arch()
    assert arch.conv_blocks == 3
    model = N.build_model(arch, seed=0)
    assert model.E.n_layers("conv") == 3
    assert N.ArchConfig(**{**arch.__dict__, "data_shape": (1, 8, 8)}).conv_blocks == 1


def test_toy_networks_have_expected_structure_and_param_count():
    arch = toy_arch(omit_h=False)
    model = N.build_model(arch, seed=1)
    d, l, s, b = 2, 2, 4, 8

    def mlp_count(*dims):
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))

    # E, G, F carry two hidden layers of base_channels units; the
    # latent-side networks D and H stay single-hidden at secondary width
    want = {
        "E": (3, mlp_count(d, b, b, l)),
        "G": (3, mlp_count(l, b, b, d)),
        "F": (3, mlp_count(d, b, b, s)),
        "H": (2, mlp_count(l, s, s)),
        "D": (2, mlp_count(2 * s, s, 1)),
    }
    for sym, net in model.nets():
        layers, count = want[sym]
        assert net.n_layers("fc") == layers, sym
        got = sum(t.data.size for _, t, tr in net.entries() if tr)
        assert got == count, sym


def test_same_seed_builds_are_bit_identical():
    arch = conv_arch(omit_h=False)
    m1 = N.build_model(arch, seed=7)
    m2 = N.build_model(arch, seed=7)
    names1 = [(n, t.data.tobytes()) for n, t, _ in m1.named_tensors()]
    names2 = [(n, t.data.tobytes()) for n, t, _ in m2.named_tensors()]
    assert names1 == names2
    m3 = N.build_model(arch, seed=8)
    assert any(t3.data.tobytes() != t1.data.tobytes()
               for (_, t1, _), (_, t3, _) in zip(m1.named_tensors(), m3.named_tensors()))


def test_biases_and_beta_zero_gamma_near_one_at_init():
    model = N.build_model(conv_arch(), seed=3)
    for name, t, _ in model.named_tensors():
        if name.endswith(".bias") or name.endswith(".beta"):
            np.testing.assert_array_equal(t.data, 0.0)
        if name.endswith(".gamma"):
            assert np.all(np.abs(t.data - 1.0) < 0.2)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def test_shape_round_trip_conv():
    arch = conv_arch()
    model = N.build_model(arch, seed=4)
    x = Tensor(rng(0).uniform(-1, 1, size=(3, 1, 32, 32)))
    z = Tensor(rng(1).normal(size=(3, 16)))
    assert N.forward_E(model, x).data.shape == (3, 16)
    assert N.forward_G(model, z).data.shape == (3, 1, 32, 32)
    assert N.forward_F(model, x).data.shape == (3, 32)
    assert N.forward_E(model, N.forward_G(model, z)).data.shape == z.data.shape
    assert N.forward_G(model, N.forward_E(model, x)).data.shape == x.data.shape


def test_shape_round_trip_toy():
    model = N.build_model(toy_arch(), seed=5)
    x = Tensor(rng(2).normal(size=(6, 2)))
    z = Tensor(rng(3).normal(size=(6, 2)))
    assert N.forward_G(model, N.forward_E(model, x)).data.shape == x.data.shape
    assert N.forward_E(model, N.forward_G(model, z)).data.shape == z.data.shape


def test_conv_generator_output_in_tanh_range():
    model = N.build_model(conv_arch(), seed=6)
    z = Tensor(rng(4).normal(size=(4, 16)))
    out = N.forward_G(model, z, mode="train").data
    assert np.all(out > -1.0) and np.all(out < 1.0)


def test_forward_e_on_zero_image_finite_and_deterministic():
    model = N.build_model(conv_arch(), seed=7)
    x = Tensor(np.zeros((2, 1, 32, 32)))
    a = N.forward_E(model, x).data
    b = N.forward_E(model, x).data
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


def test_forward_h_identity_when_omitted():
    model = N.build_model(toy_arch(omit_h=True), seed=8)
    z = Tensor(rng(5).normal(size=(4, 2)))
    assert N.forward_H(model, z) is z


def test_forward_h_maps_to_secondary_dim():
    model = N.build_model(toy_arch(omit_h=False), seed=9)
    z = Tensor(rng(6).normal(size=(4, 2)))
    assert N.forward_H(model, z).data.shape == (4, 4)


def test_input_shape_mismatch_raises():
    model = N.build_model(conv_arch(), seed=10)
    with pytest.raises(ShapeError):
        N.forward_E(model, Tensor(np.zeros((2, 1, 16, 16))))
    with pytest.raises(ShapeError):
        N.forward_G(model, Tensor(np.zeros((2, 3))))
    toy = N.build_model(toy_arch(), seed=11)
    with pytest.raises(ShapeError):
        N.forward_E(toy, Tensor(np.zeros((2, 5))))


def test_discriminate_in_open_unit_interval():
    for arch in (toy_arch(), toy_arch(omit_h=False), conv_arch()):
        model = N.build_model(arch, seed=12)
        if arch.toy_mode:
            x = Tensor(rng(7).normal(size=(5, 2)) * 3.0)
        else:
            x = Tensor(rng(7).uniform(-1, 1, size=(5, 1, 32, 32)))
        z = Tensor(rng(8).normal(size=(5, arch.latent_dim)))
        score = N.discriminate(model, x, z).data
        assert score.shape == (5,)
        assert np.all(score > 0.0) and np.all(score < 1.0)


def test_discriminate_zero_head_gives_half():
    model = N.build_model(toy_arch(), seed=13)
    model.D["fc1.weight"].data[:] = 0.0
    model.D["fc1.bias"].data[:] = 0.0
    x = Tensor(rng(9).normal(size=(4, 2)))
    z = Tensor(rng(10).normal(size=(4, 2)))
    np.testing.assert_array_equal(N.discriminate(model, x, z).data, 0.5)


def test_discriminate_identical_couples_identical_scores():
    model = N.build_model(toy_arch(), seed=14)
    x = Tensor(np.tile(rng(11).normal(size=(1, 2)), (6, 1)))
    z = Tensor(np.tile(rng(12).normal(size=(1, 2)), (6, 1)))
    score = N.discriminate(model, x, z).data
    assert np.all(score == score[0])


def test_group_params_split():
    model = N.build_model(toy_arch(omit_h=False), seed=15)
    eg = {n for n, _ in model.group_params("eg")}
    dfh = {n for n, _ in model.group_params("dfh")}
    assert all(n.startswith(("E/", "G/")) for n in eg)
    assert all(n.startswith(("D/", "F/", "H/")) for n in dfh)
    assert not (eg & dfh)
    every = {n for n, _, tr in model.named_tensors() if tr}
    assert eg | dfh == every


def test_running_stats_are_non_trainable_entries():
    model = N.build_model(conv_arch(), seed=16)
    stats = [n for n, _, tr in model.named_tensors() if not tr]
    assert stats and all("running_" in n for n in stats)
