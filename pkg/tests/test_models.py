import numpy as np
import pytest

from sftgan import autodiff as ad
from sftgan.autodiff import ShapeError, Tensor
from sftgan.models import ConditioningMode, Discriminator, FeatureNet, ModelConfig, build_generator, film_modulation

SMALL = ModelConfig(num_classes=2, width=8, blocks=2, cond_channels=8)


def two_region_probs(h, w, k1=3, left=0, right=1):
    p = np.zeros((1, k1, h, w), np.float32)
    p[0, left, :, : w // 2] = 1
    p[0, right, :, w // 2 :] = 1
    return p


def randomize_heads(G, rng):
    for m in G.modulators():
        for head in (m.gamma_head, m.beta_head):
            head.out.weight.data = rng.uniform(-0.3, 0.3, head.out.weight.shape).astype(np.float32)


@pytest.mark.parametrize("mode", [m.value for m in ConditioningMode])
def test_generator_shape_contract(mode):
    G = build_generator(SMALL, mode)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 9, 13)))
    probs = Tensor(two_region_probs(9, 13))
    assert G(x, probs).shape == (1, 3, 36, 52)


def test_generator_desk_patch_shape_and_determinism():
    G = build_generator(ModelConfig(), "sft")
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 24, 24)))
    probs = Tensor(two_region_probs(24, 24))
    a, b = G(x, probs), G(x, probs)
    assert a.shape == (1, 3, 96, 96)
    assert a.data.tobytes() == b.data.tobytes()


def test_all_background_probs_are_accepted():
    G = build_generator(SMALL, "sft")
    p = np.zeros((1, 3, 8, 8), np.float32)
    p[:, 2] = 1
    out = G(Tensor(np.full((1, 3, 8, 8), 0.5)), Tensor(p))
    assert np.all(np.isfinite(out.data))


def test_generator_input_validation():
    G = build_generator(SMALL, "sft")
    x = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ShapeError):
        G(x, Tensor(two_region_probs(8, 10)))
    with pytest.raises(ShapeError):
        G(x, Tensor(np.full((1, 4, 8, 8), 0.25)))
    with pytest.raises(ValueError):
        G(x, Tensor(np.full((1, 3, 8, 8), 0.5)))
    with pytest.raises(ValueError):
        G(x, None)
    with pytest.raises(ValueError):
        build_generator(SMALL, "attention")


def test_parameter_count_ordering():
    counts = {m: build_generator(ModelConfig(), m).num_parameters()
              for m in ("compositional", "sft", "input_concat")}
    assert counts["compositional"] > counts["sft"] > counts["input_concat"]


def test_film_gamma_has_zero_spatial_variance():
    rng = np.random.default_rng(2)
    G = build_generator(SMALL, "film")
    randomize_heads(G, rng)
    for gamma, beta in G.modulation_maps(Tensor(two_region_probs(8, 8))):
        assert gamma.shape[2:] == (1, 1) and beta.shape[2:] == (1, 1)


def test_film_and_sft_agree_on_constant_condition():
    rng = np.random.default_rng(3)
    G = build_generator(SMALL, "sft")
    randomize_heads(G, rng)
    probs = np.zeros((1, 3, 6, 6), np.float32)
    probs[:, 1] = 1
    shared = G.shared_condition(Tensor(probs))
    for m in G.modulators():
        g_sft, _ = m.modulation(shared)
        g_film, _ = film_modulation(shared, m)
        np.testing.assert_allclose(g_sft.data, np.broadcast_to(g_film.data, g_sft.shape), rtol=1e-6, atol=1e-6)  # float32 averaging rounds


def test_film_modulation_matches_hand_computed_average():
    rng = np.random.default_rng(4)
    G = build_generator(SMALL, "film")
    randomize_heads(G, rng)
    shared = Tensor(rng.normal(size=(1, 8, 5, 5)))
    layer = G.modulators()[0]
    gamma, _ = film_modulation(shared, layer)
    avg = shared.data.mean(axis=(2, 3))[0]
    hw, hb = layer.gamma_head.hidden.weight.data[:, :, 0, 0], layer.gamma_head.hidden.bias.data
    ow, ob = layer.gamma_head.out.weight.data[:, :, 0, 0], layer.gamma_head.out.bias.data
    h = hw @ avg + hb
    h = np.where(h >= 0, h, 0.2 * h)
    np.testing.assert_allclose(gamma.data[0, :, 0, 0], ow @ h + ob, rtol=1e-5, atol=1e-6)


def test_sft_gamma_is_region_distinct():
    rng = np.random.default_rng(5)
    G = build_generator(SMALL, "sft")
    randomize_heads(G, rng)
    for gamma, _ in G.modulation_maps(Tensor(two_region_probs(8, 8))):
        g = gamma.data[0]
        assert np.any(g[:, :, 0] != g[:, :, -1])


@pytest.mark.parametrize("k", [0, 1, 2])
def test_compositional_one_hot_equals_branch(k):
    rng = np.random.default_rng(6)
    G = build_generator(SMALL, "compositional")
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    probs = np.zeros((1, 3, 8, 8), np.float32)
    probs[:, k] = 1
    np.testing.assert_array_equal(G(x, Tensor(probs)).data, G.branch_forward(x, k).data)


def test_single_forward_pass_op_count_is_category_independent():
    G = build_generator(SMALL, "sft")
    x = Tensor(np.full((1, 3, 8, 8), 0.5))
    one = np.zeros((1, 3, 8, 8), np.float32)
    one[:, 0] = 1
    counts = [len(ad.backward_order(ad.sum_all(G(x, Tensor(p))))) for p in (one, two_region_probs(8, 8))]
    assert counts[0] == counts[1]


def test_discriminator_outputs():
    D = Discriminator(2, 32, seed=0)
    x = Tensor(np.random.default_rng(7).normal(0, 3, (4, 3, 32, 32)))
    prob, cls = D(x)
    assert prob.shape == (4, 1, 1, 1) and cls.shape == (4, 3, 1, 1)
    assert np.all((prob.data > 0) & (prob.data < 1))
    np.testing.assert_allclose(np.exp(cls.data).sum(axis=1), 1.0, atol=1e-5)
    with pytest.raises(ShapeError):
        D(Tensor(np.zeros((1, 3, 16, 16))))


def test_discriminator_golden_values():
    # Recorded from the first verified build; guards against silent architecture drift.
    D = Discriminator(2, 32, seed=0)
    x = np.random.default_rng(42).uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    prob, cls = D(Tensor(x))
    np.testing.assert_allclose(prob.data.reshape(-1), [0.43942118, 0.43212214], atol=1e-6)
    np.testing.assert_allclose(cls.data.reshape(2, -1), [[-1.1176927, -1.5585215, -0.77106667],
                                                         [-0.8781196, -1.5641633, -0.98036724]], atol=1e-5)


def test_feature_net_contract():
    phi = FeatureNet(seed=9)
    assert phi.parameters() == []
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, (1, 3, 16, 24)).astype(np.float32)
    f1 = phi(Tensor(img))
    assert f1.shape == (1, 64, 2, 3)
    assert f1.data.tobytes() == phi(Tensor(img)).data.tobytes()
    img2 = img.copy()
    img2[0, 1, 7, 7] += 0.2
    assert np.any(phi(Tensor(img2)).data != f1.data)
    with pytest.raises(ShapeError):
        phi(Tensor(np.zeros((1, 3, 12, 16))))


def test_feature_net_gradient_to_image():
    phi = FeatureNet(seed=9)
    rng = np.random.default_rng(10)
    img = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 64, 1, 1)))
    rep = ad.finite_diff_check(lambda: ad.sum_all(phi(img) * w), [img], max_coords=12)
    assert rep.passed, rep.errors
