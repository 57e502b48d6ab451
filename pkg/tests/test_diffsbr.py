import numpy as np
import pytest

from model.diffsbr import DiffSBR, ablate, fuse, score_items
from model.experiment import build_model
from model.trainer import Trainer
from shared.config import rng_for
from shared.errors import CheckpointError
from shared.gradcheck import check_gradients
from shared.schemas import VARIANTS
from shared.tensor import Tensor


def model_for(dataset, config, **changes) -> DiffSBR:
    return build_model(dataset, config.model_copy(update=changes))


def first_batch(dataset, size=8):
    pairs = dataset.train_pairs()[:size]
    return [p.prefix for p in pairs], np.array([p.target for p in pairs]), np.array([p.source for p in pairs])


# ------------------------
# Variants
# ------------------------


def test_unknown_variant_is_rejected():
    with pytest.raises(ValueError, match="Allowed values"):
        ablate("no-XYZ")


@pytest.mark.parametrize(
    "variant, retrieval, feedback, modality, diffusion",
    [
        ("full", True, True, True, True),
        ("no-RAD", False, False, False, True),
        ("no-FDRQ", True, False, True, True),
        ("no-SAD", True, True, False, True),
        ("observable", True, False, False, False),
    ],
)
def test_variant_switches(variant, retrieval, feedback, modality, diffusion):
    flags = ablate(variant)
    assert (flags.retrieval, flags.feedback, flags.modality, flags.diffusion) == (
        retrieval,
        feedback,
        modality,
        diffusion,
    )
    assert flags.observable is (not diffusion)


@pytest.mark.parametrize(
    "variant, frozen, trained",
    [
        ("full", [], ["E_mo", "score.w1", "f_theta.w1", "f_psi.w1", "attn_mo.w1"]),
        ("no-RAD", ["E_mo", "score.w1", "f_psi.w1", "attn_mo.w1"], ["f_theta.w1"]),
        ("no-FDRQ", ["score.w1"], ["E_mo", "f_theta.w1", "f_psi.w1"]),
        ("no-SAD", ["E_mo", "f_psi.w1"], ["score.w1", "f_theta.w1"]),
        ("observable", ["f_theta.w1", "f_psi.w1", "E_mo"], ["score.w1"]),
    ],
)
def test_unused_parameters_are_frozen(tiny_dataset, tiny_config, variant, frozen, trained):
    trainable = model_for(tiny_dataset, tiny_config, variant=variant).trainable_parameters()
    for name in frozen:
        assert name not in trainable
    for name in ["E_id", "rho", "attn_id.w1", *trained]:
        assert name in trainable


def test_fixed_modality_table(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config, train_modality=False)
    assert "E_mo" not in model.trainable_parameters()
    np.testing.assert_array_equal(model.tables.mo.data, tiny_dataset.features.values)


def test_shared_gcn_weights(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config, gcn_sharing="shared")
    assert model.gcn_mo is model.gcn_id


# ------------------------
# Scoring
# ------------------------


def test_fuse_interpolates():
    out = fuse(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), Tensor(0.25))
    np.testing.assert_allclose(out.data, [0.25, 0.75])


def test_score_items_is_dot_product():
    scores = score_items(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    np.testing.assert_allclose(scores.data, [[1.0, 2.0, 3.0]])


def test_rho_starts_at_half(tiny_dataset, tiny_config):
    assert model_for(tiny_dataset, tiny_config).rho().item() == 0.5


# ------------------------
# Forward and training step
# ------------------------


@pytest.mark.parametrize(
    "variant, terms",
    [
        ("full", {"rec", "diffusion", "retriever", "self_diffusion", "contrastive", "align"}),
        ("no-RAD", {"rec", "diffusion"}),
        ("no-FDRQ", {"rec", "diffusion", "self_diffusion", "contrastive", "align"}),
        ("no-SAD", {"rec", "diffusion", "retriever"}),
        ("observable", {"rec"}),
    ],
)
def test_loss_terms_per_variant(tiny_dataset, tiny_config, variant, terms):
    model = model_for(tiny_dataset, tiny_config, variant=variant)
    prefixes, targets, sources = first_batch(tiny_dataset)
    bank = model.encode_bank([s.items for s in tiny_dataset.train])
    out = model.forward(prefixes, targets, bank, rng_for(1, "retrieval"), rng_for(1, "noise"), sources)

    assert set(out.terms) == terms
    assert out.scores.shape == (len(prefixes), tiny_dataset.vocab.n)
    assert np.isfinite(out.total.item())
    if variant != "no-RAD":
        assert out.neighbors.indices.shape == (len(prefixes), tiny_config.k)
        for b, source in enumerate(sources):
            assert source not in out.neighbors.indices[b]


def test_retrieval_without_bank_fails(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config)
    with pytest.raises(ValueError, match="session bank"):
        model.forward([[0, 1]])


def test_no_rad_runs_without_bank(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config, variant="no-RAD")
    out = model.infer([[0, 1], [2]], bank=None, retrieval_rng=None)
    assert out.neighbors is None
    assert out.scores.shape == (2, tiny_dataset.vocab.n)


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_trainable_parameter_gets_a_gradient(tiny_dataset, tiny_config, variant):
    model = model_for(tiny_dataset, tiny_config, variant=variant)
    trainer = Trainer(model, tiny_dataset)
    trainer.refresh_bank(1)
    before = {name: p.data.copy() for name, p in model.trainable_parameters().items()}

    values = trainer.train_step(tiny_dataset.train_pairs()[:8])

    assert np.isfinite(values["total"])
    moved = [name for name, p in model.trainable_parameters().items() if not np.array_equal(p.data, before[name])]
    assert "E_id" in moved and "rho" in moved
    assert all(p.grad is None for p in model.parameters().values())


def test_inference_is_deterministic(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config)
    bank = model.encode_bank([s.items for s in tiny_dataset.train])
    prefixes, _, _ = first_batch(tiny_dataset)
    a = model.infer(prefixes, bank, rng_for(0, "eval")).scores.data
    b = model.infer(prefixes, bank, rng_for(0, "eval")).scores.data
    np.testing.assert_array_equal(a, b)


# ------------------------
# State
# ------------------------


def test_state_dict_round_trip(tiny_dataset, tiny_config):
    source = model_for(tiny_dataset, tiny_config)
    target = model_for(tiny_dataset, tiny_config, seed=99)
    target.load_state_dict(source.state_dict())

    prefixes, _, _ = first_batch(tiny_dataset)
    sessions = [s.items for s in tiny_dataset.train]
    a = source.infer(prefixes, source.encode_bank(sessions), rng_for(0, "eval")).scores.data
    b = target.infer(prefixes, target.encode_bank(sessions), rng_for(0, "eval")).scores.data
    np.testing.assert_array_equal(a, b)


def test_missing_parameter_is_a_checkpoint_error(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config)
    state = model.state_dict()
    del state["rho"]
    with pytest.raises(CheckpointError, match="rho"):
        model.load_state_dict(state)


def test_shape_mismatch_is_a_checkpoint_error(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config)
    state = model.state_dict()
    state["E_id"] = np.zeros((2, 2))
    with pytest.raises(CheckpointError, match="E_id"):
        model.load_state_dict(state)


def test_end_to_end_gradients_match_finite_differences(tiny_dataset, tiny_config):
    model = model_for(tiny_dataset, tiny_config, variant="no-RAD", layers=1)
    prefixes, targets, _ = first_batch(tiny_dataset, size=4)
    params = model.parameters()
    checked = [params[name] for name in ("rho", "attn_id.w1", "attn_id.w2", "f_theta.b2", "E_id")]
    checked += list(model.gcn_id.parameters().values())
    assert check_gradients(lambda: model.forward(prefixes, targets).total, checked) < 1e-4
