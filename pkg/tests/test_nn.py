import numpy as np
import pytest
from numpy.testing import assert_array_equal
from src.nn.models import CycleModels
from src.nn.networks import (
    AdaInCode,
    ModelConfig,
    build_code_generator,
    build_discriminator,
    build_generator,
    discriminator_sites,
    forward_code_generator,
    forward_discriminator,
    forward_generator,
    generator_sites,
)
from src.nn.params import ParamGroup, param_count
from src.nn.storage import load_params, save_params
from src.tensor.tape import Tape, Tensor
from src.utils.errors import ArtifactError, ChecksumError, ModelConfigError, ShapeError

TOY = ModelConfig(in_channels=1, width=8, depth=2)


def tensors(group: ParamGroup):
    return {name: Tensor(value) for name, value in group.entries.items()}


def analytic_generator_count(cfg: ModelConfig) -> int:
    ch = cfg.channels
    count = ch(0) * cfg.in_channels * 9
    count += sum(ch(k) * ch(k - 1) * 9 for k in range(1, cfg.depth + 1))
    count += sum(ch(k - 1) * (ch(k) + ch(k - 1)) * 9 for k in range(1, cfg.depth + 1))
    return count + cfg.in_channels * ch(0) * 9 + cfg.in_channels


# ============================================================================
# Counts
# ============================================================================

def test_toy_generator_count():
    group = build_generator(TOY, seed=0)
    assert group.count() == 14_545
    assert group.count() == analytic_generator_count(TOY)


def test_toy_discriminator_count():
    assert build_discriminator(TOY, seed=0).count() == 1_369


def test_code_generator_count_and_output_size():
    group = build_code_generator([8, 16], hidden=32, seed=0)
    assert group.count() == 2 * 32 + 32 + 32 * 48 + 48
    assert group.entries["fc2.b"].shape == (48,)


def test_sites():
    assert generator_sites(TOY) == [8, 16, 32, 16, 8]
    assert discriminator_sites(TOY) == [8, 16]


def test_switchable_transmits_fewer_parameters():
    standard = CycleModels.create("standard", TOY, TOY, seed=0).counts()
    switchable = CycleModels.create("switchable", TOY, TOY, seed=0).counts()
    assert standard["total"] == 2 * 14_545 + 2 * 1_369
    assert switchable["total"] == 14_545 + 1_369 + 5_376 + 1_680
    assert switchable["total"] < standard["total"]


def test_param_count_of_nothing():
    assert param_count([]) == ({}, 0)


def test_duplicate_entry_rejected():
    group = ParamGroup("G")
    group.add("w", np.zeros(2))
    with pytest.raises(ValueError):
        group.add("w", np.zeros(2))


def test_unknown_role_rejected():
    with pytest.raises(ValueError):
        ParamGroup("H")


# ============================================================================
# Determinism and shapes
# ============================================================================

def test_same_seed_builds_identical_parameters():
    a, b = build_generator(TOY, seed=5), build_generator(TOY, seed=5)
    for name in a.entries:
        assert_array_equal(a.entries[name], b.entries[name])
    c = build_generator(TOY, seed=6)
    assert not np.array_equal(a.entries["enc0.w"], c.entries["enc0.w"])


def test_generator_preserves_shape_and_is_deterministic(rng):
    params = tensors(build_generator(TOY, seed=1))
    x = Tensor(rng.uniform(0, 1, size=(2, 1, 16, 16)).astype(np.float32))
    first = forward_generator(TOY, params, x).numpy()
    assert first.shape == (2, 1, 16, 16)
    assert_array_equal(first, forward_generator(TOY, params, x).numpy())


def test_discriminator_patch_map_shape(rng):
    params = tensors(build_discriminator(TOY, seed=1))
    x = Tensor(rng.uniform(0, 1, size=(1, 1, 16, 16)).astype(np.float32))
    assert forward_discriminator(TOY, params, x).shape == (1, 1, 4, 4)


def test_indivisible_input_rejected():
    params = tensors(build_generator(TOY, seed=1))
    with pytest.raises(ShapeError):
        forward_generator(TOY, params, Tensor(np.zeros((1, 1, 10, 10), dtype=np.float32)))


def test_wrong_channel_count_rejected():
    params = tensors(build_generator(TOY, seed=1))
    with pytest.raises(ShapeError):
        forward_generator(TOY, params, Tensor(np.zeros((1, 2, 16, 16), dtype=np.float32)))


@pytest.mark.parametrize("final_tanh", [False, True])
def test_untrained_residual_generator_is_identity(rng, final_tanh):
    cfg = ModelConfig(width=8, depth=2, residual_skip=True, final_tanh=final_tanh)
    params = tensors(build_generator(cfg, seed=2))
    x = rng.uniform(0, 1, size=(2, 1, 16, 16)).astype(np.float32)
    assert_array_equal(forward_generator(cfg, params, Tensor(x)).numpy(), x)


# ============================================================================
# AdaIN codes
# ============================================================================

def test_code_pairs_match_sites():
    sites = [8, 16]
    code = forward_code_generator(tensors(build_code_generator(sites, 32, seed=0)), sites, 1)
    assert [(g.shape, b.shape) for g, b in code.pairs] == [((8,), (8,)), ((16,), (16,))]


def test_switch_changes_translation_direction(switchable_models, rng):
    bound = switchable_models.bind()
    x = Tensor(rng.uniform(0, 1, size=(1, 1, 8, 8)).astype(np.float32))
    assert not np.array_equal(bound.to_x(x).numpy(), bound.to_y(x).numpy())
    assert not np.array_equal(bound.score_x(x).numpy(), bound.score_y(x).numpy())


def test_adain_network_requires_code():
    cfg = TOY.model_copy(update={"norm_mode": "adain"})
    with pytest.raises(ModelConfigError):
        forward_generator(cfg, tensors(build_generator(cfg, seed=0)), Tensor(np.zeros((1, 1, 16, 16))))


def test_instance_network_rejects_code():
    sites = discriminator_sites(TOY)
    code = forward_code_generator(tensors(build_code_generator(sites, 4, seed=0)), sites, 0)
    with pytest.raises(ModelConfigError):
        forward_discriminator(TOY, tensors(build_discriminator(TOY, seed=0)), Tensor(np.zeros((1, 1, 16, 16))), code)


def test_code_of_wrong_size_rejected():
    cfg = TOY.model_copy(update={"norm_mode": "adain"})
    code = AdaInCode([(Tensor(np.ones(8)), Tensor(np.zeros(8)))])
    with pytest.raises(ModelConfigError):
        code.validate(discriminator_sites(cfg))


def test_code_generator_needs_sites():
    with pytest.raises(ModelConfigError):
        build_code_generator([], 32, seed=0)


# ============================================================================
# Models
# ============================================================================

def test_groups_must_match_variant(standard_models):
    with pytest.raises(ModelConfigError):
        CycleModels("switchable", standard_models.generator, standard_models.discriminator,
                    standard_models.groups)


def test_bind_rejects_unknown_roles(standard_models):
    with pytest.raises(ModelConfigError):
        standard_models.bind(Tape(), trainable=["G_shared"])


def test_bind_watches_only_trainable_roles(standard_models):
    tape = Tape()
    standard_models.bind(tape, trainable=["DX"])
    assert sorted(tape.leaves) == sorted(f"DX/{name}" for name in standard_models.groups["DX"].entries)


def test_copy_is_independent(standard_models):
    clone = standard_models.copy()
    clone.groups["G"].entries["head.b"] += 1.0
    assert not np.array_equal(clone.groups["G"].entries["head.b"], standard_models.groups["G"].entries["head.b"])


# ============================================================================
# Parameter files
# ============================================================================

def test_parameter_file_restores_models(switchable_models, tmp_path):
    path = save_params(switchable_models, tmp_path / "params.bin")
    loaded = load_params(path)
    assert loaded.variant == "switchable"
    assert loaded.generator == switchable_models.generator
    for role, group in switchable_models.groups.items():
        assert list(loaded.groups[role].entries) == list(group.entries)
        for name, value in group.entries.items():
            assert_array_equal(loaded.groups[role].entries[name], value)


def test_corrupted_parameter_file_rejected(standard_models, tmp_path):
    path = save_params(standard_models, tmp_path / "params.bin")
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x10
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_params(path)


def test_missing_parameter_file(tmp_path):
    with pytest.raises(ArtifactError):
        load_params(tmp_path / "nope.bin")
