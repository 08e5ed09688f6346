"""
The four-network CycleGAN in its two variants.

- standard: G (Y -> X), F (X -> Y), DX, DY
- switchable: one shared generator and one shared discriminator switched by
  AdaIN codes: G_shared(., g(0)) = G, G_shared(., g(1)) = F,
  D_shared(., d(0)) = DX, D_shared(., d(1)) = DY

Everything downstream only sees the four directional callables of
BoundModels, so losses are written once for both variants.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Literal, Mapping, Optional
import numpy as np
from src.nn.networks import (
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
from src.nn.params import ROLE_CODES, GradientMap, ParamGroup, param_count
from src.tensor.tape import Tape, Tensor
from src.utils.errors import ModelConfigError
from src.utils.logger import LOGGER

Variant = Literal["standard", "switchable"]
STANDARD_ROLES = ("G", "F", "DX", "DY")
SWITCHABLE_ROLES = ("G_shared", "D_shared", "code_gen_g", "code_gen_d")

Network = Callable[[Tensor], Tensor]


@dataclass
class BoundModels:
    """Directional networks bound to one tape: to_x is Y -> X, to_y is X -> Y."""
    to_x: Network
    to_y: Network
    score_x: Network
    score_y: Network


class CycleModels:
    """Parameter groups of one CycleGAN plus the configs needed to run them."""

    def __init__(
        self,
        variant: Variant,
        generator: ModelConfig,
        discriminator: ModelConfig,
        groups: Dict[str, ParamGroup],
        code_hidden: int = 32,
    ):
        expected = STANDARD_ROLES if variant == "standard" else SWITCHABLE_ROLES
        if tuple(groups) != expected:
            raise ModelConfigError(f"{variant} models need groups {expected}, got {tuple(groups)}")
        self.variant = variant
        self.generator = generator
        self.discriminator = discriminator
        self.groups = groups
        self.code_hidden = code_hidden

    @classmethod
    def create(
        cls,
        variant: Variant,
        generator: ModelConfig,
        discriminator: ModelConfig,
        seed: int,
        code_hidden: int = 32,
    ) -> "CycleModels":
        """
        Initialize every group of the variant.

        Each role draws from its own stream seeded by (seed, role code), so
        the two variants share nothing but the seed.
        """
        def role_seed(role: str) -> np.random.SeedSequence:
            return np.random.SeedSequence([seed, ROLE_CODES[role]])

        if variant == "standard":
            generator = generator.model_copy(update={"norm_mode": "instance"})
            discriminator = discriminator.model_copy(update={"norm_mode": "instance"})
            groups = {
                "G": build_generator(generator, role_seed("G"), "G"),
                "F": build_generator(generator, role_seed("F"), "F"),
                "DX": build_discriminator(discriminator, role_seed("DX"), "DX"),
                "DY": build_discriminator(discriminator, role_seed("DY"), "DY"),
            }
        elif variant == "switchable":
            generator = generator.model_copy(update={"norm_mode": "adain"})
            discriminator = discriminator.model_copy(update={"norm_mode": "adain"})
            groups = {
                "G_shared": build_generator(generator, role_seed("G_shared"), "G_shared"),
                "D_shared": build_discriminator(discriminator, role_seed("D_shared"), "D_shared"),
                "code_gen_g": build_code_generator(
                    generator_sites(generator), code_hidden, role_seed("code_gen_g"), "code_gen_g"),
                "code_gen_d": build_code_generator(
                    discriminator_sites(discriminator), code_hidden, role_seed("code_gen_d"), "code_gen_d"),
            }
        else:
            raise ModelConfigError(f"Unknown model variant '{variant}'")

        models = cls(variant, generator, discriminator, groups, code_hidden)
        LOGGER.info(f"Created {variant} models: {models.counts()}")
        return models

    @property
    def roles(self) -> List[str]:
        return list(self.groups)

    def counts(self) -> Dict[str, int]:
        per_group, total = param_count(self.groups.values())
        return {**per_group, "total": total}

    def copy(self) -> "CycleModels":
        groups = {role: group.copy() for role, group in self.groups.items()}
        return CycleModels(self.variant, self.generator, self.discriminator, groups, self.code_hidden)

    def flat_params(self) -> List[np.ndarray]:
        """Every parameter array in role order, then entry order."""
        return [value for group in self.groups.values() for value in group.entries.values()]

    def as_map(self) -> GradientMap:
        return {role: dict(group.entries) for role, group in self.groups.items()}

    def bind(self, tape: Optional[Tape] = None, trainable: Optional[Iterable[str]] = None) -> BoundModels:
        """
        Put the parameters on a tape and return the four directional networks.

        Args:
            tape: Tape to record on; None evaluates everything as constants
            trainable: Roles whose parameters are watched as "role/name" leaves
                       (all roles when None); the rest enter as constants

        Returns:
            BoundModels whose callables record on `tape`
        """
        trainable = set(self.roles if trainable is None else trainable)
        unknown = trainable - set(self.roles)
        if unknown:
            raise ModelConfigError(f"Roles {sorted(unknown)} are not part of the {self.variant} models")

        tensors: Dict[str, Dict[str, Tensor]] = {}
        for role, group in self.groups.items():
            tensors[role] = {}
            for name, value in group.entries.items():
                if tape is None:
                    tensors[role][name] = Tensor(value)
                else:
                    tensors[role][name] = tape.param(f"{role}/{name}", value, role in trainable)
        return self.bind_tensors(tensors)

    def bind_tensors(self, tensors: Mapping[str, Mapping[str, Tensor]]) -> BoundModels:
        """Directional networks over caller-provided tensors, one {name: Tensor} per role."""
        missing = set(self.roles) - set(tensors)
        if missing:
            raise ModelConfigError(f"No tensors for roles {sorted(missing)}")
        gen, disc = self.generator, self.discriminator
        if self.variant == "standard":
            return BoundModels(
                to_x=lambda t: forward_generator(gen, tensors["G"], t),
                to_y=lambda t: forward_generator(gen, tensors["F"], t),
                score_x=lambda t: forward_discriminator(disc, tensors["DX"], t),
                score_y=lambda t: forward_discriminator(disc, tensors["DY"], t),
            )

        gen_sites, disc_sites = generator_sites(gen), discriminator_sites(disc)
        code_g = [forward_code_generator(tensors["code_gen_g"], gen_sites, n) for n in (0, 1)]
        code_d = [forward_code_generator(tensors["code_gen_d"], disc_sites, n) for n in (0, 1)]
        return BoundModels(
            to_x=lambda t: forward_generator(gen, tensors["G_shared"], t, code_g[0]),
            to_y=lambda t: forward_generator(gen, tensors["G_shared"], t, code_g[1]),
            score_x=lambda t: forward_discriminator(disc, tensors["D_shared"], t, code_d[0]),
            score_y=lambda t: forward_discriminator(disc, tensors["D_shared"], t, code_d[1]),
        )

    def nest_gradients(self, flat: Mapping[str, np.ndarray], roles: Optional[Iterable[str]] = None) -> GradientMap:
        """
        Turn backward()'s {"role/name": grad} into {role: {name: grad}} in group order.

        Args:
            flat: Leaf gradients from backward()
            roles: Roles to keep (every role present in `flat` when None)
        """
        keep = None if roles is None else set(roles)
        nested: GradientMap = {}
        for role, group in self.groups.items():
            if keep is not None and role not in keep:
                continue
            entries = {name: flat[f"{role}/{name}"] for name in group.entries if f"{role}/{name}" in flat}
            if entries:
                nested[role] = entries
        return nested
