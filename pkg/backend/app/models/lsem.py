"""
Trained Model

Everything needed to run a trained surrogate on a new layout: one autoencoder
per element type, the interaction blocks and the training provenance.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from app.core.exceptions import IncompatibleModelError
from app.models.layout import ElementLayout
from app.services.autoencoder import Autoencoder
from app.services.latent_dynamics import InteractionDynamics


@dataclass
class LsemModel:
    autoencoders: Dict[int, Autoencoder]
    dynamics: InteractionDynamics
    layout: ElementLayout
    config: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    optimizer_used: str = "adam"
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.dynamics.n_z

    def autoencoder(self, type_id: int) -> Autoencoder:
        try:
            return self.autoencoders[type_id]
        except KeyError:
            raise IncompatibleModelError(f"Model has no autoencoder for element type {type_id}") from None

    def check_layout(self, layout: ElementLayout) -> None:
        """Every element must match the input size of its type's autoencoder."""
        for m, spec in enumerate(layout.elements):
            ae = self.autoencoder(spec.type_id)
            if ae.n_local != spec.n_local:
                raise IncompatibleModelError(
                    f"Element {m} has {spec.n_local} points but the type-{spec.type_id} "
                    f"autoencoder expects {ae.n_local}"
                )
        missing = {e.direction for e in layout.edges()} - set(self.dynamics.directions)
        if missing:
            raise IncompatibleModelError(f"Model has no interaction blocks for directions {sorted(missing)}")

    def eval(self) -> "LsemModel":
        for ae in self.autoencoders.values():
            ae.eval()
        self.dynamics.eval()
        return self

    def summary(self, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return {
            "types": {t: list(ae.encoder.layer_sizes) for t, ae in self.autoencoders.items()},
            "latent_dim": self.latent_dim,
            "library": self.dynamics.library.kind,
            "formulation": self.dynamics.formulation,
            "optimizer_used": self.optimizer_used,
            "seed": self.seed,
            **(extra or {}),
        }
