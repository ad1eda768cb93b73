"""
Optimizer Factory

Adam baseline and SOAP: Adam run in the eigenbasis of Shampoo's two-sided
preconditioners, refreshed every few steps. One-dimensional parameters and
sides larger than ``max_precond_dim`` fall back to the identity basis.
"""

from typing import Iterable, Optional

import structlog
import torch
from torch.optim import Optimizer

from app.core.config import TrainConfig
from app.core.exceptions import ConfigurationError

logger = structlog.get_logger(__name__)


class SOAP(Optimizer):
    def __init__(
        self,
        params: Iterable[torch.Tensor],
        lr: float = 3e-3,
        betas=(0.95, 0.95),
        shampoo_beta: float = 0.95,
        eps: float = 1e-8,
        precondition_frequency: int = 10,
        max_precond_dim: int = 1024,
    ):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        defaults = dict(
            lr=lr,
            betas=betas,
            shampoo_beta=shampoo_beta,
            eps=eps,
            precondition_frequency=precondition_frequency,
            max_precond_dim=max_precond_dim,
        )
        super().__init__(params, defaults)

    @staticmethod
    def _project(x: torch.Tensor, state, back: bool = False) -> torch.Tensor:
        ql, qr = state.get("Q_left"), state.get("Q_right")
        if ql is not None:
            x = (ql @ x) if back else (ql.T @ x)
        if qr is not None:
            x = (x @ qr.T) if back else (x @ qr)
        return x

    @staticmethod
    def _refresh_basis(state) -> None:
        for side in ("left", "right"):
            gram = state.get(f"G_{side}")
            if gram is not None:
                _, vectors = torch.linalg.eigh(gram)
                state[f"Q_{side}"] = vectors

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]

                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                    if p.dim() == 2:
                        rows, cols = p.shape
                        if rows <= group["max_precond_dim"]:
                            state["G_left"] = grad @ grad.T
                        if cols <= group["max_precond_dim"]:
                            state["G_right"] = grad.T @ grad
                        self._refresh_basis(state)
                    # the first gradient only seeds the preconditioners
                    if p.dim() == 2:
                        continue

                state["step"] += 1
                step = state["step"]
                projected = self._project(grad, state)

                state["exp_avg"].mul_(beta1).add_(grad, alpha=1 - beta1)
                state["exp_avg_sq"].mul_(beta2).addcmul_(projected, projected, value=1 - beta2)

                m_hat = self._project(state["exp_avg"], state) / (1 - beta1**step)
                v_hat = state["exp_avg_sq"] / (1 - beta2**step)
                update = self._project(m_hat / (v_hat.sqrt() + group["eps"]), state, back=True)
                p.add_(update, alpha=-group["lr"])

                if p.dim() == 2:
                    shampoo_beta = group["shampoo_beta"]
                    if "G_left" in state:
                        state["G_left"].mul_(shampoo_beta).add_(grad @ grad.T, alpha=1 - shampoo_beta)
                    if "G_right" in state:
                        state["G_right"].mul_(shampoo_beta).add_(grad.T @ grad, alpha=1 - shampoo_beta)
                    if step % group["precondition_frequency"] == 0:
                        self._refresh_basis(state)
        return loss


def build_optimizer(params: Iterable[torch.Tensor], config: TrainConfig) -> Optimizer:
    params = list(params)
    if config.optimizer == "soap":
        return SOAP(
            params,
            lr=config.learning_rate,
            shampoo_beta=config.shampoo_beta,
            precondition_frequency=config.precondition_frequency,
            max_precond_dim=config.max_precond_dim,
        )
    if config.optimizer == "adam":
        return torch.optim.Adam(params, lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    raise ConfigurationError(f"Unknown optimizer '{config.optimizer}'")


def build_scheduler(optimizer: Optimizer, config: TrainConfig) -> Optional[torch.optim.lr_scheduler.LRScheduler]:
    if config.lr_schedule == "cosine":
        return torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=config.epochs)
    return None
