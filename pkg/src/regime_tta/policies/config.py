"""
Policy identifiers and hyperparameters
"""
import dataclasses
import enum
import typing

from regime_tta.similarity import SIMILARITY_PRESETS


class PolicyKind(str, enum.Enum):
    """Update policies"""

    TTA = "tta"
    EWC = "ewc"
    DYNATTA = "dynatta"
    RGTTA = "rgtta"
    RGTTA_EWC = "rgtta_ewc"
    RGTTA_DYNATTA = "rgtta_dynatta"
    RETRAIN = "retrain"

    @property
    def regime_guided(self) -> bool:
        return self in (PolicyKind.RGTTA, PolicyKind.RGTTA_EWC, PolicyKind.RGTTA_DYNATTA)

    @property
    def uses_ewc(self) -> bool:
        return self in (PolicyKind.EWC, PolicyKind.RGTTA_EWC)

    @property
    def uses_dynatta(self) -> bool:
        return self in (PolicyKind.DYNATTA, PolicyKind.RGTTA_DYNATTA)

    @property
    def baseline(self) -> "PolicyKind":
        """Baseline a regime-guided policy extends"""
        return {
            PolicyKind.RGTTA: PolicyKind.TTA,
            PolicyKind.RGTTA_EWC: PolicyKind.EWC,
            PolicyKind.RGTTA_DYNATTA: PolicyKind.DYNATTA,
        }.get(self, self)


ADAPTIVE_POLICIES = tuple(k for k in PolicyKind if k is not PolicyKind.RETRAIN)
POLICY_NAMES = tuple(k.value for k in PolicyKind)

# Fixed step budget of each baseline, also used by the matching regime-guided
# policy when early stopping is switched off
FIXED_STEPS = {
    PolicyKind.TTA: 20,
    PolicyKind.EWC: 15,
    PolicyKind.DYNATTA: 20,
}


@dataclasses.dataclass(frozen=True)
class PolicyConfig:
    """
    Hyperparameters of an update policy

    Defaults reproduce the reference configuration. Fields not used by
    a policy kind are ignored by it.

    Parameters
    ----------
    kind: PolicyKind
        Policy to run.
    alpha_base: float
        Base learning rate, default ``3e-4``.
    gamma: float
        Learning-rate novelty gain, default 0.67.
    k_max: int
        Step cap of regime-guided policies, default 25.
    k_min: int
        Minimum steps before early stopping may halt, default 5.
    patience: int
        Consecutive stalled steps that halt adaptation, default 3.
    eps_improve: float
        Relative loss improvement below which a step is stalled,
        default 0.005.
    early_stopping: bool
        If ``False`` regime-guided policies run a fixed budget of
        ``fixed_steps`` instead.
    tau: float
        Similarity gate for checkpoint loading, default 0.75. Values
        above 1 disable loading.
    gate: float
        Loss gate for checkpoint loading, default 0.70.
    memory_capacity: int
        Checkpoint library size, default 5.
    similarity: str
        Similarity weighting preset, default ``ensemble``.
    fixed_steps: int, optional
        Step budget of baselines. ``None`` takes the per-policy default
        (TTA 20, EWC 15, DynaTTA 20).
    ewc_lambda: float
        EWC penalty strength, default 400.
    fisher_samples: int
        Windows of the batch Fisher sample used for the estimate,
        default 200.
    fisher_clamp: float
        Upper clamp of Fisher entries, default ``1e4``.
    fisher_decay: float
        Weight of the previous Fisher in the blend, default 0.5.
    dyn_alpha_min, dyn_alpha_max: float
        DynaTTA learning-rate range, default ``1e-4`` and ``1e-3``.
    dyn_kappa: float
        DynaTTA sigmoid gain, default 1.
    dyn_eta: float
        DynaTTA shift-score smoothing, default 0.1.
    rtab_capacity: int
        Recent embedding buffer size, default 360.
    rdb_capacity: int
        Representative (reservoir) embedding buffer size, default 100.
    warmup_factor: float
        DynaTTA warmup is ``warmup_factor * fixed_steps * 3`` steps,
        default 1.
    loss_delta: float
        SmoothL1 threshold, default 1.
    """

    kind: PolicyKind = PolicyKind.RGTTA
    alpha_base: float = 3e-4
    gamma: float = 0.67
    k_max: int = 25
    k_min: int = 5
    patience: int = 3
    eps_improve: float = 0.005
    early_stopping: bool = True
    tau: float = 0.75
    gate: float = 0.70
    memory_capacity: int = 5
    similarity: str = "ensemble"
    fixed_steps: typing.Optional[int] = None
    ewc_lambda: float = 400.0
    fisher_samples: int = 200
    fisher_clamp: float = 1e4
    fisher_decay: float = 0.5
    dyn_alpha_min: float = 1e-4
    dyn_alpha_max: float = 1e-3
    dyn_kappa: float = 1.0
    dyn_eta: float = 0.1
    rtab_capacity: int = 360
    rdb_capacity: int = 100
    warmup_factor: float = 1.0
    loss_delta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        for name in (
            "alpha_base",
            "k_max",
            "k_min",
            "patience",
            "eps_improve",
            "gate",
            "memory_capacity",
            "fisher_samples",
            "fisher_clamp",
            "dyn_alpha_min",
            "dyn_alpha_max",
            "dyn_kappa",
            "rtab_capacity",
            "rdb_capacity",
            "loss_delta",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("gamma", "ewc_lambda", "warmup_factor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.k_min > self.k_max:
            raise ValueError(f"k_min ({self.k_min}) must not exceed k_max ({self.k_max})")
        if self.dyn_alpha_min >= self.dyn_alpha_max:
            raise ValueError("dyn_alpha_min must be smaller than dyn_alpha_max")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.gate < 1:
            raise ValueError(f"gate must lie in (0, 1), got {self.gate}")
        if not 0 <= self.fisher_decay <= 1 or not 0 < self.dyn_eta <= 1:
            raise ValueError("fisher_decay must lie in [0, 1] and dyn_eta in (0, 1]")
        if self.fixed_steps is not None and self.fixed_steps < 1:
            raise ValueError(f"fixed_steps must be positive, got {self.fixed_steps}")
        if self.similarity not in SIMILARITY_PRESETS:
            raise ValueError(
                f"Unknown similarity preset {self.similarity!r}, "
                f"expected one of {sorted(SIMILARITY_PRESETS)}"
            )

    @property
    def step_budget(self) -> int:
        """Fixed number of steps of a baseline (or of an RG policy without early stopping)"""
        if self.fixed_steps is not None:
            return self.fixed_steps
        return FIXED_STEPS.get(self.kind.baseline, FIXED_STEPS[PolicyKind.TTA])

    @property
    def max_steps(self) -> int:
        """Largest number of gradient steps a batch may take"""
        if self.kind.regime_guided and self.early_stopping:
            return self.k_max
        return self.step_budget

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_factor * self.step_budget * 3))

    def with_overrides(self, overrides: typing.Mapping[str, typing.Any]) -> "PolicyConfig":
        """
        Copy of the config with fields replaced

        Parameters
        ----------
        overrides: dict
            Field names and values, e.g. parsed from a JSON file.

        Raises
        ------
        ValueError
            If a key is not a config field.
        """
        names = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(overrides) - names)
        if unknown:
            raise ValueError(f"Unknown policy config field(s): {', '.join(unknown)}")
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.value
        return d
