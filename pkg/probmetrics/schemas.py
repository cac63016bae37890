"""Pydantic schemas for every JSON document the toolkit reads or writes."""
import math
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from probmetrics.exceptions import EnvelopeCoverageError
from probmetrics.models import DistanceMethod, EnvelopeSide, PerturbationKind, Regime


# ============================================================================
# Distribution Schemas
# ============================================================================

class ComponentSpec(BaseModel):
    """One Gaussian component of a mixture document."""
    w: float = Field(..., gt=0, le=1)
    mean: Union[List[float], float]
    cov: Union[List[List[float]], float]


class MixtureSpec(BaseModel):
    """Mixture document: {"d", "components": [{"w", "mean", "cov"}]}."""
    d: int = Field(..., ge=1)
    components: List[ComponentSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_shapes(self):
        for component in self.components:
            if isinstance(component.mean, float):
                if self.d != 1:
                    raise ValueError("scalar mean is only allowed when d = 1")
                component.mean = [component.mean]
            if isinstance(component.cov, float):
                if self.d != 1:
                    raise ValueError("scalar covariance is only allowed when d = 1")
                component.cov = [[component.cov]]
            if len(component.mean) != self.d:
                raise ValueError(f"mean {component.mean} does not have length {self.d}")
            if len(component.cov) != self.d or any(len(row) != self.d for row in component.cov):
                raise ValueError(f"covariance is not {self.d}x{self.d}")
        if abs(sum(c.w for c in self.components) - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1")
        return self


class AtomSpec(BaseModel):
    """One atom: location and mass."""
    x: Union[List[float], float]
    m: float = Field(..., gt=0, le=1)


class AtomSetSpec(BaseModel):
    """Atom-set document: {"d", "atoms": [{"x", "m"}]}."""
    d: int = Field(..., ge=1)
    atoms: List[AtomSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_shapes(self):
        for atom in self.atoms:
            if isinstance(atom.x, float):
                atom.x = [atom.x]
            if len(atom.x) != self.d:
                raise ValueError(f"atom location {atom.x} does not have length {self.d}")
        if abs(sum(a.m for a in self.atoms) - 1.0) > 1e-12:
            raise ValueError("atom masses must sum to 1")
        return self


# ============================================================================
# Distance Schemas
# ============================================================================

class DistanceResult(BaseModel):
    """A distance value with the method that produced it and an error estimate."""
    value: float = Field(..., ge=0)
    method: DistanceMethod
    err: float = Field(..., ge=0)


# ============================================================================
# Envelope Schemas
# ============================================================================

class PolyEnvelopeEntry(BaseModel):
    k: int = Field(..., ge=0)
    l: int = Field(..., ge=0)
    c: float = Field(..., ge=0)

    @field_validator("c")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("envelope constant must be finite")
        return value


class PolyEnvelopeTable(BaseModel):
    """Polynomial decay envelope d_{k,l} (density side) or b_{k,l} (frequency side)."""
    side: EnvelopeSide
    entries: List[PolyEnvelopeEntry]
    provenance: str = "empirical"

    @model_validator(mode="after")
    def check_coverage(self):
        if not self.entries:
            return self
        keys = {(e.k, e.l) for e in self.entries}
        for k in range(self.max_k + 1):
            for l in range(self.max_l + 1):
                if (k, l) not in keys:
                    raise ValueError(f"table misses entry k={k}, l={l}")
        return self

    @property
    def max_k(self) -> int:
        return max((e.k for e in self.entries), default=-1)

    @property
    def max_l(self) -> int:
        return max((e.l for e in self.entries), default=-1)

    def get(self, k: int, l: int) -> float:
        for entry in self.entries:
            if entry.k == k and entry.l == l:
                return entry.c
        raise EnvelopeCoverageError(self.side.value, k, l)


class ExpEnvelopeEntry(BaseModel):
    k: int = Field(..., ge=0)
    r: float = Field(..., gt=0)
    c: float = Field(..., gt=0)
    slope: Optional[float] = None
    radius: Optional[float] = None

    @field_validator("r", "c")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("exponential envelope constants must be finite")
        return value


class ExpEnvelopeTable(BaseModel):
    """Exponential envelope (r_k, c_k) of characteristic-function derivatives."""
    entries: List[ExpEnvelopeEntry]
    provenance: str = "empirical"

    def get(self, k: int) -> ExpEnvelopeEntry:
        for entry in self.entries:
            if entry.k == k:
                return entry
        raise EnvelopeCoverageError("exponential", k)


# ============================================================================
# Bound Schemas
# ============================================================================

class BoundParams(BaseModel):
    """Exponents of a certificate; p is promoted to an even integer internally."""
    p: float = Field(..., ge=1)
    q: float = Field(..., gt=1)
    epsilon: float = Field(..., gt=0, lt=1)
    d: int = Field(1, ge=1)

    @property
    def p_even(self) -> int:
        """Smallest even integer >= max(p, 2)."""
        p = max(self.p, 2.0)
        return int(2 * math.ceil(p / 2))

    @property
    def promoted(self) -> bool:
        return self.p_even != self.p


class BoundCertificate(BaseModel):
    """Fully evaluated bound for a concrete pair of laws."""
    regime: Regime
    params: BoundParams
    l: int
    M: float
    A: float = Field(..., ge=0)
    envelope_ref: str
    constants: Dict[str, float]
    rhs: float = Field(..., ge=0)
    lhs: float = Field(..., ge=0)
    satisfied: bool
    branch: str = "power"
    alpha: Optional[List[int]] = None
    provenance: str = "empirical"

    @model_validator(mode="after")
    def check_verdict(self):
        if self.satisfied != (self.lhs <= self.rhs):
            raise ValueError("satisfied must equal lhs <= rhs")
        if self.A <= 1 and self.M < 1:
            raise ValueError("truncation radius M must be >= 1 when A <= 1")
        return self


# ============================================================================
# Harness Schemas
# ============================================================================

class Scenario(BaseModel):
    """A perturbation sweep over a descending list of scales h."""
    name: str = Field(..., min_length=1)
    base: MixtureSpec
    kind: PerturbationKind
    h: List[float] = Field(..., min_length=1)
    params: BoundParams
    alpha: Optional[List[int]] = None
    resolution: Optional[int] = None
    smoothing_sigma: float = Field(1.0, gt=0)
    contaminant: Optional[MixtureSpec] = None
    cross_check_entropic: bool = False
    seed: int = 0

    @field_validator("h")
    @classmethod
    def positive_descending(cls, values: List[float]) -> List[float]:
        if any(not (h > 0) for h in values):
            raise ValueError("scales h must be strictly positive")
        if any(a <= b for a, b in zip(values, values[1:])):
            raise ValueError("scales h must be sorted strictly descending")
        return values

    @model_validator(mode="after")
    def check_consistency(self):
        if self.params.d != self.base.d:
            raise ValueError(f"params.d={self.params.d} but base law has d={self.base.d}")
        if self.alpha is not None and (len(self.alpha) != self.base.d or min(self.alpha) < 0):
            raise ValueError("alpha must be a multiindex of length d")
        if self.contaminant is not None and self.contaminant.d != self.base.d:
            raise ValueError("contaminant and base law differ in dimension")
        if self.kind == PerturbationKind.MIXTURE_WEIGHT and len(self.base.components) < 2:
            raise ValueError("mixture-weight perturbation needs at least two components")
        return self


class ScenarioSuite(BaseModel):
    """Several scenarios run together; names must be unique."""
    scenarios: List[Scenario] = Field(..., min_length=1)

    @field_validator("scenarios")
    @classmethod
    def unique_names(cls, scenarios: List[Scenario]) -> List[Scenario]:
        names = [s.name for s in scenarios]
        if len(set(names)) != len(names):
            raise ValueError("scenario names must be unique in a run")
        return scenarios


class SweepRow(BaseModel):
    """One scale of a sweep; values are None when the row failed."""
    h: float
    A: Optional[float] = None
    rho_p: Optional[float] = None
    tv: Optional[float] = None
    rhs1: Optional[float] = None
    rhs2: Optional[float] = None
    psup: Optional[float] = None
    prhs: Optional[float] = None
    ok1: Optional[bool] = None
    ok2: Optional[bool] = None
    okp: Optional[bool] = None
    A_entropic: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def violated(self) -> bool:
        return any(flag is False for flag in (self.ok1, self.ok2, self.okp))


class SweepReport(BaseModel):
    """Rows of a sweep ordered by descending h, plus the fitted log-log rate."""
    scenario: str
    rows: List[SweepRow]
    slope: Optional[float] = None
    stderr: Optional[float] = None
    intercept: Optional[float] = None
    fitted_rows: int = 0
    metadata: Dict[str, Union[str, int, float]] = Field(default_factory=dict)
