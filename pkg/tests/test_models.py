"""Tests for domain models and document schemas."""
import numpy as np
import pytest
from pydantic import ValidationError

from probmetrics.exceptions import EnvelopeCoverageError, NumericalError, PreconditionError
from probmetrics.models import AtomSet, CharGrid, ConstantLedger, GaussianMixture, TransportPlan
from probmetrics.schemas import (
    BoundCertificate,
    BoundParams,
    MixtureSpec,
    PolyEnvelopeEntry,
    PolyEnvelopeTable,
)


def test_mixture_spec_scalar_shorthand():
    """Test scalar means and covariances are expanded for d = 1."""
    spec = MixtureSpec.model_validate({"d": 1, "components": [{"w": 1.0, "mean": 0.5, "cov": 2.0}]})
    assert spec.components[0].mean == [0.5]
    assert spec.components[0].cov == [[2.0]]
    assert GaussianMixture.from_spec(spec).covs.tolist() == [[[2.0]]]


def test_mixture_spec_rejects_bad_documents():
    """Test weight sums and shapes are validated."""
    with pytest.raises(ValidationError):
        MixtureSpec.model_validate({"d": 1, "components": [{"w": 0.5, "mean": 0.0, "cov": 1.0}]})
    with pytest.raises(ValidationError):
        MixtureSpec.model_validate({"d": 2, "components": [{"w": 1.0, "mean": 0.0, "cov": 1.0}]})


def test_bound_params_promotion():
    """Test p is promoted to the next even integer >= 2."""
    assert BoundParams(p=1, q=2, epsilon=0.1).p_even == 2
    assert BoundParams(p=2.5, q=2, epsilon=0.1).p_even == 4
    assert not BoundParams(p=4, q=2, epsilon=0.1).promoted
    with pytest.raises(ValidationError):
        BoundParams(p=2, q=1, epsilon=0.1)
    with pytest.raises(ValidationError):
        BoundParams(p=2, q=2, epsilon=1.0)


def test_certificate_verdict_must_match(default_params):
    """Test satisfied is tied to lhs <= rhs and M >= 1 for A <= 1."""
    fields = dict(regime="lemma1-poly", params=default_params, l=75, A=0.1, envelope_ref="none", constants={})
    BoundCertificate(M=1.2, lhs=0.1, rhs=1.0, satisfied=True, **fields)
    with pytest.raises(ValidationError):
        BoundCertificate(M=1.2, lhs=2.0, rhs=1.0, satisfied=True, **fields)
    with pytest.raises(ValidationError):
        BoundCertificate(M=0.5, lhs=0.1, rhs=1.0, satisfied=True, **fields)


def test_poly_envelope_table_coverage():
    """Test tables must be rectangular and report missing entries."""
    entries = [PolyEnvelopeEntry(k=k, l=l, c=1.0) for k in range(2) for l in range(3)]
    table = PolyEnvelopeTable(side="frequency", entries=entries)
    assert (table.max_k, table.max_l) == (1, 2)
    with pytest.raises(EnvelopeCoverageError):
        table.get(2, 0)
    with pytest.raises(ValidationError):
        PolyEnvelopeTable(side="frequency", entries=entries[:-1])


def test_char_grid_validates_characteristic_functions():
    """Test a characteristic function must be 1 at the origin and bounded by 1."""
    with pytest.raises(NumericalError):
        CharGrid([-1.0], [1.0], np.full(8, 0.5))
    assert not CharGrid([-1.0], [1.0], np.full(8, 2.0), is_char_fn=False).is_char_fn


def test_transport_plan_checks_marginals():
    """Test plans whose sums miss the marginals are rejected."""
    rows = AtomSet.uniform([0.0, 1.0])
    cols = AtomSet.uniform([0.5])
    assert TransportPlan(rows, cols, [[0.5], [0.5]]).cost(np.array([[0.5], [0.5]])) == pytest.approx(0.5)
    with pytest.raises(NumericalError):
        TransportPlan(rows, cols, [[0.7], [0.3]])


def test_atom_set_validation():
    """Test masses must be positive and sum to one."""
    with pytest.raises(PreconditionError):
        AtomSet([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(PreconditionError):
        AtomSet([[0.0], [1.0]], [1.0, 0.0])


def test_ledger_flatten_labels():
    """Test flattened labels carry their indices and reject theta outside (0, 1)."""
    ledger = ConstantLedger(gamma={75: 0.027}, theta={(75, 2): 0.93}, moments={4.0: 3.0})
    assert ledger.flatten() == {"gamma[75]": 0.027, "theta[75,2]": 0.93, "a_0[4]": 3.0}
    with pytest.raises(NumericalError):
        ConstantLedger(theta={(2, 2): 1.5})
