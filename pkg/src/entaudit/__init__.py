"""Entanglement accounting for small multiparty LOCC protocols.

The package has three layers: dense state plumbing (:mod:`entaudit.states`),
certified relative-entropy-of-entanglement brackets via Frank-Wolfe over
explicit separable mixtures (:mod:`entaudit.ree`), and a branching LOCC
engine with conservation-law audits on top
(:mod:`entaudit.engine`, :mod:`entaudit.audit`, :mod:`entaudit.protocols`,
:mod:`entaudit.accounting`).
"""

from entaudit.states import (
    DensityMatrix,
    Ensemble,
    PartyLayout,
    ProjectiveMeasurement,
    PureState,
    apply_local_unitary,
    attach_ancilla,
    binary_entropy,
    make_named_state,
    measure,
    partial_trace,
    relative_entropy,
    tensor_states,
    von_neumann_entropy,
)

__version__ = "0.1.0"

from entaudit.accounting import (
    EntropyProfile,
    ExtractionSolution,
    MatchingCertificate,
    match_singlets_3party,
    profile_of,
    singlet_matching_lp,
    solve_ghz_singlet_rates,
)
from entaudit.audit import (
    AuditReport,
    AuditRow,
    REECache,
    audit_protocol,
    fuzz_audit_batch,
    run_with_audits,
)
from entaudit.engine import (
    Protocol,
    ProtocolStep,
    RunResult,
    random_protocol,
    run,
)
from entaudit.protocols import (
    concentration_distribution,
    expected_yield_bits,
    ghz3_to_bc_singlet,
    ghz_roundtrip,
    two_singlets_to_ghz,
)
from entaudit.ree import (
    Partition,
    REEConfig,
    REEResult,
    SeparableModel,
    donald_identity_residual,
    ree,
)

__all__ = [
    "AuditReport",
    "AuditRow",
    "DensityMatrix",
    "Ensemble",
    "EntropyProfile",
    "ExtractionSolution",
    "MatchingCertificate",
    "Partition",
    "PartyLayout",
    "ProjectiveMeasurement",
    "Protocol",
    "ProtocolStep",
    "PureState",
    "REECache",
    "REEConfig",
    "REEResult",
    "RunResult",
    "SeparableModel",
    "apply_local_unitary",
    "attach_ancilla",
    "audit_protocol",
    "binary_entropy",
    "concentration_distribution",
    "donald_identity_residual",
    "expected_yield_bits",
    "fuzz_audit_batch",
    "ghz3_to_bc_singlet",
    "ghz_roundtrip",
    "make_named_state",
    "match_singlets_3party",
    "measure",
    "partial_trace",
    "profile_of",
    "random_protocol",
    "ree",
    "relative_entropy",
    "run",
    "run_with_audits",
    "singlet_matching_lp",
    "solve_ghz_singlet_rates",
    "tensor_states",
    "two_singlets_to_ghz",
    "von_neumann_entropy",
]
