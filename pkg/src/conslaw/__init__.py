"""Discrete exterior calculus engine for a general conservation law.

The split law is an 8x8 block operator acting on eight field slots of a
staggered cubical grid; Maxwell, Schrodinger and small-strain elasticity are
instances of it, advanced with an explicit staggered leapfrog.
"""

__version__ = "0.1.0"

from .cochain import (  # noqa: E402
    FIELD_SLOTS,
    SOURCE_SLOTS,
    Cochain,
    GeneralField,
    SourceField,
    field_arithmetic,
    project_function,
    zero_field,
    zero_source,
)
from .core import (  # noqa: E402
    BlockOperator,
    Residual,
    assemble_block_operator,
    derive_split_pattern,
    evaluate_residual,
    finite_difference,
    load_golden_pattern,
    verify_4d_decomposition,
)
from .grid import CubicalComplex, build_complex, exterior_derivative, spacetime_split  # noqa: E402
from .hodge import HodgeMap, LameMaterial, MaterialField, apply_hodge, build_hodge, double_hodge_sign, energy  # noqa: E402
from .models import (  # noqa: E402
    ModelSpec,
    elasticity_spec,
    instantiate,
    maxwell_spec,
    row_map,
    schrodinger_spec,
    vector_proxy_table,
    yang_mills_spec,
)
from .timestep import (  # noqa: E402
    DivergedError,
    SimulationState,
    SteppingPlan,
    cfl_bound,
    initial_state,
    make_plan,
    run,
    step,
)
