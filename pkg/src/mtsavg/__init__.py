"""Multi-time-scale averaging for conservative linear flows.

Implements interval averaging of i dc/dt = beta A(t) c with hermitian
A(t): block averages, piecewise propagators, iterated peel-off, the
near-identity normal form that reduces the coupling to beta^(3/2), a
high-accuracy reference integrator, and a scaling-law sweep harness.
"""

__version__ = "0.1.0"

from ._kernels import USING_NUMBA
from .averaging import (AveragingConfig, HierarchyLevel,
                        PiecewiseConstantGenerator, PiecewisePropagator,
                        block_average, build_hierarchy, build_level0,
                        build_propagator, global_average, integrated_generator,
                        peel_step, residual_integral, solve_averaged)
from .generators import (ConstantGenerator, DecayProfile, PeeledGenerator,
                         QuasiperiodicGenerator, QuasiperiodicTerm,
                         ScalarDrivenGenerator, SplitConfig,
                         analytic_block_average, load_generator,
                         save_generator, split_frequencies)
from .matcore import (NumericDomainError, hermitian_exp, hermiticity_defect,
                      spectral_norm, unitarity_defect)
from .normalform import (AFFINE, UNITARY, EffectiveSystem, NormalFormMap,
                         apply_normal_form, build_normal_form, compose_step,
                         effective_generator, iterate_scheme)
from .oracle import (OracleConfig, OracleError, evolve, evolve_fixed_step,
                     evolve_state, recover_generator)
