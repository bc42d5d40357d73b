"""Particle solver and diagnostics for the relativistic Vlasov equation with
instantaneous (Poisson / Biot-Savart) self-consistent fields.

    x' = vhat,  v' = E + vhat x B,  vhat = v / sqrt(1 + |v|^2),
    E = sE K * rho,  B = sB K x* J,  K(x) = x / (4 pi |x|^3).
"""
from .errors import (BlowUpError, ConfigError, InvalidInputError, NumericalFailure,
                     OutOfDomainError, RelVlasovError, SingularityError, ValidationError)
from .kernels import (MollifierShape, MollifierSpec, coulomb_kernel, hat_velocity,
                      mollified_kernel, mollified_potential, newton_potential)
from .phase_space import (DepositGrid, Ensemble, GridSpec, InitialProfile, PhaseGrid,
                          SamplingMode, deposit, lp_norm, sample_ensemble)
from .fields import eval_fields_direct, eval_potential_grid, grid_fields
from .dynamics import (FieldConfig, FieldHistory, IntegratorConfig, Scheme, flow, backtrace,
                       evaluate_f, flow_jacobian, picard_solve, run_coupled)

__version__ = "0.1.0"
