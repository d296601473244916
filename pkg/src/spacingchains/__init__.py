"""Spacing chains of one-dimensional Gibbs point processes.

Transfer-operator discretisation, chain samplers, regeneration by
splitting, Monte Carlo renewal measures and covariance decay estimators.
"""

from .errors import (CertificateError, ConfigError, ConvergenceError, DomainError,
                     InconsistencyError, InfeasibleDensityError, InsufficientDataError,
                     SearchFailure, SpacingError)
from .models import (HarmonicParams, PairPotential, harmonic_derive, make_hard_rod,
                     make_potential, make_square_well, make_tabulated, potential_from_config,
                     v_total)
from .transfer import (GridSpec, QuadratureGrid, TransitionModel, assemble_kernel,
                       build_transition, exp_moment_growth_bound, gauss_legendre_grid,
                       gibbs_free_energy, gibbs_model, harmonic_model, mean_spacing,
                       principal_eigen, solve_pressure)
from .chains import (GridSampler, HarmonicSampler, IIDSampler, RenewalLaw, SpacingPath,
                     sample_gibbs_path, sample_harmonic_path, sample_renewal_path)
from .regeneration import (MinorisationCert, RegenerationRecord, embedded_walk_stats,
                           find_minorisation, simulate_split, tau_tail_diagnostics)
from .renewal import DecayFit, RenewalEstimate, blackwell_gap, estimate_renewal, fit_decay
from .correlations import (CovarianceCurve, fit_covariance_decay, growth_rate_alpha,
                           second_moment_ergodic, second_moment_palm)

__version__ = "0.1.0"
