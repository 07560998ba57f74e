# Services module
from .problem_builder import ProblemBuilder
from .scattering_service import ScatteringService
from .msw_service import MswService
from .verification_service import VerificationService
from .dwms_processor import DwmsProcessor

__all__ = ['ProblemBuilder', 'ScatteringService', 'MswService', 'VerificationService', 'DwmsProcessor']
