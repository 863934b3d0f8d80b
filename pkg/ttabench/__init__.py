__version__ = '1.0.0'

from .errors import TTABenchError, ValidationError, BundleFormatError, UnknownMethodError, ModeMismatch  # noqa
from .errors import USAGE_ERROR_EXIT_CODE, RUNTIME_ERROR_EXIT_CODE  # noqa
from .exceptions import ImproperlyConfigured  # noqa

from .bundle import EmbeddingBundle, SampleRecord, SynthSpec, generate_synthetic, load_bundle, save_bundle  # noqa
from .scoring import ScoringRule  # noqa
from .tags import MethodTag, Mode  # noqa
from .harness import BenchHarness, ExperimentSpec, run_episodic, run_online, run_ood_detection  # noqa
