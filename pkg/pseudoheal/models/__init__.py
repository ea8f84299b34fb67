"""
models/__init__.py

In-memory records shared across the package.
"""

from .bundle import ModelBundle
from .panel import Panel
from .report import METRICS, MetricReport
from .sample import DOMAIN_TAGS, SPLITS, Dataset, Label, PhantomSample
